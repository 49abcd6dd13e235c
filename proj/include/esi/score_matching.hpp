#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "esi/correntropy.hpp"

namespace esi {

struct ScoreMatchConfig {
  int max_iters = 10000;
  double rel_tol = 1e-10;
  double h_min = 1e-2;
  double h_max = 1e8;
  double eta_min = 1e-8;
  double eta_max = 1e8;
  // lower clamp on the kernel bandwidth h/eta, as a fraction of the sample's
  // median squared value: the empirical H-score is unbounded below as the
  // kernel shrinks onto the few nearest sample points, so fits narrower than
  // this are degenerate rather than robust; 0 disables the clamp
  double bandwidth_floor = 1.0;
  // starting points (h, eta); empty means the variance-scaled default grid
  // {0.5, 5, 50, 500} x {0.1/v, 1/v, 10/v} with v the sample variance
  std::vector<std::pair<double, double>> init_grid;

  void validate() const;
};

struct ScoreMatchResult {
  CorrentropyParams params{1.0, 1.0};
  double objective = 0.0;   // empirical H-score at params
  bool converged = false;   // every started run met rel_tol before max_iters
  int iters = 0;            // outer iterations of the winning run
  std::vector<double> trace;  // objective per outer iteration of the winning run
};

// minimizes the empirical H-score over (h, eta) by alternating coordinate
// descent in (log h, log eta), best result over all grid starts
ScoreMatchResult fit_score_matching(const Eigen::VectorXd& sample,
                                    const ScoreMatchConfig& cfg = {});

// one fit per row of residuals (channels x samples); serial reference
std::vector<ScoreMatchResult> fit_rows_serial(const Eigen::MatrixXd& residuals,
                                              const ScoreMatchConfig& cfg = {});

// OpenMP variant of fit_rows_serial; bit-identical results, rows are independent
std::vector<ScoreMatchResult> fit_rows(const Eigen::MatrixXd& residuals,
                                       const ScoreMatchConfig& cfg = {});

}  // namespace esi
