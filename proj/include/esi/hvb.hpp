#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

namespace esi {

struct HvbConfig {
  // prior confidence: supply exactly one of gamma0 (>= 0) or
  // prior_weight w = gamma0/(gamma0 + T/2) in [0, 1)
  std::optional<double> gamma0;
  std::optional<double> prior_weight;
  Eigen::VectorXd a0;      // prior mean precisions, empty means all ones
  Eigen::MatrixXd phi;     // normalized noise precision, Tr = M; empty means identity
  int max_iters = 200;
  double rel_tol = 1e-8;
  double a_max = 1e12;     // precision clamp for silent sources
  std::optional<double> fixed_beta;  // hold beta fixed instead of updating it

  void validate(Eigen::Index sensors, Eigen::Index sources) const;
  double resolve_gamma0(Eigen::Index samples) const;
};

struct GammaPosterior {
  Eigen::VectorXd a_bar;   // posterior mean precisions
  double gamma_bar = 0.0;  // gamma0 + T/2
};

struct HvbState {
  Eigen::MatrixXd j_hat;     // N x T
  GammaPosterior gamma_post;
  double beta_bar = 0.0;
  Eigen::MatrixXd cov_diag;  // N x T posterior covariance diagonals
  bool converged = false;
  int iters = 0;
  std::vector<double> objective_trace;  // free energy per outer iteration
};

HvbState hvb_fit(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g, const HvbConfig& cfg);

// one Gaussian J-step: every column solves (G^T beta Phi G + diag(a_bar)) j =
// G^T beta Phi b_t; cov_diag is the inverse-system diagonal (shared across t)
void hvb_j_step(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g,
                const Eigen::VectorXd& a_bar, double beta_bar, const Eigen::MatrixXd& phi,
                Eigen::MatrixXd& j_hat, Eigen::VectorXd& cov_diag);

// a_bar_n = 1 / (w/a0_n + (1-w) * mean_t e_j2(n, t)), clamped at a_max;
// gamma_bar = gamma0 + T/2
GammaPosterior hvb_a_step(const Eigen::MatrixXd& e_j2, const HvbConfig& cfg);

// beta = M*T / sum_t E[(b_t - G j_t)^T Phi (b_t - G j_t)]; the expectation's
// trace term is recovered from the covariance diagonal of the J-step system
// built with (a_bar_used, beta_used)
double hvb_beta_step(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g,
                     const Eigen::MatrixXd& j_hat, const Eigen::VectorXd& cov_diag,
                     const Eigen::VectorXd& a_bar_used, double beta_used,
                     const Eigen::MatrixXd& phi);

Eigen::MatrixXd residuals(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g,
                          const Eigen::MatrixXd& j_hat);

}  // namespace esi
