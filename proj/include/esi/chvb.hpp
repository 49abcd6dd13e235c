#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "esi/correntropy.hpp"
#include "esi/hvb.hpp"
#include "esi/score_matching.hpp"

namespace esi {

enum class HessianMode { gauss_newton, full_clamped };

struct ChvbConfig {
  // prior fields (gamma0/prior_weight, a0, a_max), Phi, and the warm-start
  // solver settings; the A-step shares these prior fields exactly
  HvbConfig warm_start;
  int fixed_point_max_iters = 200;
  double fixed_point_tol = 1e-8;
  int outer_max_iters = 500;
  double outer_rel_tol = 1e-6;
  ScoreMatchConfig score_match;
  HessianMode hessian_mode = HessianMode::gauss_newton;
  // per-channel (h, eta) to use instead of fitting them from the residuals
  std::optional<std::vector<CorrentropyParams>> preset_channel_params;

  void validate(Eigen::Index sensors, Eigen::Index sources) const;
};

struct ChvbState {
  Eigen::MatrixXd j_hat;     // N x T, columns are the Laplace modes
  GammaPosterior gamma_post;
  std::vector<CorrentropyParams> channel_params;  // length M
  Eigen::MatrixXd e_j2;      // N x T expected squared sources
  Eigen::MatrixXd cov_diag;  // N x T Laplace covariance diagonals
  bool converged = false;
  int iters = 0;             // accepted outer iterations
  std::vector<double> objective_trace;
};

struct FixedPointResult {
  Eigen::VectorXd j;
  int iters = 0;
  bool stationary = false;  // tolerance met (as opposed to cap or safeguard stop)
};

// per-column objective maximized by the J-step:
// sum_m log C(e_m | h_m, eta_m) - (1/2) j^T diag(a_bar) j with e = b_t - G j
double j_step_objective(const Eigen::VectorXd& b_t, const Eigen::MatrixXd& g,
                        const Eigen::VectorXd& a_bar,
                        const std::vector<CorrentropyParams>& params,
                        const Eigen::VectorXd& j);

// iterate j <- (G^T Psi(j) G + diag(a_bar))^{-1} G^T Psi(j) b_t with
// Psi_mm = eta_m * exp(-eta_m e_m^2 / (2 h_m)); a step that lowers the
// objective is halved toward the previous iterate (up to 20 times) and the
// iteration stops at the best iterate if no improvement remains
FixedPointResult j_step_fixed_point(const Eigen::VectorXd& b_t, const Eigen::MatrixXd& g,
                                    const Eigen::VectorXd& a_bar,
                                    const std::vector<CorrentropyParams>& params,
                                    const Eigen::VectorXd& j_init, int max_iters,
                                    double tol);

// diagonal of (G^T D G + diag(a_bar))^{-1}; gauss_newton takes D = Psi, while
// full_clamped takes the analytic second derivative clamped at zero
Eigen::VectorXd laplace_covariance_diag(const Eigen::VectorXd& j_star,
                                        const Eigen::VectorXd& b_t, const Eigen::MatrixXd& g,
                                        const Eigen::VectorXd& a_bar,
                                        const std::vector<CorrentropyParams>& params,
                                        HessianMode mode, double* logdet_h = nullptr);

Eigen::VectorXd expected_squared_source(const Eigen::VectorXd& j_star,
                                        const Eigen::VectorXd& cov_diag);

// one sweep of per-column J-step + Laplace covariance over all time points
struct TimeStepBatch {
  Eigen::MatrixXd j;         // N x T
  Eigen::MatrixXd cov_diag;  // N x T
  Eigen::VectorXd logdet_h;  // length T
  std::vector<int> fp_iters;
  std::vector<std::uint8_t> stationary;
};

TimeStepBatch chvb_time_steps_serial(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g,
                                     const Eigen::VectorXd& a_bar,
                                     const std::vector<CorrentropyParams>& params,
                                     const Eigen::MatrixXd& j_init, HessianMode mode,
                                     int fp_max_iters, double fp_tol);

// OpenMP variant of chvb_time_steps_serial; bit-identical output
TimeStepBatch chvb_time_steps(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g,
                              const Eigen::VectorXd& a_bar,
                              const std::vector<CorrentropyParams>& params,
                              const Eigen::MatrixXd& j_init, HessianMode mode,
                              int fp_max_iters, double fp_tol);

// monitoring statistic: mode-approximated likelihood term plus the prior and
// entropy terms, with the Laplace precisions rebuilt from the state
double chvb_surrogate_free_energy(const ChvbState& state, const Eigen::MatrixXd& b,
                                  const Eigen::MatrixXd& g, const ChvbConfig& cfg);

ChvbState chvb_fit(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g, const ChvbConfig& cfg);

// variant reusing an already computed warm start (must match b, g, cfg.warm_start)
ChvbState chvb_fit(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g, const ChvbConfig& cfg,
                   const HvbState& warm);

}  // namespace esi
