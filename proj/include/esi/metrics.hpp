#pragma once

#include <Eigen/Dense>
#include <vector>

namespace esi::metrics {

struct EvalReport {
  double aggregate = 0.0;  // (s_corr + t_corr)/2
  double s_corr = 0.0;
  double t_corr = 0.0;
  double rmse = 0.0;
  Eigen::VectorXd per_time_scorr;    // length T
  Eigen::VectorXd per_source_tcorr;  // length K, ordered as active_indices
};

// sqrt(mean squared entrywise difference)
double rmse(const Eigen::MatrixXd& j_hat, const Eigen::MatrixXd& j_star);

// mean over time of Pearson correlation between |j_hat_t| and |j_star_t|;
// a degenerate time point (either column constant) contributes 0 but is
// counted; throws if every time point is degenerate
double spatial_corr(const Eigen::MatrixXd& j_hat, const Eigen::MatrixXd& j_star,
                    Eigen::VectorXd* per_time = nullptr);

// mean over active rows of signed Pearson correlation between the rows of
// j_hat and j_star; a degenerate estimated row contributes 0
double temporal_corr(const Eigen::MatrixXd& j_hat, const Eigen::MatrixXd& j_star,
                     const std::vector<int>& active_indices,
                     Eigen::VectorXd* per_source = nullptr);

// 10*log10 of channel-averaged variance ratio; channel-average = mean over
// rows of per-row (population) variance
double snr_db(const Eigen::MatrixXd& signal, const Eigen::MatrixXd& noise);

struct PairedCompare {
  double t_stat = 0.0;
  double p_value = 1.0;
  double mean_diff = 0.0;
};

// paired t-test of a vs b (differences a - b), two-sided p with n-1 dof
PairedCompare paired_compare(const Eigen::VectorXd& values_a, const Eigen::VectorXd& values_b);

EvalReport evaluate(const Eigen::MatrixXd& j_hat, const Eigen::MatrixXd& j_star,
                    const std::vector<int>& active_indices);

}  // namespace esi::metrics
