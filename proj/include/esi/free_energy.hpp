#pragma once

#include <Eigen/Dense>

#include "esi/hvb.hpp"

namespace esi {

// E[log a_n] under Gamma(shape gamma_bar, mean a_bar_n)
double expected_log_precision(double gamma_bar, double a_bar_n);

// -E[log p(J|A)] - E[log p(A)] - H[Q_A]; e_j2_row_sums holds sum over time of
// E[J^2] per source; gamma0 = 0 selects the improper 1/a prior
double prior_and_gamma_free_energy(const Eigen::VectorXd& e_j2_row_sums,
                                   Eigen::Index samples, const GammaPosterior& gp,
                                   double gamma0, const Eigen::VectorXd& a0);

// -H[Q_J] for `samples` Gaussians whose log-determinants of the posterior
// precision sum to sum_logdet_h
double gaussian_entropy_term(Eigen::Index sources, Eigen::Index samples,
                             double sum_logdet_h);

}  // namespace esi
