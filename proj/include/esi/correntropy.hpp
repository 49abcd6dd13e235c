#pragma once

#include <Eigen/Dense>

namespace esi {

// parameters of the improper density log C(e) = h*(exp(-eta*e^2/(2h)) - 1)
struct CorrentropyParams {
  double h;
  double eta;

  CorrentropyParams(double h_, double eta_);

  // equivalent kernel bandwidth h_c = h/eta
  double kernel_bandwidth() const { return h / eta; }
};

double log_density(double e, const CorrentropyParams& p);

// d/de log C
double score(double e, const CorrentropyParams& p);

// d^2/de^2 log C
double score_derivative(double e, const CorrentropyParams& p);

// H(e) = 2 * d^2/de^2 log C + (d/de log C)^2
double hscore(double e, const CorrentropyParams& p);

// throws InputError unless sample has >= 2 entries, all finite
void validate_residual_sample(const Eigen::VectorXd& sample);

// mean of hscore over the sample
double empirical_hscore(const Eigen::VectorXd& sample, const CorrentropyParams& p);

}  // namespace esi
