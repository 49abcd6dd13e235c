#include "esi/correntropy.hpp"

#include <cmath>

#include "esi/errors.hpp"

namespace esi {

namespace {

void require_finite(double e) {
  if (!std::isfinite(e)) throw InputError("residual must be finite");
}

}  // namespace

CorrentropyParams::CorrentropyParams(double h_, double eta_) : h(h_), eta(eta_) {
  if (!(std::isfinite(h) && h > 0.0)) throw InputError("h must be positive and finite");
  if (!(std::isfinite(eta) && eta > 0.0)) throw InputError("eta must be positive and finite");
}

double log_density(double e, const CorrentropyParams& p) {
  require_finite(e);
  // h*exp(-u) - h as h*expm1(-u): exact cancellation handling near e = 0,
  // which is what keeps the Gaussian-limit error at the O(eta^2 e^4 / h) term
  const double u = p.eta * e * e / (2.0 * p.h);
  return p.h * std::expm1(-u);
}

double score(double e, const CorrentropyParams& p) {
  require_finite(e);
  const double u = p.eta * e * e / (2.0 * p.h);
  return -p.eta * e * std::exp(-u);
}

double score_derivative(double e, const CorrentropyParams& p) {
  require_finite(e);
  const double u = p.eta * e * e / (2.0 * p.h);
  return (p.eta * p.eta * e * e / p.h - p.eta) * std::exp(-u);
}

double hscore(double e, const CorrentropyParams& p) {
  require_finite(e);
  const double u = p.eta * e * e / (2.0 * p.h);
  const double w = std::exp(-u);
  const double second = (p.eta * p.eta * e * e / p.h - p.eta) * w;
  const double first = -p.eta * e * w;
  return 2.0 * second + first * first;
}

void validate_residual_sample(const Eigen::VectorXd& sample) {
  if (sample.size() < 2) throw InputError("residual sample needs at least 2 values");
  if (!sample.allFinite()) throw InputError("residual sample must be finite");
}

double empirical_hscore(const Eigen::VectorXd& sample, const CorrentropyParams& p) {
  validate_residual_sample(sample);
  const Eigen::ArrayXd e2 = sample.array().square();
  const Eigen::ArrayXd w = (-(p.eta / (2.0 * p.h)) * e2).exp();
  const Eigen::ArrayXd second = (p.eta * p.eta / p.h * e2 - p.eta) * w;
  const Eigen::ArrayXd first = -p.eta * sample.array() * w;
  return (2.0 * second + first.square()).mean();
}

}  // namespace esi
