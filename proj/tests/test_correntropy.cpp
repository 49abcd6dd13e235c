#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "esi/correntropy.hpp"
#include "esi/errors.hpp"
#include "esi/rng.hpp"
#include "oracles.hpp"

using esi::CorrentropyParams;

TEST_CASE("frozen point values") {
  // [DERIVED] mpmath, 30 digits: h*expm1(-eta*e^2/(2h)) and derivatives
  CHECK(esi::log_density(1.0, {1.0, 1.0}) ==
        doctest::Approx(-0.39346934028736658).epsilon(1e-15));
  CHECK(esi::score(1.0, {1.0, 1.0}) ==
        doctest::Approx(-0.60653065971263342).epsilon(1e-15));
  CHECK(esi::score_derivative(1.0, {2.0, 1.0}) ==
        doctest::Approx(-0.38940039153570243).epsilon(1e-15));
  CHECK(esi::hscore(1.0, {1.0, 1.0}) ==
        doctest::Approx(0.36787944117144232).epsilon(1e-15));
  // H(0) = -2*eta exactly
  CHECK(esi::hscore(0.0, {3.0, 2.0}) == -4.0);
  CHECK(esi::log_density(0.0, {5.0, 0.7}) == 0.0);
}

TEST_CASE("gaussian limit keeps precision at large h") {
  // for eta*e^2/(2h) small, log C = -eta*e^2/2 + eta^2*e^4/(8h) - ...
  const CorrentropyParams p{1e6, 2.0};
  double worst = 0.0;
  for (int i = 0; i <= 2000; ++i) {
    const double e = -5.0 + 10.0 * i / 2000.0;
    worst = std::max(worst, std::abs(esi::log_density(e, p) + 0.5 * p.eta * e * e));
  }
  // leading correction eta^2 * sup e^4 / (8h)
  CHECK(worst <= p.eta * p.eta * 625.0 / (8.0 * p.h) * (1.0 + 1e-9));
  CHECK(esi::log_density(1.0, p) == doctest::Approx(-1.0).epsilon(1e-6));
  // naive exp(x)-1 would lose the value entirely at extreme h
  const CorrentropyParams extreme{1e14, 2.0};
  CHECK(esi::log_density(1e-3, extreme) ==
        doctest::Approx(-0.5 * 2.0 * 1e-6).epsilon(1e-9));
}

TEST_CASE("derivatives match finite differences") {
  esi::Rng rng(91);
  for (int trial = 0; trial < 200; ++trial) {
    const CorrentropyParams p{std::exp(rng.uniform(-2.0, 6.0)),
                              std::exp(rng.uniform(-3.0, 3.0))};
    const double e = rng.uniform(-4.0, 4.0);
    const double fd_score =
        oracles::fd_derivative([&](double x) { return esi::log_density(x, p); }, e);
    const double fd_curv =
        oracles::fd_derivative([&](double x) { return esi::score(x, p); }, e);
    CHECK(esi::score(e, p) == doctest::Approx(fd_score).epsilon(1e-6));
    CHECK(esi::score_derivative(e, p) == doctest::Approx(fd_curv).epsilon(1e-6));
    CHECK(esi::hscore(e, p) ==
          doctest::Approx(2.0 * esi::score_derivative(e, p) +
                          esi::score(e, p) * esi::score(e, p))
              .epsilon(1e-14));
  }
}

TEST_CASE("score tails vanish, quadratic score does not") {
  const CorrentropyParams p{2.0, 1.5};
  CHECK(std::abs(esi::score(50.0, p)) < 1e-100);
  CHECK(std::abs(esi::score(-50.0, p)) < 1e-100);
  // redescending: |score| peaks near sqrt(h/eta) then decays
  const double at_peak = std::abs(esi::score(std::sqrt(p.h / p.eta), p));
  CHECK(std::abs(esi::score(10.0 * std::sqrt(p.h / p.eta), p)) < at_peak);
}

TEST_CASE("empirical hscore averages pointwise values") {
  Eigen::VectorXd e(2);
  e << 0.0, 1.0;
  // [DERIVED] (-2 + exp(-1))/2
  CHECK(esi::empirical_hscore(e, {1.0, 1.0}) ==
        doctest::Approx(-0.81606027941427884).epsilon(1e-15));

  esi::Rng rng(7);
  Eigen::VectorXd sample(257);
  for (Eigen::Index i = 0; i < sample.size(); ++i) sample[i] = rng.normal();
  const CorrentropyParams p{3.0, 0.8};
  double mean = 0.0;
  for (Eigen::Index i = 0; i < sample.size(); ++i) mean += esi::hscore(sample[i], p);
  mean /= double(sample.size());
  CHECK(esi::empirical_hscore(sample, p) == doctest::Approx(mean).epsilon(1e-13));
}

TEST_CASE("parameter and sample validation") {
  CHECK_THROWS_AS(CorrentropyParams(0.0, 1.0), esi::InputError);
  CHECK_THROWS_AS(CorrentropyParams(-1.0, 1.0), esi::InputError);
  CHECK_THROWS_AS(CorrentropyParams(1.0, 0.0), esi::InputError);
  CHECK_THROWS_AS(CorrentropyParams(std::numeric_limits<double>::quiet_NaN(), 1.0),
                  esi::InputError);
  Eigen::VectorXd one(1);
  one << 0.5;
  CHECK_THROWS_AS(esi::validate_residual_sample(one), esi::InputError);
  Eigen::VectorXd bad(3);
  bad << 0.0, std::numeric_limits<double>::infinity(), 1.0;
  CHECK_THROWS_AS(esi::validate_residual_sample(bad), esi::InputError);
}
