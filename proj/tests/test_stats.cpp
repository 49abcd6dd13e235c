#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "esi/errors.hpp"
#include "esi/rng.hpp"
#include "esi/stats.hpp"
#include "oracles.hpp"

TEST_CASE("digamma frozen values") {
  // [DERIVED] mpmath, 30 digits
  CHECK(esi::stats::digamma(1.0) == doctest::Approx(-0.57721566490153286).epsilon(1e-13));
  CHECK(esi::stats::digamma(0.5) == doctest::Approx(-1.9635100260214235).epsilon(1e-13));
  CHECK(esi::stats::digamma(5.0) == doctest::Approx(1.5061176684318005).epsilon(1e-13));
  CHECK(esi::stats::digamma(0.05) == doctest::Approx(-20.497844991299870).epsilon(1e-13));
  CHECK_THROWS_AS(esi::stats::digamma(0.0), esi::InputError);
  CHECK_THROWS_AS(esi::stats::digamma(-2.0), esi::InputError);
}

TEST_CASE("digamma recurrence consistency") {
  // psi(x+1) = psi(x) + 1/x
  for (double x : {0.1, 0.73, 1.9, 3.4, 11.0}) {
    CHECK(esi::stats::digamma(x + 1.0) ==
          doctest::Approx(esi::stats::digamma(x) + 1.0 / x).epsilon(1e-13));
  }
}

TEST_CASE("incomplete beta frozen values") {
  // [DERIVED] mpmath regularized betainc
  CHECK(esi::stats::incbeta(2.0, 5.0, 0.3) == doctest::Approx(0.579825).epsilon(1e-12));
  CHECK(esi::stats::incbeta(4.5, 1.25, 0.7) ==
        doctest::Approx(0.26829077286076211).epsilon(1e-12));
  CHECK(esi::stats::incbeta(2.0, 3.0, 0.0) == 0.0);
  CHECK(esi::stats::incbeta(2.0, 3.0, 1.0) == 1.0);
  // complement identity I_x(a,b) + I_{1-x}(b,a) = 1
  CHECK(esi::stats::incbeta(3.2, 0.7, 0.45) + esi::stats::incbeta(0.7, 3.2, 0.55) ==
        doctest::Approx(1.0).epsilon(1e-13));
  CHECK_THROWS_AS(esi::stats::incbeta(2.0, 3.0, 1.5), esi::InputError);
  CHECK_THROWS_AS(esi::stats::incbeta(-1.0, 3.0, 0.5), esi::InputError);
}

TEST_CASE("student t two-sided p frozen values") {
  // [DERIVED] mpmath: p = I_{d/(d+t^2)}(d/2, 1/2)
  CHECK(esi::stats::student_t_two_sided_p(2.3, 7.0) ==
        doctest::Approx(0.054991095204371562).epsilon(1e-12));
  CHECK(esi::stats::student_t_two_sided_p(-0.75, 19.0) ==
        doctest::Approx(0.46244152200089566).epsilon(1e-12));
  CHECK(esi::stats::student_t_two_sided_p(6.5, 49.0) ==
        doctest::Approx(3.9494762902932151e-8).epsilon(1e-12));
  CHECK(esi::stats::student_t_two_sided_p(0.0, 12.0) == 1.0);
}

TEST_CASE("student t p agrees with quadrature") {
  esi::Rng rng(55);
  for (int trial = 0; trial < 12; ++trial) {
    const double t = rng.uniform(-4.0, 4.0);
    const double dof = 2.0 + 40.0 * rng.uniform();
    const double p = esi::stats::student_t_two_sided_p(t, dof);
    const double ref = oracles::t_two_sided_p_quadrature(t, dof);
    CHECK(p == doctest::Approx(ref).epsilon(1e-9));
    CHECK(p == esi::stats::student_t_two_sided_p(-t, dof));
  }
}
