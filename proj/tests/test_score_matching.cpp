#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "esi/correntropy.hpp"
#include "esi/errors.hpp"
#include "esi/rng.hpp"
#include "esi/score_matching.hpp"
#include "oracles.hpp"

namespace {

Eigen::VectorXd gaussian_sample(int n, double sigma, std::uint64_t seed) {
  esi::Rng rng(seed);
  Eigen::VectorXd e(n);
  for (int i = 0; i < n; ++i) e[i] = sigma * rng.normal();
  return e;
}

Eigen::VectorXd contaminated_sample(int n, double sigma, double rho, double kappa,
                                    std::uint64_t seed) {
  esi::Rng rng(seed);
  Eigen::VectorXd e(n);
  for (int i = 0; i < n; ++i) {
    const double scale = rng.uniform() < rho ? std::sqrt(kappa) : 1.0;
    e[i] = sigma * scale * rng.normal();
  }
  return e;
}

// upper median of the squared entries, matching the fit's convention
double median_sq(const Eigen::VectorXd& e) {
  std::vector<double> q(e.data(), e.data() + e.size());
  for (double& v : q) v *= v;
  std::sort(q.begin(), q.end());
  return q[q.size() / 2];
}

// the fit minimizes over the config box intersected with the bandwidth floor;
// an oracle for it must score points outside that region as infeasible
auto feasible_hscore(const Eigen::VectorXd& e, const esi::ScoreMatchConfig& cfg) {
  const double floor_bw = cfg.bandwidth_floor * median_sq(e);
  return [&e, cfg, floor_bw](double h, double eta) {
    if (h < cfg.h_min || h > cfg.h_max || eta < cfg.eta_min || eta > cfg.eta_max ||
        h / eta < floor_bw)
      return std::numeric_limits<double>::infinity();
    return esi::empirical_hscore(e, {h, eta});
  };
}

}  // namespace

TEST_CASE("gaussian data recovers the precision") {
  const Eigen::VectorXd e = gaussian_sample(20000, 2.0, 5);
  const esi::ScoreMatchResult r = esi::fit_score_matching(e);
  CHECK(r.converged);
  // for h -> inf the density tends to N(0, 1/eta)
  CHECK(r.params.eta == doctest::Approx(0.25).epsilon(0.1));
  CHECK(r.params.h >= 1e2);
  // objective for a Gaussian approaches -eta (H at the true parameters)
  CHECK(r.objective < 0.0);
}

TEST_CASE("fitted objective beats a refining grid search") {
  esi::ScoreMatchConfig cfg;
  for (const std::uint64_t seed : {11ULL, 12ULL, 13ULL}) {
    const Eigen::VectorXd e = contaminated_sample(500, 1.0, 0.1, 100.0, seed);
    const esi::ScoreMatchResult r = esi::fit_score_matching(e, cfg);
    const auto objective = feasible_hscore(e, cfg);
    const auto [gh, geta] = oracles::grid_minimize_log2d(objective, cfg.h_min, cfg.h_max,
                                                         cfg.eta_min, cfg.eta_max);
    const double grid_best = objective(gh, geta);
    CHECK(r.objective <= grid_best + 1e-6 * (1.0 + std::abs(grid_best)));
  }
}

TEST_CASE("bandwidth floor blocks kernel collapse") {
  // a short heavy-tailed sample rewards shrinking the kernel onto a few
  // points; the floor keeps the bandwidth at sample scale
  const Eigen::VectorXd e = contaminated_sample(100, 1.0, 0.1, 100.0, 91);
  esi::ScoreMatchConfig cfg;
  const esi::ScoreMatchResult r = esi::fit_score_matching(e, cfg);
  const double med = median_sq(e);
  CHECK(r.params.h / r.params.eta >= cfg.bandwidth_floor * med * (1.0 - 1e-12));

  esi::ScoreMatchConfig open = cfg;
  open.bandwidth_floor = 0.0;
  const esi::ScoreMatchResult ro = esi::fit_score_matching(e, open);
  // without the floor the optimizer is free to go narrower, never worse
  CHECK(ro.objective <= r.objective + 1e-9 * (1.0 + std::abs(r.objective)));
}

TEST_CASE("contamination shrinks the fitted h") {
  // heavier tails pull h down from the Gaussian plateau
  const Eigen::VectorXd clean = gaussian_sample(20000, 1.0, 21);
  const Eigen::VectorXd dirty = contaminated_sample(20000, 1.0, 0.1, 100.0, 21);
  const auto rc = esi::fit_score_matching(clean);
  const auto rd = esi::fit_score_matching(dirty);
  CHECK(rd.params.h < rc.params.h);
  CHECK(rd.params.kernel_bandwidth() < 1e4);
}

TEST_CASE("trace is monotone non-increasing") {
  const Eigen::VectorXd e = contaminated_sample(300, 0.5, 0.2, 50.0, 31);
  const esi::ScoreMatchResult r = esi::fit_score_matching(e);
  REQUIRE(r.trace.size() >= 1);
  for (std::size_t i = 1; i < r.trace.size(); ++i)
    CHECK(r.trace[i] <= r.trace[i - 1] + 1e-12 * (1.0 + std::abs(r.trace[i - 1])));
  CHECK(r.objective == doctest::Approx(r.trace.back()).epsilon(1e-15));
}

TEST_CASE("bounds are respected") {
  esi::ScoreMatchConfig cfg;
  cfg.h_min = 0.5;
  cfg.h_max = 20.0;
  cfg.eta_min = 0.05;
  cfg.eta_max = 3.0;
  const Eigen::VectorXd e = gaussian_sample(2000, 0.2, 8);  // wants large eta
  const esi::ScoreMatchResult r = esi::fit_score_matching(e, cfg);
  CHECK(r.params.h >= cfg.h_min);
  CHECK(r.params.h <= cfg.h_max);
  CHECK(r.params.eta >= cfg.eta_min);
  CHECK(r.params.eta <= cfg.eta_max);
  CHECK(r.params.eta == doctest::Approx(cfg.eta_max).epsilon(1e-9));
}

TEST_CASE("explicit starting points override the grid") {
  const Eigen::VectorXd e = gaussian_sample(500, 1.0, 14);
  esi::ScoreMatchConfig cfg;
  cfg.init_grid = {{1.0, 1.0}};
  const esi::ScoreMatchResult r = esi::fit_score_matching(e, cfg);
  CHECK(r.converged);
  esi::ScoreMatchConfig defaults;
  const esi::ScoreMatchResult rd = esi::fit_score_matching(e, defaults);
  // single start can only do as well as the full grid
  CHECK(rd.objective <= r.objective + 1e-9 * (1.0 + std::abs(r.objective)));
}

TEST_CASE("row batch fits each channel") {
  esi::Rng rng(77);
  Eigen::MatrixXd resid(5, 400);
  for (int m = 0; m < 5; ++m) {
    const double sigma = 0.5 + 0.5 * m;
    for (int t = 0; t < 400; ++t) resid(m, t) = sigma * rng.normal();
  }
  const auto rows = esi::fit_rows_serial(resid);
  REQUIRE(rows.size() == 5);
  for (int m = 0; m < 5; ++m) {
    const auto single = esi::fit_score_matching(resid.row(m).transpose());
    CHECK(rows[std::size_t(m)].params.h == single.params.h);
    CHECK(rows[std::size_t(m)].params.eta == single.params.eta);
    CHECK(rows[std::size_t(m)].objective == single.objective);
  }
  // larger sigma means smaller fitted precision
  CHECK(rows[4].params.eta < rows[0].params.eta);
}

TEST_CASE("degenerate and invalid inputs") {
  Eigen::VectorXd constant = Eigen::VectorXd::Zero(100);
  CHECK_THROWS_AS(esi::fit_score_matching(constant), esi::InputError);
  Eigen::VectorXd single(1);
  single << 1.0;
  CHECK_THROWS_AS(esi::fit_score_matching(single), esi::InputError);
  esi::ScoreMatchConfig bad;
  bad.h_min = 10.0;
  bad.h_max = 1.0;
  CHECK_THROWS_AS(esi::fit_score_matching(gaussian_sample(10, 1.0, 1), bad),
                  esi::InputError);
  esi::ScoreMatchConfig bad2;
  bad2.rel_tol = -1.0;
  CHECK_THROWS_AS(esi::fit_score_matching(gaussian_sample(10, 1.0, 1), bad2),
                  esi::InputError);
  esi::ScoreMatchConfig bad3;
  bad3.bandwidth_floor = -0.5;
  CHECK_THROWS_AS(esi::fit_score_matching(gaussian_sample(10, 1.0, 1), bad3),
                  esi::InputError);
}
