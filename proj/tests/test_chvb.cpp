#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "esi/chvb.hpp"
#include "esi/errors.hpp"
#include "esi/forward_sim.hpp"
#include "esi/hvb.hpp"
#include "esi/metrics.hpp"
#include "esi/rng.hpp"

namespace {

struct Instance {
  Eigen::MatrixXd g;
  esi::SourceGroundTruth truth;
  Eigen::MatrixXd b;
};

Instance make_instance(int m, int n, int t, int k, double snr, std::uint64_t seed,
                       bool mixture = true) {
  Instance inst;
  inst.g = esi::make_leadfield(m, n, esi::derive_seed(seed, 1));
  inst.truth = esi::make_sources(n, t, k, esi::derive_seed(seed, 2));
  const Eigen::MatrixXd clean = esi::forward_project(inst.g, inst.truth);
  esi::NoiseModel nm;
  if (mixture) nm.family = esi::NoiseFamily::gaussian_mixture;
  auto [b, e] = esi::inject_noise(clean, nm, snr, esi::derive_seed(seed, 3));
  inst.b = b;
  return inst;
}

}  // namespace

TEST_CASE("objective evaluates the penalized log density") {
  Eigen::MatrixXd g(2, 3);
  g << 1.0, 0.0, 0.5, 0.0, 1.0, -0.5;
  Eigen::VectorXd b_t(2), j(3), a_bar(3);
  b_t << 1.0, -0.5;
  j << 0.2, -0.1, 0.3;
  a_bar << 1.0, 2.0, 0.5;
  const std::vector<esi::CorrentropyParams> params = {{2.0, 1.5}, {3.0, 0.7}};
  const Eigen::VectorXd e = b_t - g * j;
  double expected = 0.0;
  for (int m = 0; m < 2; ++m) expected += esi::log_density(e[m], params[std::size_t(m)]);
  expected -= 0.5 * j.dot(a_bar.asDiagonal() * j);
  CHECK(esi::j_step_objective(b_t, g, a_bar, params, j) ==
        doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("huge h reduces the j step to the gaussian solution") {
  const Instance inst = make_instance(10, 30, 6, 4, 5.0, 2, false);
  esi::Rng rng(3);
  Eigen::VectorXd a_bar(30);
  for (int i = 0; i < 30; ++i) a_bar[i] = std::exp(rng.uniform(-1.0, 2.0));
  const double beta = 4.2;
  const std::vector<esi::CorrentropyParams> params(10, {1e8, beta});

  const Eigen::MatrixXd a =
      beta * inst.g.transpose() * inst.g + Eigen::MatrixXd(a_bar.asDiagonal());
  const Eigen::MatrixXd ridge = a.ldlt().solve(beta * inst.g.transpose() * inst.b);
  for (int t = 0; t < 6; ++t) {
    const auto fp = esi::j_step_fixed_point(inst.b.col(t), inst.g, a_bar, params,
                                            Eigen::VectorXd::Zero(30), 200, 1e-12);
    CHECK(fp.stationary);
    CHECK((fp.j - ridge.col(t)).norm() <= 1e-6 * (1.0 + ridge.col(t).norm()));
  }
}

TEST_CASE("scalar fixed point matches a dense grid argmax") {
  // one source, four channels, moderate bandwidth keeps the problem unimodal
  Eigen::MatrixXd g(4, 1);
  g << 0.9, -0.6, 0.4, 0.8;
  Eigen::VectorXd b_t(4);
  b_t << 1.1, -0.9, 0.2, 1.4;
  Eigen::VectorXd a_bar(1);
  a_bar << 0.7;
  const std::vector<esi::CorrentropyParams> params = {
      {50.0, 1.2}, {30.0, 0.8}, {80.0, 2.0}, {40.0, 1.0}};

  double best_j = 0.0, best_val = -1e300;
  for (int i = 0; i <= 600000; ++i) {
    const double j = -3.0 + 6.0 * i / 600000.0;
    Eigen::VectorXd jv(1);
    jv << j;
    const double v = esi::j_step_objective(b_t, g, a_bar, params, jv);
    if (v > best_val) {
      best_val = v;
      best_j = j;
    }
  }
  const auto fp = esi::j_step_fixed_point(b_t, g, a_bar, params,
                                          Eigen::VectorXd::Zero(1), 500, 1e-12);
  CHECK(fp.j[0] == doctest::Approx(best_j).epsilon(1e-4));
  CHECK(fp.stationary);
}

TEST_CASE("fixed point never lowers the objective") {
  const Instance inst = make_instance(12, 36, 5, 4, 0.0, 7);
  esi::Rng rng(8);
  Eigen::VectorXd a_bar(36);
  for (int i = 0; i < 36; ++i) a_bar[i] = std::exp(rng.uniform(0.0, 3.0));
  std::vector<esi::CorrentropyParams> params;
  for (int m = 0; m < 12; ++m)
    params.push_back({std::exp(rng.uniform(0.0, 4.0)), std::exp(rng.uniform(-1.0, 1.0))});
  for (int t = 0; t < 5; ++t) {
    const Eigen::VectorXd init = Eigen::VectorXd::Zero(36);
    const auto fp = esi::j_step_fixed_point(inst.b.col(t), inst.g, a_bar, params, init,
                                            100, 1e-10);
    CHECK(esi::j_step_objective(inst.b.col(t), inst.g, a_bar, params, fp.j) >=
          esi::j_step_objective(inst.b.col(t), inst.g, a_bar, params, init) - 1e-12);
  }
}

TEST_CASE("laplace covariance matches the dense inverse") {
  const Instance inst = make_instance(9, 27, 4, 3, 5.0, 11);
  esi::Rng rng(12);
  Eigen::VectorXd a_bar(27);
  for (int i = 0; i < 27; ++i) a_bar[i] = std::exp(rng.uniform(-1.0, 2.0));
  std::vector<esi::CorrentropyParams> params;
  for (int m = 0; m < 9; ++m) params.push_back({20.0 + m, 1.0 + 0.1 * m});
  const auto fp = esi::j_step_fixed_point(inst.b.col(0), inst.g, a_bar, params,
                                          Eigen::VectorXd::Zero(27), 100, 1e-10);

  double logdet = 0.0;
  const Eigen::VectorXd diag = esi::laplace_covariance_diag(
      fp.j, inst.b.col(0), inst.g, a_bar, params, esi::HessianMode::gauss_newton, &logdet);

  const Eigen::VectorXd e = inst.b.col(0) - inst.g * fp.j;
  Eigen::VectorXd psi(9);
  for (int m = 0; m < 9; ++m) {
    const auto& p = params[std::size_t(m)];
    psi[m] = p.eta * std::exp(-p.eta * e[m] * e[m] / (2.0 * p.h));
  }
  const Eigen::MatrixXd h = inst.g.transpose() * psi.asDiagonal() * inst.g +
                            Eigen::MatrixXd(a_bar.asDiagonal());
  const Eigen::MatrixXd h_inv = h.inverse();
  for (int i = 0; i < 27; ++i)
    CHECK(diag[i] == doctest::Approx(h_inv(i, i)).epsilon(1e-8));
  CHECK(logdet == doctest::Approx(std::log(h.determinant())).epsilon(1e-8));

  // clamped full hessian keeps a positive diagonal even with large residuals
  const Eigen::VectorXd diag_full = esi::laplace_covariance_diag(
      fp.j, inst.b.col(0), inst.g, a_bar, params, esi::HessianMode::full_clamped);
  CHECK((diag_full.array() > 0.0).all());
}

TEST_CASE("expected squared source adds the covariance") {
  Eigen::VectorXd j(3), cov(3);
  j << 1.0, -2.0, 0.5;
  cov << 0.1, 0.2, 0.3;
  const Eigen::VectorXd e2 = esi::expected_squared_source(j, cov);
  CHECK(e2[0] == doctest::Approx(1.1).epsilon(1e-15));
  CHECK(e2[1] == doctest::Approx(4.2).epsilon(1e-15));
  CHECK(e2[2] == doctest::Approx(0.55).epsilon(1e-15));
}

TEST_CASE("time step batch equals per-column calls") {
  const Instance inst = make_instance(8, 20, 7, 3, 0.0, 17);
  esi::Rng rng(18);
  Eigen::VectorXd a_bar(20);
  for (int i = 0; i < 20; ++i) a_bar[i] = std::exp(rng.uniform(0.0, 2.0));
  std::vector<esi::CorrentropyParams> params;
  for (int m = 0; m < 8; ++m) params.push_back({15.0, 1.3});
  const Eigen::MatrixXd j_init = Eigen::MatrixXd::Zero(20, 7);

  const auto batch = esi::chvb_time_steps_serial(inst.b, inst.g, a_bar, params, j_init,
                                                 esi::HessianMode::gauss_newton, 80, 1e-9);
  REQUIRE(batch.j.cols() == 7);
  REQUIRE(batch.fp_iters.size() == 7);
  for (int t = 0; t < 7; ++t) {
    const auto fp = esi::j_step_fixed_point(inst.b.col(t), inst.g, a_bar, params,
                                            j_init.col(t), 80, 1e-9);
    CHECK((batch.j.col(t) - fp.j).norm() == 0.0);
    CHECK(batch.fp_iters[std::size_t(t)] == fp.iters);
    double logdet = 0.0;
    const Eigen::VectorXd diag = esi::laplace_covariance_diag(
        fp.j, inst.b.col(t), inst.g, a_bar, params, esi::HessianMode::gauss_newton,
        &logdet);
    CHECK((batch.cov_diag.col(t) - diag).norm() == 0.0);
    CHECK(batch.logdet_h[t] == logdet);
  }
}

TEST_CASE("surrogate trace is monotone across seeds") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Instance inst = make_instance(10, 30, 8, 3, 0.0, 300 + seed);
    esi::ChvbConfig cfg;
    cfg.warm_start.prior_weight = 0.0;
    cfg.warm_start.max_iters = 40;
    cfg.outer_max_iters = 60;
    const esi::ChvbState st = esi::chvb_fit(inst.b, inst.g, cfg);
    REQUIRE(st.objective_trace.size() >= 1);
    for (std::size_t i = 1; i < st.objective_trace.size(); ++i) {
      const double prev = st.objective_trace[i - 1];
      CHECK(st.objective_trace[i] <= prev + 1e-8 * (1.0 + std::abs(prev)));
    }
    CHECK(st.iters == int(st.objective_trace.size()));
  }
}

TEST_CASE("fit state is complete and reuses a warm start") {
  const Instance inst = make_instance(12, 40, 10, 4, 5.0, 23);
  esi::ChvbConfig cfg;
  cfg.warm_start.prior_weight = 0.0;
  const esi::HvbState warm = esi::hvb_fit(inst.b, inst.g, cfg.warm_start);
  const esi::ChvbState st = esi::chvb_fit(inst.b, inst.g, cfg, warm);
  const esi::ChvbState direct = esi::chvb_fit(inst.b, inst.g, cfg);
  CHECK((st.j_hat - direct.j_hat).norm() == 0.0);
  CHECK(st.channel_params.size() == 12);
  CHECK(st.j_hat.rows() == 40);
  CHECK(st.j_hat.cols() == 10);
  CHECK((st.cov_diag.array() > 0.0).all());
  CHECK((st.e_j2.array() >=
         (st.j_hat.array().square() + st.cov_diag.array()) - 1e-12)
            .all());
  CHECK((st.e_j2.array() <=
         (st.j_hat.array().square() + st.cov_diag.array()) + 1e-12)
            .all());
  CHECK(st.gamma_post.a_bar.size() == 40);
}

TEST_CASE("preset channel parameters skip the residual fit") {
  const Instance inst = make_instance(8, 20, 6, 3, 5.0, 29);
  esi::ChvbConfig cfg;
  cfg.warm_start.prior_weight = 0.0;
  cfg.preset_channel_params = std::vector<esi::CorrentropyParams>(8, {7.0, 2.5});
  const esi::ChvbState st = esi::chvb_fit(inst.b, inst.g, cfg);
  REQUIRE(st.channel_params.size() == 8);
  for (const auto& p : st.channel_params) {
    CHECK(p.h == 7.0);
    CHECK(p.eta == 2.5);
  }
  // wrong length is rejected
  esi::ChvbConfig bad = cfg;
  bad.preset_channel_params = std::vector<esi::CorrentropyParams>(5, {7.0, 2.5});
  CHECK_THROWS_AS(esi::chvb_fit(inst.b, inst.g, bad), esi::InputError);
}

TEST_CASE("robust solver beats the gaussian baseline under contamination") {
  const Instance inst = make_instance(16, 60, 20, 6, 0.0, 37);
  esi::HvbConfig hcfg;
  hcfg.prior_weight = 0.0;
  const esi::HvbState hst = esi::hvb_fit(inst.b, inst.g, hcfg);
  esi::ChvbConfig ccfg;
  ccfg.warm_start.prior_weight = 0.0;
  const esi::ChvbState cst = esi::chvb_fit(inst.b, inst.g, ccfg);
  const auto ev_h =
      esi::metrics::evaluate(hst.j_hat, inst.truth.j_star, inst.truth.active_indices);
  const auto ev_c =
      esi::metrics::evaluate(cst.j_hat, inst.truth.j_star, inst.truth.active_indices);
  CHECK(ev_c.aggregate > ev_h.aggregate);
  CHECK(ev_c.rmse < ev_h.rmse);
}

TEST_CASE("configuration validation") {
  const Instance inst = make_instance(6, 15, 4, 2, 5.0, 41);
  esi::ChvbConfig cfg;
  cfg.warm_start.prior_weight = 0.0;
  esi::ChvbConfig bad = cfg;
  bad.fixed_point_max_iters = 0;
  CHECK_THROWS_AS(esi::chvb_fit(inst.b, inst.g, bad), esi::InputError);
  bad = cfg;
  bad.outer_rel_tol = 0.0;
  CHECK_THROWS_AS(esi::chvb_fit(inst.b, inst.g, bad), esi::InputError);
  bad = cfg;
  bad.warm_start.gamma0 = 1.0;  // both prior fields set
  CHECK_THROWS_AS(esi::chvb_fit(inst.b, inst.g, bad), esi::InputError);
}
