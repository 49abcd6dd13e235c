#include <benchmark/benchmark.h>

#include <Eigen/Dense>
#include <vector>

#include "esi/chvb.hpp"
#include "esi/forward_sim.hpp"
#include "esi/hvb.hpp"
#include "esi/score_matching.hpp"

namespace {

struct Fixture {
  Eigen::MatrixXd g;
  Eigen::MatrixXd b;
  Eigen::MatrixXd resid;
  Eigen::MatrixXd j_init;
  Eigen::VectorXd a_bar;
  std::vector<esi::CorrentropyParams> params;

  Fixture() {
    const int sensors = 32, sources = 200, samples = 48, active = 12;
    g = esi::make_leadfield(sensors, sources, 11);
    const auto truth = esi::make_sources(sources, samples, active, 12);
    const Eigen::MatrixXd clean = esi::forward_project(g, truth);
    esi::NoiseModel nm;
    nm.family = esi::NoiseFamily::gaussian_mixture;
    auto [obs, noise] = esi::inject_noise(clean, nm, 5.0, 13);
    b = obs;
    esi::HvbConfig warm_cfg;
    warm_cfg.prior_weight = 0.0;
    warm_cfg.max_iters = 20;
    const esi::HvbState warm = esi::hvb_fit(b, g, warm_cfg);
    resid = esi::residuals(b, g, warm.j_hat);
    j_init = warm.j_hat;
    a_bar = warm.gamma_post.a_bar;
    const auto fits = esi::fit_rows(resid);
    params.reserve(fits.size());
    for (const auto& f : fits) params.push_back(f.params);
  }
};

const Fixture& fixture() {
  static const Fixture fx;
  return fx;
}

void bm_score_match_rows_serial(benchmark::State& state) {
  const Fixture& fx = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(esi::fit_rows_serial(fx.resid));
}

void bm_score_match_rows_parallel(benchmark::State& state) {
  const Fixture& fx = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(esi::fit_rows(fx.resid));
}

void bm_time_steps_serial(benchmark::State& state) {
  const Fixture& fx = fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(esi::chvb_time_steps_serial(fx.b, fx.g, fx.a_bar, fx.params,
                                                         fx.j_init,
                                                         esi::HessianMode::gauss_newton,
                                                         50, 1e-8));
}

void bm_time_steps_parallel(benchmark::State& state) {
  const Fixture& fx = fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(esi::chvb_time_steps(fx.b, fx.g, fx.a_bar, fx.params,
                                                  fx.j_init,
                                                  esi::HessianMode::gauss_newton,
                                                  50, 1e-8));
}

}  // namespace

BENCHMARK(bm_score_match_rows_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_score_match_rows_parallel)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_time_steps_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_time_steps_parallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
