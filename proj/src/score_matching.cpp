#include "esi/score_matching.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <limits>
#include <vector>

#include "esi/errors.hpp"
#include "esi/parallel.hpp"

namespace esi {

void ScoreMatchConfig::validate() const {
  if (max_iters <= 0) throw InputError("max_iters must be positive");
  if (!(rel_tol > 0.0)) throw InputError("rel_tol must be positive");
  if (!(h_min > 0.0 && h_min < h_max)) throw InputError("need 0 < h_min < h_max");
  if (!(eta_min > 0.0 && eta_min < eta_max)) throw InputError("need 0 < eta_min < eta_max");
  if (!(bandwidth_floor >= 0.0) || !std::isfinite(bandwidth_floor))
    throw InputError("bandwidth_floor must be finite and non-negative");
  for (const auto& [h0, eta0] : init_grid)
    if (!(std::isfinite(h0) && h0 > 0.0 && std::isfinite(eta0) && eta0 > 0.0))
      throw InputError("init_grid entries must be positive and finite");
}

namespace {

// empirical H-score and its gradient in (log h, log eta), sharing one exp pass
struct Objective {
  explicit Objective(const Eigen::VectorXd& sample) : q(sample.array().square()) {}

  double value(double log_h, double log_eta) const {
    const double h = std::exp(log_h);
    const double eta = std::exp(log_eta);
    const Eigen::ArrayXd w = (-(eta / (2.0 * h)) * q).exp();
    return (2.0 * ((eta * eta / h) * q - eta) * w + eta * eta * q * w.square()).mean();
  }

  // H = 2*(eta^2 q/h - eta)*W + eta^2 q W^2, W = exp(-u), u = eta q/(2h);
  // d/dlog h  = W*(-2 eta^2 q/h + 2 eta (eta q/h - 1) u) + 2 eta^2 q u W^2
  // d/dlog eta= W*(2 eta (2 eta q/h - 1) - 2 eta (eta q/h - 1) u) + 2 eta^2 q (1-u) W^2
  void gradient(double log_h, double log_eta, double& g_h, double& g_eta) const {
    const double h = std::exp(log_h);
    const double eta = std::exp(log_eta);
    const Eigen::ArrayXd u = (eta / (2.0 * h)) * q;
    const Eigen::ArrayXd w = (-u).exp();
    const Eigen::ArrayXd w2 = w.square();
    const Eigen::ArrayXd qh = (eta / h) * q;  // eta q / h = 2u
    g_h = (w * (-2.0 * eta * qh + 2.0 * eta * (qh - 1.0) * u) + 2.0 * eta * eta * q * u * w2)
              .mean();
    g_eta = (w * (2.0 * eta * (2.0 * qh - 1.0) - 2.0 * eta * (qh - 1.0) * u) +
             2.0 * eta * eta * q * (1.0 - u) * w2)
                .mean();
  }

  Eigen::ArrayXd q;
};

struct RunOutcome {
  double log_h, log_eta, objective;
  bool converged;
  int iters;
  std::vector<double> trace;
};

// alternating coordinate descent: signed step along each log-coordinate with
// backtracking halving, step doubling after a first-try acceptance; log_b is
// the log bandwidth floor, enforced as log h - log eta >= log_b (-inf: none)
RunOutcome run_from(const Objective& obj, double h0, double eta0, double log_b,
                    const ScoreMatchConfig& cfg) {
  constexpr double kStepInit = 0.5;
  constexpr double kStepMax = 4.0;
  constexpr double kStepMin = 1e-12;

  const double lo[2] = {std::log(cfg.h_min), std::log(cfg.eta_min)};
  const double hi[2] = {std::log(cfg.h_max), std::log(cfg.eta_max)};
  double x[2];
  x[1] = std::clamp(std::log(eta0), lo[1], std::min(hi[1], hi[0] - log_b));
  x[0] = std::clamp(std::log(h0), std::max(lo[0], log_b + x[1]), hi[0]);
  double step[2] = {kStepInit, kStepInit};

  RunOutcome out;
  out.converged = false;
  out.iters = 0;
  double f = obj.value(x[0], x[1]);
  out.trace.push_back(f);

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    const double f_start = f;
    bool moved = false;
    for (int c = 0; c < 2; ++c) {
      double g[2];
      obj.gradient(x[0], x[1], g[0], g[1]);
      if (g[c] == 0.0) continue;
      const double dir = g[c] > 0.0 ? -1.0 : 1.0;
      // the floor couples the coordinates: moving h is bounded below by
      // log_b + log eta, moving eta is bounded above by log h - log_b
      const double eff_lo = c == 0 ? std::max(lo[0], log_b + x[1]) : lo[1];
      const double eff_hi = c == 0 ? hi[0] : std::min(hi[1], x[0] - log_b);
      double s = step[c];
      bool first_try = true;
      while (s >= kStepMin) {
        const double cand = std::clamp(x[c] + dir * s, eff_lo, eff_hi);
        if (cand != x[c]) {
          double xc[2] = {x[0], x[1]};
          xc[c] = cand;
          const double fc = obj.value(xc[0], xc[1]);
          if (fc < f) {
            x[c] = cand;
            f = fc;
            moved = true;
            if (first_try) step[c] = std::min(step[c] * 2.0, kStepMax);
            break;
          }
        }
        s *= 0.5;
        first_try = false;
      }
      if (!first_try) step[c] = std::max(s, kStepMin);
    }
    out.iters = iter + 1;
    out.trace.push_back(f);
    if (!moved || f_start - f <= cfg.rel_tol * (1.0 + std::fabs(f))) {
      out.converged = true;
      break;
    }
  }
  out.log_h = x[0];
  out.log_eta = x[1];
  out.objective = f;
  return out;
}

// absolute floor on h/eta in log space: log(bandwidth_floor * median(e^2));
// -inf when disabled or when the median squared value vanishes
double log_bandwidth_floor(const Eigen::VectorXd& sample, const ScoreMatchConfig& cfg) {
  if (!(cfg.bandwidth_floor > 0.0)) return -std::numeric_limits<double>::infinity();
  std::vector<double> q(sample.data(), sample.data() + sample.size());
  for (double& v : q) v *= v;
  const auto mid = q.begin() + std::ptrdiff_t(q.size() / 2);
  std::nth_element(q.begin(), mid, q.end());
  if (!(*mid > 0.0)) return -std::numeric_limits<double>::infinity();
  const double floor = cfg.bandwidth_floor * *mid;
  if (!(floor <= cfg.h_max / cfg.eta_min))
    throw InputError("bandwidth floor exceeds the reachable h/eta range");
  return std::log(floor);
}

std::vector<std::pair<double, double>> default_grid(const Eigen::VectorXd& sample) {
  const double mean = sample.mean();
  const double var = (sample.array() - mean).square().sum() / double(sample.size() - 1);
  if (!(var > 0.0)) throw InputError("score matching needs a sample with non-zero variance");
  std::vector<std::pair<double, double>> grid;
  for (const double h0 : {0.5, 5.0, 50.0, 500.0})
    for (const double scale : {0.1, 1.0, 10.0}) grid.emplace_back(h0, scale / var);
  return grid;
}

}  // namespace

ScoreMatchResult fit_score_matching(const Eigen::VectorXd& sample, const ScoreMatchConfig& cfg) {
  cfg.validate();
  validate_residual_sample(sample);
  const auto grid = cfg.init_grid.empty() ? default_grid(sample) : cfg.init_grid;

  const Objective obj(sample);
  const double log_b = log_bandwidth_floor(sample, cfg);
  ScoreMatchResult best;
  best.objective = std::numeric_limits<double>::infinity();
  bool all_converged = true;
  for (const auto& [h0, eta0] : grid) {
    RunOutcome run = run_from(obj, h0, eta0, log_b, cfg);
    all_converged = all_converged && run.converged;
    if (run.objective < best.objective) {
      best.params = CorrentropyParams(std::exp(run.log_h), std::exp(run.log_eta));
      best.objective = run.objective;
      best.iters = run.iters;
      best.trace = std::move(run.trace);
    }
  }
  best.converged = all_converged;
  return best;
}

std::vector<ScoreMatchResult> fit_rows_serial(const Eigen::MatrixXd& residuals,
                                              const ScoreMatchConfig& cfg) {
  std::vector<ScoreMatchResult> out(std::size_t(residuals.rows()));
  for (Eigen::Index m = 0; m < residuals.rows(); ++m)
    out[std::size_t(m)] = fit_score_matching(residuals.row(m).transpose(), cfg);
  return out;
}

std::vector<ScoreMatchResult> fit_rows(const Eigen::MatrixXd& residuals,
                                       const ScoreMatchConfig& cfg) {
  if (!parallel_enabled()) return fit_rows_serial(residuals, cfg);
  std::vector<ScoreMatchResult> out(std::size_t(residuals.rows()));
  const Eigen::Index rows = residuals.rows();
  std::exception_ptr error;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(thread_count())
#endif
  for (Eigen::Index m = 0; m < rows; ++m) {
    try {
      out[std::size_t(m)] = fit_score_matching(residuals.row(m).transpose(), cfg);
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

}  // namespace esi
