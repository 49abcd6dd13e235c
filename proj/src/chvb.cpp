#include "esi/chvb.hpp"

#include <cmath>
#include <exception>
#include <string>
#include <utility>

#include "esi/errors.hpp"
#include "esi/forward_sim.hpp"
#include "esi/free_energy.hpp"
#include "esi/linalg.hpp"
#include "esi/parallel.hpp"

namespace esi {

namespace {

template <class Fn>
auto stage(const char* label, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const InputError& e) {
    throw InputError(std::string(label) + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(label) + ": " + e.what());
  }
}

void check_params(const std::vector<CorrentropyParams>& params, Eigen::Index sensors) {
  if (Eigen::Index(params.size()) != sensors)
    throw InputError("need one (h, eta) pair per channel");
}

// diagonal fixed-point weights Psi_mm = eta_m * exp(-eta_m e_m^2 / (2 h_m))
Eigen::VectorXd psi_weights(const Eigen::VectorXd& e,
                            const std::vector<CorrentropyParams>& params) {
  Eigen::VectorXd psi(e.size());
  for (Eigen::Index m = 0; m < e.size(); ++m) {
    const auto& p = params[std::size_t(m)];
    psi[m] = p.eta * std::exp(-p.eta * e[m] * e[m] / (2.0 * p.h));
  }
  return psi;
}

}  // namespace

void ChvbConfig::validate(Eigen::Index sensors, Eigen::Index sources) const {
  warm_start.validate(sensors, sources);
  if (fixed_point_max_iters < 1 || outer_max_iters < 1)
    throw InputError("iteration caps must be at least 1");
  if (!(fixed_point_tol > 0.0) || !(outer_rel_tol > 0.0))
    throw InputError("tolerances must be positive");
  score_match.validate();
  if (preset_channel_params) check_params(*preset_channel_params, sensors);
}

double j_step_objective(const Eigen::VectorXd& b_t, const Eigen::MatrixXd& g,
                        const Eigen::VectorXd& a_bar,
                        const std::vector<CorrentropyParams>& params,
                        const Eigen::VectorXd& j) {
  const Eigen::VectorXd e = b_t - g * j;
  double val = 0.0;
  for (Eigen::Index m = 0; m < e.size(); ++m) {
    const auto& p = params[std::size_t(m)];
    val += p.h * std::expm1(-p.eta * e[m] * e[m] / (2.0 * p.h));
  }
  return val - 0.5 * j.dot(a_bar.cwiseProduct(j));
}

namespace {

// objective evaluated from an already-known residual e = b_t - G j
double objective_at_residual(const Eigen::VectorXd& e, const Eigen::VectorXd& a_bar,
                             const std::vector<CorrentropyParams>& params,
                             const Eigen::VectorXd& j) {
  double val = 0.0;
  for (Eigen::Index m = 0; m < e.size(); ++m) {
    const auto& p = params[std::size_t(m)];
    val += p.h * std::expm1(-p.eta * e[m] * e[m] / (2.0 * p.h));
  }
  return val - 0.5 * j.dot(a_bar.cwiseProduct(j));
}

// body of the fixed-point J-step against a prebuilt reweighted solver, so the
// per-outer-iteration Gram G D^{-1} G^T is shared across time steps. Residuals
// are tracked through the cached Gram (G lift(w) = project(w)), so the only
// M x N product per call is the initial one; residual_out, when given,
// receives b_t - G j at the returned iterate.
FixedPointResult j_step_fixed_point_with(const linalg::ReweightedGramSolver& base,
                                         const Eigen::VectorXd& b_t, const Eigen::MatrixXd& g,
                                         const Eigen::VectorXd& a_bar,
                                         const std::vector<CorrentropyParams>& params,
                                         const Eigen::VectorXd& j_init, int max_iters,
                                         double tol, Eigen::VectorXd* residual_out = nullptr) {
  FixedPointResult out;
  out.j = j_init;
  Eigen::VectorXd pred = g * out.j;
  Eigen::VectorXd e = b_t - pred;
  double obj = objective_at_residual(e, a_bar, params, out.j);
  for (int it = 1; it <= max_iters; ++it) {
    const Eigen::VectorXd w = base.factor(psi_weights(e, params)).dual_weights(b_t);
    Eigen::VectorXd cand = base.lift(w);
    Eigen::VectorXd cand_pred = base.project(w);
    Eigen::VectorXd cand_e = b_t - cand_pred;
    double cand_obj = objective_at_residual(cand_e, a_bar, params, cand);
    // safeguard: the fixed point can overshoot; bisect toward the previous
    // iterate until the objective stops decreasing
    int halvings = 0;
    while (cand_obj < obj && halvings < 20) {
      cand = 0.5 * (cand + out.j);
      cand_pred = 0.5 * (cand_pred + pred);
      cand_e = b_t - cand_pred;
      cand_obj = objective_at_residual(cand_e, a_bar, params, cand);
      ++halvings;
    }
    if (cand_obj < obj) {
      out.iters = it;  // no improving point left; keep the best iterate
      break;
    }
    const bool done = (cand - out.j).norm() <= tol * (1.0 + out.j.norm());
    out.j = std::move(cand);
    pred = std::move(cand_pred);
    e = std::move(cand_e);
    obj = cand_obj;
    out.iters = it;
    if (done) {
      out.stationary = true;
      break;
    }
  }
  if (residual_out) *residual_out = std::move(e);
  return out;
}

// Laplace curvature weights against a prebuilt reweighted solver, from the
// residual e = b_t - G j_star at the expansion point
Eigen::VectorXd laplace_covariance_diag_with(const linalg::ReweightedGramSolver& base,
                                             const Eigen::VectorXd& e,
                                             const std::vector<CorrentropyParams>& params,
                                             HessianMode mode, double* logdet_h) {
  Eigen::VectorXd d(e.size());
  for (Eigen::Index m = 0; m < e.size(); ++m) {
    const auto& p = params[std::size_t(m)];
    const double e2 = e[m] * e[m];
    const double w = std::exp(-p.eta * e2 / (2.0 * p.h));
    if (mode == HessianMode::gauss_newton)
      d[m] = p.eta * w;
    else
      d[m] = std::max(0.0, (p.eta - p.eta * p.eta * e2 / p.h) * w);
  }
  const auto f = base.factor(d);
  if (logdet_h) *logdet_h = f.logdet();
  static thread_local Eigen::MatrixXd workspace;
  return f.covariance_diag(workspace);
}

}  // namespace

FixedPointResult j_step_fixed_point(const Eigen::VectorXd& b_t, const Eigen::MatrixXd& g,
                                    const Eigen::VectorXd& a_bar,
                                    const std::vector<CorrentropyParams>& params,
                                    const Eigen::VectorXd& j_init, int max_iters,
                                    double tol) {
  check_params(params, g.rows());
  if (b_t.size() != g.rows() || a_bar.size() != g.cols() || j_init.size() != g.cols())
    throw InputError("J-step dimension mismatch");
  const linalg::ReweightedGramSolver base(g, a_bar);
  return j_step_fixed_point_with(base, b_t, g, a_bar, params, j_init, max_iters, tol);
}

Eigen::VectorXd laplace_covariance_diag(const Eigen::VectorXd& j_star,
                                        const Eigen::VectorXd& b_t, const Eigen::MatrixXd& g,
                                        const Eigen::VectorXd& a_bar,
                                        const std::vector<CorrentropyParams>& params,
                                        HessianMode mode, double* logdet_h) {
  check_params(params, g.rows());
  if (b_t.size() != g.rows() || a_bar.size() != g.cols() || j_star.size() != g.cols())
    throw InputError("Laplace dimension mismatch");
  const linalg::ReweightedGramSolver base(g, a_bar);
  return laplace_covariance_diag_with(base, b_t - g * j_star, params, mode, logdet_h);
}

Eigen::VectorXd expected_squared_source(const Eigen::VectorXd& j_star,
                                        const Eigen::VectorXd& cov_diag) {
  if (j_star.size() != cov_diag.size()) throw InputError("length mismatch");
  if ((cov_diag.array() < 0.0).any())
    throw InputError("covariance diagonal must be non-negative");
  return j_star.array().square().matrix() + cov_diag;
}

namespace {

void time_step_one(const linalg::ReweightedGramSolver& base, Eigen::Index t,
                   const Eigen::MatrixXd& b, const Eigen::MatrixXd& g,
                   const Eigen::VectorXd& a_bar, const std::vector<CorrentropyParams>& params,
                   const Eigen::MatrixXd& j_init, HessianMode mode, int fp_max_iters,
                   double fp_tol, TimeStepBatch& out) {
  Eigen::VectorXd resid;
  const FixedPointResult r = j_step_fixed_point_with(base, b.col(t), g, a_bar, params,
                                                     j_init.col(t), fp_max_iters, fp_tol, &resid);
  double logdet = 0.0;
  out.cov_diag.col(t) = laplace_covariance_diag_with(base, resid, params, mode, &logdet);
  out.j.col(t) = r.j;
  out.logdet_h[t] = logdet;
  out.fp_iters[std::size_t(t)] = r.iters;
  out.stationary[std::size_t(t)] = r.stationary ? 1 : 0;
}

TimeStepBatch make_batch(Eigen::Index n, Eigen::Index t_count) {
  TimeStepBatch batch;
  batch.j.resize(n, t_count);
  batch.cov_diag.resize(n, t_count);
  batch.logdet_h.resize(t_count);
  batch.fp_iters.assign(std::size_t(t_count), 0);
  batch.stationary.assign(std::size_t(t_count), 0);
  return batch;
}

}  // namespace

TimeStepBatch chvb_time_steps_serial(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g,
                                     const Eigen::VectorXd& a_bar,
                                     const std::vector<CorrentropyParams>& params,
                                     const Eigen::MatrixXd& j_init, HessianMode mode,
                                     int fp_max_iters, double fp_tol) {
  TimeStepBatch batch = make_batch(g.cols(), b.cols());
  const linalg::ReweightedGramSolver base(g, a_bar);
  for (Eigen::Index t = 0; t < b.cols(); ++t)
    time_step_one(base, t, b, g, a_bar, params, j_init, mode, fp_max_iters, fp_tol, batch);
  return batch;
}

TimeStepBatch chvb_time_steps(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g,
                              const Eigen::VectorXd& a_bar,
                              const std::vector<CorrentropyParams>& params,
                              const Eigen::MatrixXd& j_init, HessianMode mode,
                              int fp_max_iters, double fp_tol) {
  if (!parallel_enabled())
    return chvb_time_steps_serial(b, g, a_bar, params, j_init, mode, fp_max_iters, fp_tol);
  TimeStepBatch batch = make_batch(g.cols(), b.cols());
  const linalg::ReweightedGramSolver base(g, a_bar);
  const Eigen::Index t_count = b.cols();
  std::exception_ptr error;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(thread_count())
#endif
  for (Eigen::Index t = 0; t < t_count; ++t) {
    try {
      time_step_one(base, t, b, g, a_bar, params, j_init, mode, fp_max_iters, fp_tol,
                    batch);
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return batch;
}

namespace {

double correntropy_term(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g,
                        const Eigen::MatrixXd& j_hat,
                        const std::vector<CorrentropyParams>& params) {
  const Eigen::MatrixXd e = b - g * j_hat;
  double term = 0.0;
  for (Eigen::Index m = 0; m < e.rows(); ++m) {
    const auto& p = params[std::size_t(m)];
    term -= p.h *
            ((-(p.eta / (2.0 * p.h)) * e.row(m).array().square()).expm1()).sum();
  }
  return term;
}

struct OuterEvaluation {
  TimeStepBatch batch;
  Eigen::MatrixXd e_j2;
  GammaPosterior gp;
  double free_energy;
};

OuterEvaluation evaluate_outer(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g,
                               const Eigen::VectorXd& a_bar,
                               const std::vector<CorrentropyParams>& params,
                               const Eigen::MatrixXd& j_init, const ChvbConfig& cfg,
                               double gamma0, const Eigen::VectorXd& a0) {
  OuterEvaluation ev;
  ev.batch = chvb_time_steps(b, g, a_bar, params, j_init, cfg.hessian_mode,
                             cfg.fixed_point_max_iters, cfg.fixed_point_tol);
  ev.e_j2 = (ev.batch.j.array().square() + ev.batch.cov_diag.array()).matrix();
  ev.gp = hvb_a_step(ev.e_j2, cfg.warm_start);
  const Eigen::Index samples = b.cols();
  ev.free_energy = correntropy_term(b, g, ev.batch.j, params) +
                   prior_and_gamma_free_energy(ev.e_j2.rowwise().sum(), samples, ev.gp,
                                               gamma0, a0) +
                   gaussian_entropy_term(g.cols(), samples, ev.batch.logdet_h.sum());
  return ev;
}

}  // namespace

double chvb_surrogate_free_energy(const ChvbState& state, const Eigen::MatrixXd& b,
                                  const Eigen::MatrixXd& g, const ChvbConfig& cfg) {
  cfg.validate(g.rows(), g.cols());
  const Eigen::Index samples = b.cols();
  const double gamma0 = cfg.warm_start.resolve_gamma0(samples);
  const Eigen::VectorXd a0 = cfg.warm_start.a0.size() == 0
                                 ? Eigen::VectorXd::Ones(g.cols())
                                 : cfg.warm_start.a0;
  double sum_logdet = 0.0;
  const linalg::ReweightedGramSolver base(g, state.gamma_post.a_bar);
  const Eigen::MatrixXd resid = b - g * state.j_hat;
  for (Eigen::Index t = 0; t < samples; ++t) {
    double logdet = 0.0;
    laplace_covariance_diag_with(base, resid.col(t), state.channel_params, cfg.hessian_mode,
                                 &logdet);
    sum_logdet += logdet;
  }
  return correntropy_term(b, g, state.j_hat, state.channel_params) +
         prior_and_gamma_free_energy(state.e_j2.rowwise().sum(), samples,
                                     state.gamma_post, gamma0, a0) +
         gaussian_entropy_term(g.cols(), samples, sum_logdet);
}

ChvbState chvb_fit(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g,
                   const ChvbConfig& cfg) {
  cfg.validate(g.rows(), g.cols());
  const HvbState warm =
      stage("warm start", [&] { return hvb_fit(b, g, cfg.warm_start); });
  return chvb_fit(b, g, cfg, warm);
}

ChvbState chvb_fit(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g,
                   const ChvbConfig& cfg, const HvbState& warm) {
  const Eigen::Index sensors = g.rows();
  const Eigen::Index n_src = g.cols();
  const Eigen::Index samples = b.cols();
  cfg.validate(sensors, n_src);
  validate_leadfield(g);
  if (b.rows() != sensors) throw InputError("observation/leadfield row mismatch");
  if (warm.j_hat.rows() != n_src || warm.j_hat.cols() != samples)
    throw InputError("warm start shape mismatch");

  ChvbState st;
  if (cfg.preset_channel_params) {
    st.channel_params = *cfg.preset_channel_params;
  } else {
    const Eigen::MatrixXd resid = residuals(b, g, warm.j_hat);
    const auto fits = stage("residual score matching",
                            [&] { return fit_rows(resid, cfg.score_match); });
    st.channel_params.reserve(fits.size());
    for (const auto& f : fits) st.channel_params.push_back(f.params);
  }

  const double gamma0 = cfg.warm_start.resolve_gamma0(samples);
  const Eigen::VectorXd a0 =
      cfg.warm_start.a0.size() == 0 ? Eigen::VectorXd::Ones(n_src) : cfg.warm_start.a0;

  st.j_hat = warm.j_hat;
  st.gamma_post = warm.gamma_post;
  Eigen::VectorXd a_bar = warm.gamma_post.a_bar;

  double prev_f = 0.0;
  for (int iter = 1; iter <= cfg.outer_max_iters; ++iter) {
    OuterEvaluation ev = stage("outer iteration", [&] {
      return evaluate_outer(b, g, a_bar, st.channel_params, st.j_hat, cfg, gamma0, a0);
    });
    if (iter > 1 && ev.free_energy > prev_f) {
      // accepting would raise the objective; stop at the previous state
      st.converged = true;
      break;
    }
    st.j_hat = std::move(ev.batch.j);
    st.cov_diag = std::move(ev.batch.cov_diag);
    st.e_j2 = std::move(ev.e_j2);
    st.gamma_post = std::move(ev.gp);
    a_bar = st.gamma_post.a_bar;
    st.objective_trace.push_back(ev.free_energy);
    st.iters = iter;
    if (iter > 1 && std::fabs(prev_f - ev.free_energy) <=
                        cfg.outer_rel_tol * (1.0 + std::fabs(ev.free_energy))) {
      st.converged = true;
      break;
    }
    prev_f = ev.free_energy;
  }
  return st;
}

}  // namespace esi
