#include "esi/hvb.hpp"

#include <cmath>

#include "esi/errors.hpp"
#include "esi/forward_sim.hpp"
#include "esi/free_energy.hpp"
#include "esi/linalg.hpp"
#include "esi/stats.hpp"

namespace esi {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check_phi(const Eigen::MatrixXd& phi, Eigen::Index sensors) {
  if (phi.rows() != sensors || phi.cols() != sensors)
    throw InputError("phi must be square with one row per sensor");
  if (!phi.allFinite()) throw InputError("phi entries must be finite");
  const double asym = (phi - phi.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * (1.0 + phi.cwiseAbs().maxCoeff()))
    throw InputError("phi must be symmetric");
  if (std::fabs(phi.trace() - double(sensors)) > 1e-6)
    throw InputError("phi trace must equal the sensor count");
}

// Cholesky whitening of the normalized noise precision
struct Whitener {
  bool identity = true;
  Eigen::MatrixXd l_t;  // L^T with phi = L L^T
  double logdet_phi = 0.0;

  explicit Whitener(const Eigen::MatrixXd& phi, Eigen::Index sensors) {
    if (phi.size() == 0) return;
    check_phi(phi, sensors);
    Eigen::LLT<Eigen::MatrixXd> llt(phi);
    if (llt.info() != Eigen::Success)
      throw NumericalError("phi is not positive definite");
    identity = false;
    l_t = llt.matrixL().transpose();
    logdet_phi = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& m) const { return identity ? m : l_t * m; }
};

}  // namespace

void HvbConfig::validate(Eigen::Index sensors, Eigen::Index sources) const {
  if (gamma0.has_value() == prior_weight.has_value())
    throw InputError("supply exactly one of gamma0 and prior_weight");
  if (gamma0 && !(std::isfinite(*gamma0) && *gamma0 >= 0.0))
    throw InputError("gamma0 must be finite and non-negative");
  if (prior_weight && !(std::isfinite(*prior_weight) && *prior_weight >= 0.0 && *prior_weight < 1.0))
    throw InputError("prior_weight must lie in [0, 1)");
  if (a0.size() != 0) {
    if (a0.size() != sources) throw InputError("a0 length must match source count");
    if (!a0.allFinite() || !(a0.array() > 0.0).all())
      throw InputError("a0 entries must be positive and finite");
  }
  if (phi.size() != 0) check_phi(phi, sensors);
  if (max_iters < 1) throw InputError("max_iters must be at least 1");
  if (!(rel_tol > 0.0)) throw InputError("rel_tol must be positive");
  if (!(a_max > 0.0)) throw InputError("a_max must be positive");
  if (fixed_beta && !(std::isfinite(*fixed_beta) && *fixed_beta > 0.0))
    throw InputError("fixed_beta must be positive and finite");
}

double HvbConfig::resolve_gamma0(Eigen::Index samples) const {
  if (gamma0) return *gamma0;
  const double w = *prior_weight;
  return w / (1.0 - w) * (0.5 * double(samples));
}

double expected_log_precision(double gamma_bar, double a_bar_n) {
  return stats::digamma(gamma_bar) - std::log(gamma_bar) + std::log(a_bar_n);
}

double prior_and_gamma_free_energy(const Eigen::VectorXd& e_j2_row_sums,
                                   Eigen::Index samples, const GammaPosterior& gp,
                                   double gamma0, const Eigen::VectorXd& a0) {
  const Eigen::Index n_src = gp.a_bar.size();
  const double gb = gp.gamma_bar;
  const double psi_gb = stats::digamma(gb);
  const double lgamma_gb = std::lgamma(gb);
  double f = 0.5 * double(n_src) * double(samples) * kLog2Pi;
  for (Eigen::Index n = 0; n < n_src; ++n) {
    const double abar = gp.a_bar[n];
    const double elog = psi_gb - std::log(gb) + std::log(abar);
    // -E[log p(J | A)] without the constant, per source
    f += 0.5 * abar * e_j2_row_sums[n] - 0.5 * double(samples) * elog;
    // -E[log P0(a_n)]
    if (gamma0 == 0.0) {
      f += elog;  // improper 1/a prior
    } else {
      f -= gamma0 * std::log(gamma0 / a0[n]) - std::lgamma(gamma0) +
           (gamma0 - 1.0) * elog - (gamma0 / a0[n]) * abar;
    }
    // -H[Q_A] for Gamma(shape gb, rate gb/abar)
    f -= gb - std::log(gb) + std::log(abar) + lgamma_gb + (1.0 - gb) * psi_gb;
  }
  return f;
}

double gaussian_entropy_term(Eigen::Index sources, Eigen::Index samples,
                             double sum_logdet_h) {
  return -0.5 * double(sources) * double(samples) * (kLog2Pi + 1.0) + 0.5 * sum_logdet_h;
}

void hvb_j_step(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g,
                const Eigen::VectorXd& a_bar, double beta_bar, const Eigen::MatrixXd& phi,
                Eigen::MatrixXd& j_hat, Eigen::VectorXd& cov_diag) {
  if (b.rows() != g.rows()) throw InputError("observation/leadfield row mismatch");
  if (a_bar.size() != g.cols()) throw InputError("a_bar length must match source count");
  if (!(beta_bar > 0.0) || !std::isfinite(beta_bar))
    throw InputError("beta must be positive and finite");
  const Whitener wh(phi, g.rows());
  const double sq = std::sqrt(beta_bar);
  linalg::DiagPlusGramSolver solver(sq * wh.apply(g), a_bar);
  j_hat = solver.solve_many(sq * wh.apply(b));
  cov_diag = solver.covariance_diag();
}

GammaPosterior hvb_a_step(const Eigen::MatrixXd& e_j2, const HvbConfig& cfg) {
  if (e_j2.size() == 0) throw InputError("empty expected squared sources");
  if (!e_j2.allFinite() || (e_j2.array() < 0.0).any())
    throw InputError("expected squared sources must be finite and non-negative");
  const Eigen::Index n_src = e_j2.rows();
  const Eigen::Index samples = e_j2.cols();
  const double g0 = cfg.resolve_gamma0(samples);
  const double w = g0 / (g0 + 0.5 * double(samples));
  const Eigen::VectorXd a0 =
      cfg.a0.size() == 0 ? Eigen::VectorXd::Ones(n_src) : cfg.a0;
  GammaPosterior gp;
  gp.gamma_bar = g0 + 0.5 * double(samples);
  const Eigen::ArrayXd inv_abar =
      w * a0.array().inverse() + (1.0 - w) * e_j2.rowwise().mean().array();
  gp.a_bar = inv_abar.inverse().min(cfg.a_max).matrix();
  return gp;
}

double hvb_beta_step(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g,
                     const Eigen::MatrixXd& j_hat, const Eigen::VectorXd& cov_diag,
                     const Eigen::VectorXd& a_bar_used, double beta_used,
                     const Eigen::MatrixXd& phi) {
  const Eigen::Index sensors = b.rows();
  const Eigen::Index samples = b.cols();
  const Whitener wh(phi, sensors);
  const double quad = wh.apply(b - g * j_hat).squaredNorm();
  // tr(Phi G Sigma G^T) = (N - sum_n a_bar_n * Sigma_nn) / beta for the
  // J-step system built from (a_bar_used, beta_used)
  const double trace_term =
      std::max(0.0, double(g.cols()) - a_bar_used.dot(cov_diag)) / beta_used;
  const double expected_residual = quad + double(samples) * trace_term;
  if (!(expected_residual > 0.0))
    throw NumericalError("expected residual energy is zero (degenerate exact fit)");
  return double(sensors) * double(samples) / expected_residual;
}

Eigen::MatrixXd residuals(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g,
                          const Eigen::MatrixXd& j_hat) {
  if (b.rows() != g.rows() || g.cols() != j_hat.rows() || b.cols() != j_hat.cols())
    throw InputError("residuals: dimension mismatch");
  return b - g * j_hat;
}

HvbState hvb_fit(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g, const HvbConfig& cfg) {
  const Eigen::Index sensors = g.rows();
  const Eigen::Index n_src = g.cols();
  const Eigen::Index samples = b.cols();
  if (b.rows() != sensors) throw InputError("observation/leadfield row mismatch");
  if (samples < 1) throw InputError("need at least one time sample");
  validate_leadfield(g);
  cfg.validate(sensors, n_src);

  const double g0 = cfg.resolve_gamma0(samples);
  const Eigen::VectorXd a0 = cfg.a0.size() == 0 ? Eigen::VectorXd::Ones(n_src) : cfg.a0;
  const Whitener wh(cfg.phi, sensors);
  const Eigen::MatrixXd gw = wh.apply(g);   // L^T G
  const Eigen::MatrixXd bw = wh.apply(b);   // L^T B

  // start from the prior means; beta from the J = 0 residual unless pinned
  Eigen::VectorXd a_bar = a0;
  const double b_energy = bw.squaredNorm();
  if (!(b_energy > 0.0)) throw InputError("observations have zero energy");
  double beta = cfg.fixed_beta ? *cfg.fixed_beta
                               : double(sensors) * double(samples) / b_energy;

  HvbState st;
  st.gamma_post.gamma_bar = g0 + 0.5 * double(samples);
  double prev_f = 0.0;
  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    const double sq = std::sqrt(beta);
    linalg::DiagPlusGramSolver solver(sq * gw, a_bar);
    st.j_hat = solver.solve_many(sq * bw);
    const Eigen::VectorXd cov = solver.covariance_diag();
    const Eigen::MatrixXd e_j2 =
        (st.j_hat.array().square().colwise() + cov.array()).matrix();

    const double quad = (bw - gw * st.j_hat).squaredNorm();
    const double trace_term =
        std::max(0.0, double(n_src) - a_bar.dot(cov)) / beta;
    const double expected_residual = quad + double(samples) * trace_term;
    if (!(expected_residual > 0.0))
      throw NumericalError("expected residual energy is zero (degenerate exact fit)");

    st.gamma_post = hvb_a_step(e_j2, cfg);
    const double beta_new =
        cfg.fixed_beta ? *cfg.fixed_beta
                       : double(sensors) * double(samples) / expected_residual;

    // free energy at (Q_J, Q_A, beta): Gaussian likelihood part ...
    double f = 0.5 * beta_new * expected_residual -
               0.5 * double(sensors) * double(samples) * std::log(beta_new) -
               0.5 * double(samples) * wh.logdet_phi +
               0.5 * double(sensors) * double(samples) * kLog2Pi;
    // ... plus prior/entropy parts shared with the robust solver
    f += prior_and_gamma_free_energy(e_j2.rowwise().sum(), samples, st.gamma_post, g0, a0);
    f += gaussian_entropy_term(n_src, samples, double(samples) * solver.logdet());

    st.cov_diag = cov.replicate(1, samples);
    st.beta_bar = beta_new;
    st.objective_trace.push_back(f);
    st.iters = iter;
    a_bar = st.gamma_post.a_bar;
    beta = beta_new;
    if (iter > 1 && std::fabs(prev_f - f) <= cfg.rel_tol * (1.0 + std::fabs(f))) {
      st.converged = true;
      break;
    }
    prev_f = f;
  }
  return st;
}

}  // namespace esi
