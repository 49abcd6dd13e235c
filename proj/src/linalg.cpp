#include "esi/linalg.hpp"

#include <cmath>
#include <string>

#include "esi/errors.hpp"

namespace esi::linalg {

namespace {

[[noreturn]] void fail_factorization(const Eigen::VectorXd& d, const Eigen::MatrixXd& w) {
  throw NumericalError(
      "system factorization failed (matrix not positive definite); diag range [" +
      std::to_string(d.minCoeff()) + ", " + std::to_string(d.maxCoeff()) +
      "], gram Frobenius norm " + std::to_string(w.squaredNorm()));
}

}  // namespace

DiagPlusGramSolver::DiagPlusGramSolver(Eigen::MatrixXd w, Eigen::VectorXd d, Path path)
    : w_(std::move(w)), d_(std::move(d)) {
  const Eigen::Index m = w_.rows();
  const Eigen::Index n = w_.cols();
  if (n != d_.size()) throw InputError("diagonal length must match gram width");
  if (n < 1 || m < 1) throw InputError("empty system");
  if (!w_.allFinite()) throw InputError("gram factor must be finite");
  if (!d_.allFinite() || !(d_.array() > 0.0).all())
    throw InputError("diagonal entries must be positive and finite");

  woodbury_ = path == Path::automatic ? (n > 4 * m) : (path == Path::woodbury);
  d_inv_ = d_.cwiseInverse();
  if (woodbury_) {
    Eigen::MatrixXd k = w_ * d_inv_.asDiagonal() * w_.transpose();
    k.diagonal().array() += 1.0;
    llt_.compute(k);
    if (llt_.info() != Eigen::Success) fail_factorization(d_, w_);
    logdet_ = d_.array().log().sum() +
              2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  } else {
    Eigen::MatrixXd a = w_.transpose() * w_;
    a.diagonal() += d_;
    llt_.compute(a);
    if (llt_.info() != Eigen::Success) fail_factorization(d_, w_);
    logdet_ = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  }
}

Eigen::VectorXd DiagPlusGramSolver::raw_solve(const Eigen::VectorXd& rhs) const {
  if (!woodbury_) return llt_.solve(rhs);
  const Eigen::VectorXd x0 = d_inv_.cwiseProduct(rhs);
  const Eigen::VectorXd v = llt_.solve(w_ * x0);
  return x0 - d_inv_.cwiseProduct(w_.transpose() * v);
}

Eigen::MatrixXd DiagPlusGramSolver::raw_solve_many(const Eigen::MatrixXd& rhs) const {
  if (!woodbury_) return llt_.solve(rhs);
  const Eigen::MatrixXd x0 = d_inv_.asDiagonal() * rhs;
  const Eigen::MatrixXd v = llt_.solve(w_ * x0);
  return x0 - d_inv_.asDiagonal() * (w_.transpose() * v);
}

Eigen::VectorXd DiagPlusGramSolver::solve_rhs(const Eigen::VectorXd& rhs) const {
  if (rhs.size() != w_.cols()) throw InputError("rhs length mismatch");
  Eigen::VectorXd x = raw_solve(rhs);
  // one refinement pass keeps the normal-equation residual near machine level
  const Eigen::VectorXd r = rhs - (w_.transpose() * (w_ * x) + d_.cwiseProduct(x));
  x += raw_solve(r);
  return x;
}

Eigen::VectorXd DiagPlusGramSolver::solve(const Eigen::VectorXd& y) const {
  if (y.size() != w_.rows()) throw InputError("observation length mismatch");
  return solve_rhs(w_.transpose() * y);
}

Eigen::MatrixXd DiagPlusGramSolver::solve_many(const Eigen::MatrixXd& ys) const {
  if (ys.rows() != w_.rows()) throw InputError("observation row mismatch");
  const Eigen::MatrixXd rhs = w_.transpose() * ys;
  Eigen::MatrixXd x = raw_solve_many(rhs);
  const Eigen::MatrixXd r = rhs - (w_.transpose() * (w_ * x) + d_.asDiagonal() * x);
  x += raw_solve_many(r);
  return x;
}

const Eigen::VectorXd& DiagPlusGramSolver::covariance_diag() const {
  if (cov_diag_) return *cov_diag_;
  const Eigen::Index n = w_.cols();
  if (woodbury_) {
    // diag(A^{-1}) = 1/d - column norms of L_K^{-1} W D^{-1}
    Eigen::MatrixXd x = w_ * d_inv_.asDiagonal();
    llt_.matrixL().solveInPlace(x);
    Eigen::VectorXd diag = d_inv_ - x.colwise().squaredNorm().transpose();
    cov_diag_ = diag.cwiseMax(0.0);
  } else {
    // diag(A^{-1})_n = || L^{-1} e_n ||^2
    Eigen::MatrixXd x = Eigen::MatrixXd::Identity(n, n);
    llt_.matrixL().solveInPlace(x);
    cov_diag_ = x.colwise().squaredNorm().transpose();
  }
  return *cov_diag_;
}

ReweightedGramSolver::ReweightedGramSolver(const Eigen::MatrixXd& g, const Eigen::VectorXd& d) {
  if (g.cols() != d.size()) throw InputError("diagonal length must match gram width");
  if (g.rows() < 1 || g.cols() < 1) throw InputError("empty system");
  if (!g.allFinite()) throw InputError("gram factor must be finite");
  if (!d.allFinite() || !(d.array() > 0.0).all())
    throw InputError("diagonal entries must be positive and finite");
  d_inv_ = d.cwiseInverse();
  u_ = g * d_inv_.asDiagonal();
  s_ = u_ * g.transpose();
  logdet_d_ = d.array().log().sum();
}

ReweightedGramSolver::Factor::Factor(const ReweightedGramSolver& base,
                                     const Eigen::VectorXd& psi)
    : base_(&base) {
  if (psi.size() != base.rows()) throw InputError("weight length must match gram height");
  if (!psi.allFinite() || !(psi.array() >= 0.0).all())
    throw InputError("weights must be non-negative and finite");
  psi_sqrt_ = psi.cwiseSqrt();
  Eigen::MatrixXd k = base.s_;
  k.array().colwise() *= psi_sqrt_.array();
  k.array().rowwise() *= psi_sqrt_.transpose().array();
  k.diagonal().array() += 1.0;
  llt_.compute(k);
  if (llt_.info() != Eigen::Success)
    throw NumericalError("reweighted factorization failed (matrix not positive definite)");
  logdet_ = base.logdet_d_ + 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

Eigen::VectorXd ReweightedGramSolver::Factor::solve_obs(const Eigen::VectorXd& y) const {
  return base_->lift(dual_weights(y));
}

Eigen::VectorXd ReweightedGramSolver::Factor::dual_weights(const Eigen::VectorXd& y) const {
  if (y.size() != base_->rows()) throw InputError("observation length mismatch");
  // (W^T W + D)^{-1} W^T z = D^{-1} W^T (I + W D^{-1} W^T)^{-1} z, W = Psi^{1/2} G
  const Eigen::VectorXd v = llt_.solve(psi_sqrt_.cwiseProduct(y));
  return psi_sqrt_.cwiseProduct(v);
}

Eigen::VectorXd ReweightedGramSolver::Factor::covariance_diag() const {
  Eigen::MatrixXd workspace;
  return covariance_diag(workspace);
}

Eigen::VectorXd ReweightedGramSolver::Factor::covariance_diag(Eigen::MatrixXd& workspace) const {
  // diag(H^{-1}) = 1/d - column norms of L_K^{-1} Psi^{1/2} G D^{-1}
  workspace.resize(base_->u_.rows(), base_->u_.cols());
  workspace.noalias() = psi_sqrt_.asDiagonal() * base_->u_;
  llt_.matrixL().solveInPlace(workspace);
  Eigen::VectorXd diag = base_->d_inv_ - workspace.colwise().squaredNorm().transpose();
  return diag.cwiseMax(0.0);
}

}  // namespace esi::linalg
