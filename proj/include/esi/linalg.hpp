#pragma once

#include <Eigen/Dense>
#include <optional>

namespace esi::linalg {

// factorization of A = W^T W + diag(d), d > 0, solving A x = W^T y.
// Direct N x N Cholesky when N <= 4M; otherwise the Woodbury route through
// K = I_M + W D^{-1} W^T so cost scales with min(M, N)^3.
class DiagPlusGramSolver {
 public:
  enum class Path { automatic, direct, woodbury };

  DiagPlusGramSolver(Eigen::MatrixXd w, Eigen::VectorXd d, Path path = Path::automatic);

  // x = A^{-1} W^T y with one iterative-refinement pass
  Eigen::VectorXd solve(const Eigen::VectorXd& y) const;
  Eigen::MatrixXd solve_many(const Eigen::MatrixXd& ys) const;

  // A^{-1} rhs (rhs already in source space), with one refinement pass
  Eigen::VectorXd solve_rhs(const Eigen::VectorXd& rhs) const;

  // diagonal of A^{-1}; computed on first use and cached
  const Eigen::VectorXd& covariance_diag() const;

  double logdet() const { return logdet_; }
  bool used_woodbury() const { return woodbury_; }

 private:
  Eigen::VectorXd raw_solve(const Eigen::VectorXd& rhs) const;
  Eigen::MatrixXd raw_solve_many(const Eigen::MatrixXd& rhs) const;

  Eigen::MatrixXd w_;
  Eigen::VectorXd d_;
  Eigen::VectorXd d_inv_;
  bool woodbury_ = false;
  Eigen::LLT<Eigen::MatrixXd> llt_;  // of A (direct) or K (Woodbury)
  double logdet_ = 0.0;
  mutable std::optional<Eigen::VectorXd> cov_diag_;
};

// one (G, d) pair serving solves of (G^T diag(psi) G + diag(d)) x = rhs for
// many weight vectors psi. Caches U = G D^{-1} and S = U G^T once, so each
// weight costs O(M^3 + M N) through K = I_M + Psi^{1/2} S Psi^{1/2} instead
// of the O(M^2 N) a fresh factorization pays.
class ReweightedGramSolver {
 public:
  ReweightedGramSolver(const Eigen::MatrixXd& g, const Eigen::VectorXd& d);

  // factorization for one non-negative weight vector
  class Factor {
   public:
    Factor(const ReweightedGramSolver& base, const Eigen::VectorXd& psi);

    // x = (G^T diag(psi) G + D)^{-1} G^T diag(psi) y
    Eigen::VectorXd solve_obs(const Eigen::VectorXd& y) const;
    // w = Psi^{1/2} K^{-1} Psi^{1/2} y, the sensor-space dual of solve_obs:
    // x = lift(w) and G x = project(w) follow at O(M N) and O(M^2)
    Eigen::VectorXd dual_weights(const Eigen::VectorXd& y) const;
    // diagonal of (G^T diag(psi) G + D)^{-1}; the overload reuses workspace
    // (resized to M x N) to avoid reallocating in tight loops
    Eigen::VectorXd covariance_diag() const;
    Eigen::VectorXd covariance_diag(Eigen::MatrixXd& workspace) const;
    double logdet() const { return logdet_; }

   private:
    const ReweightedGramSolver* base_;
    Eigen::VectorXd psi_sqrt_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    double logdet_ = 0.0;
  };

  Factor factor(const Eigen::VectorXd& psi) const { return Factor(*this, psi); }
  // D^{-1} G^T w: maps a dual weight vector to the source-space solution
  Eigen::VectorXd lift(const Eigen::VectorXd& w) const { return u_.transpose() * w; }
  // G D^{-1} G^T w: the predicted observation of lift(w), without touching G
  Eigen::VectorXd project(const Eigen::VectorXd& w) const { return s_ * w; }
  Eigen::Index rows() const { return u_.rows(); }
  Eigen::Index cols() const { return u_.cols(); }

 private:
  Eigen::MatrixXd u_;  // G D^{-1}
  Eigen::MatrixXd s_;  // G D^{-1} G^T
  Eigen::VectorXd d_inv_;
  double logdet_d_ = 0.0;
};

}  // namespace esi::linalg
