#include "esi/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "esi/errors.hpp"
#include "esi/stats.hpp"

namespace esi::metrics {

namespace {

void require_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InputError("matrix shape mismatch");
}

// false when either vector is (numerically) constant
bool pearson(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y, double& r) {
  const double mx = x.mean();
  const double my = y.mean();
  const Eigen::ArrayXd dx = x - mx;
  const Eigen::ArrayXd dy = y - my;
  const double sxx = dx.square().sum();
  const double syy = dy.square().sum();
  const double n = double(x.size());
  const double degenerate_xx = 1e-28 * n * (1.0 + mx * mx);
  const double degenerate_yy = 1e-28 * n * (1.0 + my * my);
  if (sxx <= degenerate_xx || syy <= degenerate_yy) return false;
  r = (dx * dy).sum() / std::sqrt(sxx * syy);
  if (!std::isfinite(r)) return false;
  r = std::clamp(r, -1.0, 1.0);
  return true;
}

double row_variance_mean(const Eigen::MatrixXd& m) {
  const Eigen::VectorXd mu = m.rowwise().mean();
  return (m.colwise() - mu).array().square().sum() / double(m.size());
}

}  // namespace

double rmse(const Eigen::MatrixXd& j_hat, const Eigen::MatrixXd& j_star) {
  require_same_shape(j_hat, j_star);
  if (j_hat.size() == 0) throw InputError("rmse of empty matrices");
  return std::sqrt((j_hat - j_star).array().square().mean());
}

double spatial_corr(const Eigen::MatrixXd& j_hat, const Eigen::MatrixXd& j_star,
                    Eigen::VectorXd* per_time) {
  require_same_shape(j_hat, j_star);
  const Eigen::Index T = j_hat.cols();
  if (T == 0 || j_hat.rows() < 2) throw InputError("spatial_corr needs >= 2 rows, >= 1 column");
  Eigen::VectorXd per(T);
  bool any_ok = false;
  for (Eigen::Index t = 0; t < T; ++t) {
    double r = 0.0;
    if (pearson(j_hat.col(t).array().abs(), j_star.col(t).array().abs(), r))
      any_ok = true;
    else
      r = 0.0;
    per[t] = r;
  }
  if (!any_ok) throw InputError("spatial_corr: every time point is degenerate");
  if (per_time) *per_time = per;
  return per.mean();
}

double temporal_corr(const Eigen::MatrixXd& j_hat, const Eigen::MatrixXd& j_star,
                     const std::vector<int>& active_indices, Eigen::VectorXd* per_source) {
  require_same_shape(j_hat, j_star);
  if (active_indices.empty()) throw InputError("temporal_corr needs active indices");
  if (j_hat.cols() < 2) throw InputError("temporal_corr needs >= 2 time samples");
  Eigen::VectorXd per(Eigen::Index(active_indices.size()));
  Eigen::Index k = 0;
  for (const int n : active_indices) {
    if (n < 0 || n >= j_star.rows()) throw InputError("active index out of range");
    const Eigen::ArrayXd truth = j_star.row(n).transpose().array();
    const Eigen::ArrayXd est = j_hat.row(n).transpose().array();
    double r = 0.0;
    if (!pearson(est, truth, r)) {
      // the ground-truth row must carry signal; a flat estimate scores 0
      const double mt = truth.mean();
      if ((truth - mt).square().sum() <= 1e-28 * double(truth.size()) * (1.0 + mt * mt))
        throw InputError("temporal_corr: degenerate ground-truth row");
      r = 0.0;
    }
    per[k++] = r;
  }
  if (per_source) *per_source = per;
  return per.mean();
}

double snr_db(const Eigen::MatrixXd& signal, const Eigen::MatrixXd& noise) {
  if (signal.rows() != noise.rows()) throw InputError("snr_db: row count mismatch");
  if (signal.size() == 0 || noise.size() == 0) throw InputError("snr_db of empty matrices");
  const double vs = row_variance_mean(signal);
  const double vn = row_variance_mean(noise);
  if (!(vn > 0.0)) throw InputError("snr_db: zero noise variance");
  return 10.0 * std::log10(vs / vn);
}

PairedCompare paired_compare(const Eigen::VectorXd& values_a, const Eigen::VectorXd& values_b) {
  if (values_a.size() != values_b.size()) throw InputError("paired_compare: length mismatch");
  const Eigen::Index n = values_a.size();
  if (n < 2) throw InputError("paired_compare needs >= 2 pairs");
  const Eigen::VectorXd d = values_a - values_b;
  const double mean = d.mean();
  const double ss = (d.array() - mean).square().sum();
  if (!(ss > 0.0)) throw InputError("paired_compare: zero-variance differences");
  const double sd = std::sqrt(ss / double(n - 1));
  PairedCompare out;
  out.mean_diff = mean;
  out.t_stat = mean / (sd / std::sqrt(double(n)));
  out.p_value = stats::student_t_two_sided_p(out.t_stat, double(n - 1));
  return out;
}

EvalReport evaluate(const Eigen::MatrixXd& j_hat, const Eigen::MatrixXd& j_star,
                    const std::vector<int>& active_indices) {
  EvalReport r;
  r.rmse = rmse(j_hat, j_star);
  r.s_corr = spatial_corr(j_hat, j_star, &r.per_time_scorr);
  r.t_corr = temporal_corr(j_hat, j_star, active_indices, &r.per_source_tcorr);
  r.aggregate = 0.5 * (r.s_corr + r.t_corr);
  return r;
}

}  // namespace esi::metrics
