#include "esi/forward_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "esi/errors.hpp"
#include "esi/rng.hpp"

namespace esi {

void NoiseModel::validate(Eigen::Index channels) const {
  if (sigma.size() != 0) {
    if (sigma.size() != channels) throw InputError("sigma length must match channel count");
    if (!(sigma.array() > 0.0).all() || !sigma.allFinite())
      throw InputError("sigma entries must be positive and finite");
  }
  if (!(rho >= 0.0 && rho < 1.0)) throw InputError("rho must lie in [0, 1)");
  if (!(kappa > 1.0)) throw InputError("kappa must exceed 1");
  if (family == NoiseFamily::repository) {
    if (repository.rows() != channels || repository.cols() < 1)
      throw InputError("repository must have one row per channel and at least one column");
    if (!repository.allFinite()) throw InputError("repository entries must be finite");
  }
}

Eigen::MatrixXd make_leadfield(int sensors, int sources, std::uint64_t seed) {
  if (sensors < 2) throw InputError("need at least 2 sensors");
  if (sources < sensors) throw InputError("need at least as many sources as sensors");
  Rng rng(seed);
  Eigen::MatrixXd g(sensors, sources);
  for (int j = 0; j < sources; ++j) {
    double norm2 = 0.0;
    do {
      for (int i = 0; i < sensors; ++i) g(i, j) = rng.normal();
      norm2 = g.col(j).squaredNorm();
    } while (norm2 < 1e-24);  // redraw the (measure-zero) degenerate column
    g.col(j) /= std::sqrt(norm2);
  }
  return g;
}

void validate_leadfield(const Eigen::MatrixXd& g) {
  if (g.rows() < 1 || g.cols() < 1) throw InputError("empty leadfield");
  if (!g.allFinite()) throw InputError("leadfield entries must be finite");
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    if (g.col(j).squaredNorm() == 0.0) throw InputError("leadfield has an all-zero column");
}

SourceGroundTruth make_sources(int sources, int samples, int active, std::uint64_t seed) {
  if (active < 1 || active > sources) throw InputError("active count must lie in [1, sources]");
  if (samples < 2) throw InputError("need at least 2 time samples");
  Rng rng(seed);

  // partial Fisher-Yates draw of `active` distinct indices
  std::vector<int> pool(static_cast<std::size_t>(sources), 0);
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < active; ++i) {
    const std::size_t j = std::size_t(i) + rng.uniform_index(std::uint64_t(sources - i));
    std::swap(pool[std::size_t(i)], pool[j]);
  }
  std::vector<int> idx(pool.begin(), pool.begin() + active);
  std::sort(idx.begin(), idx.end());

  SourceGroundTruth out;
  out.active_indices = std::move(idx);
  out.j_star = Eigen::MatrixXd::Zero(sources, samples);
  const double T = double(samples);
  for (const int n : out.active_indices) {
    double energy = 0.0;
    do {
      const double cycles = rng.uniform(2.0, 10.0);
      const double phase = rng.uniform(0.0, 2.0 * M_PI);
      const double center = rng.uniform(0.2 * T, 0.8 * T);
      const double width = rng.uniform(0.05 * T, 0.15 * T);
      const double amp = rng.uniform(0.5, 1.5);
      for (int t = 0; t < samples; ++t) {
        const double z = (double(t) - center) / width;
        out.j_star(n, t) =
            amp * std::exp(-0.5 * z * z) * std::sin(2.0 * M_PI * cycles * double(t) / T + phase);
      }
      energy = out.j_star.row(n).squaredNorm();
    } while (energy < 1e-18);  // redraw if the window landed on all-near-zero values
  }
  return out;
}

Eigen::MatrixXd forward_project(const Eigen::MatrixXd& g, const SourceGroundTruth& s) {
  if (g.cols() != s.j_star.rows()) throw InputError("leadfield/source dimension mismatch");
  return g * s.j_star;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> inject_noise(const Eigen::MatrixXd& clean,
                                                         const NoiseModel& nm,
                                                         std::optional<double> target_db,
                                                         std::uint64_t seed) {
  const Eigen::Index M = clean.rows();
  const Eigen::Index T = clean.cols();
  if (M < 1 || T < 1) throw InputError("clean observations must be non-empty");
  nm.validate(M);
  Rng rng(seed);

  const Eigen::VectorXd sigma =
      nm.sigma.size() == 0 ? Eigen::VectorXd::Ones(M) : nm.sigma;
  Eigen::MatrixXd e(M, T);
  const double outlier_scale = std::sqrt(nm.kappa);
  for (Eigen::Index m = 0; m < M; ++m) {
    for (Eigen::Index t = 0; t < T; ++t) {
      switch (nm.family) {
        case NoiseFamily::gaussian:
          e(m, t) = sigma[m] * rng.normal();
          break;
        case NoiseFamily::gaussian_mixture: {
          const double scale = rng.uniform() < nm.rho ? outlier_scale : 1.0;
          e(m, t) = sigma[m] * scale * rng.normal();
          break;
        }
        case NoiseFamily::repository:
          e(m, t) = nm.repository(m, Eigen::Index(rng.uniform_index(
                                         std::uint64_t(nm.repository.cols()))));
          break;
      }
    }
  }

  if (target_db) {
    if (!std::isfinite(*target_db)) throw InputError("target SNR must be finite");
    // channel-average variances, matching metrics::snr_db
    const Eigen::VectorXd mu_s = clean.rowwise().mean();
    const double vs = (clean.colwise() - mu_s).array().square().sum() / double(clean.size());
    const Eigen::VectorXd mu_e = e.rowwise().mean();
    const double ve = (e.colwise() - mu_e).array().square().sum() / double(e.size());
    if (!(vs > 0.0)) throw InputError("clean observations have zero variance");
    if (!(ve > 0.0)) throw InputError("drawn noise has zero variance");
    const double scale = std::sqrt(vs / (ve * std::pow(10.0, *target_db / 10.0)));
    e *= scale;
  }
  return {clean + e, e};
}

}  // namespace esi
