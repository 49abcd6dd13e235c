#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace esi {

struct SourceGroundTruth {
  Eigen::MatrixXd j_star;           // N x T, rows outside active_indices exactly zero
  std::vector<int> active_indices;  // sorted, |.| = K
};

enum class NoiseFamily { gaussian, gaussian_mixture, repository };

struct NoiseModel {
  NoiseFamily family = NoiseFamily::gaussian;
  Eigen::VectorXd sigma;  // per-channel scale, length M; empty means all ones
  double rho = 0.1;       // mixture outlier fraction
  double kappa = 100.0;   // mixture variance inflation
  Eigen::MatrixXd repository;  // M x R residual pool for the repository family

  void validate(Eigen::Index channels) const;
};

// columns scaled to unit norm; entries i.i.d. standard normal before scaling
Eigen::MatrixXd make_leadfield(int sensors, int sources, std::uint64_t seed);

// throws InputError on non-finite entries or an all-zero column
void validate_leadfield(const Eigen::MatrixXd& g);

// K active rows (chosen without replacement), each a Gaussian-windowed
// sinusoid with randomized frequency, phase, peak time, width, amplitude
SourceGroundTruth make_sources(int sources, int samples, int active, std::uint64_t seed);

Eigen::MatrixXd forward_project(const Eigen::MatrixXd& g, const SourceGroundTruth& s);

// draws E per channel from the noise family, then applies one global scale so
// the channel-average SNR hits target_db (nullopt keeps the native scale);
// returns (B, E) with B = clean + E
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> inject_noise(const Eigen::MatrixXd& clean,
                                                         const NoiseModel& nm,
                                                         std::optional<double> target_db,
                                                         std::uint64_t seed);

}  // namespace esi
