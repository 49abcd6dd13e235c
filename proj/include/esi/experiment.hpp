#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "esi/chvb.hpp"
#include "esi/forward_sim.hpp"
#include "esi/hvb.hpp"
#include "esi/score_matching.hpp"

namespace esi::experiment {

struct Dims {
  int sensors = 64;
  int sources = 500;
  int samples = 100;
  int active = 30;
};

struct NoiseConfig {
  std::string family = "gaussian_mixture";  // gaussian | gaussian_mixture | repository
  double rho = 0.1;
  double kappa = 100.0;
  std::vector<double> sigma;    // empty means all ones
  std::string repository_file;  // matrix file for the repository family
};

struct ExperimentConfig {
  Dims dims;
  NoiseConfig noise;
  std::string preset = "meg";  // meg | eeg, selects the default snr_list
  std::vector<double> snr_list;               // empty means the preset default
  std::optional<double> simulate_snr_db;      // nullopt means native noise scale
  int repetitions = 50;
  std::uint64_t seed = 1;
  std::vector<std::string> solvers = {"hvb", "chvb"};
  HvbConfig hvb;
  ChvbConfig chvb;
  std::string output_dir = "out";
  bool emit_binary = true;
  bool emit_csv = false;
  bool record_timing = true;  // false pins wall_ms to 0 for byte-stable output
};

// baseline configuration with solver priors resolved (prior_weight = 0)
ExperimentConfig default_config();

// default_config overlaid with a JSON config file; unknown keys are rejected
ExperimentConfig load_config_file(const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text, ExperimentConfig base);

// snr_list resolved against the preset ({20,15,10,5,0} dB for meg,
// {0,-5,-10,-15,-20} dB for eeg)
std::vector<double> resolve_snr_list(const ExperimentConfig& cfg);

NoiseModel make_noise_model(const NoiseConfig& nc, Eigen::Index sensors);

struct SimulatedInstance {
  Eigen::MatrixXd g;
  SourceGroundTruth truth;
  Eigen::MatrixXd clean;
  Eigen::MatrixXd b;
  Eigen::MatrixXd e;
  std::optional<double> achieved_snr_db;
  std::uint64_t leadfield_seed = 0;
  std::uint64_t sources_seed = 0;
  std::uint64_t noise_seed = 0;
};

// deterministic seed plan: leadfield and sources derive from the base seed
// alone (shared by every repetition); noise derives from (snr_index, rep)
std::uint64_t noise_seed_for(std::uint64_t base_seed, int snr_index, int rep);
SimulatedInstance simulate_instance(const ExperimentConfig& cfg, int snr_index, int rep,
                                    std::optional<double> snr_db);

struct Dataset {
  Eigen::MatrixXd g;
  Eigen::MatrixXd b;
  std::optional<SourceGroundTruth> truth;
  std::optional<Eigen::MatrixXd> noise;
};

Dataset read_dataset(const std::string& dir);

// subcommand bodies; each writes its artifacts plus a manifest.json with
// content hashes into the relevant output directory
void cmd_simulate(const ExperimentConfig& cfg);
void cmd_fit(const std::string& data_dir, const std::string& solver,
             const ExperimentConfig& cfg);
void cmd_sweep(const ExperimentConfig& cfg);
void cmd_score_match(const std::string& input_file, const std::string& out_file,
                     const ScoreMatchConfig& sm_cfg);
void cmd_report(const std::string& results_csv, const std::string& out_file);

}  // namespace esi::experiment
