#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "esi/errors.hpp"
#include "esi/experiment.hpp"

namespace {

using esi::experiment::ExperimentConfig;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config_path, "JSON configuration file");
  sub->add_option("--out", args.out_dir, "output directory");
  sub->add_option("--seed", args.seed, "base RNG seed");
}

ExperimentConfig resolve_config(const CommonArgs& args) {
  ExperimentConfig cfg = args.config_path.empty()
                             ? esi::experiment::default_config()
                             : esi::experiment::load_config_file(args.config_path);
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  if (args.seed) cfg.seed = *args.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust Bayesian source imaging: simulation, solvers, and sweeps"};
  app.require_subcommand(1);

  CommonArgs sim_args;
  std::optional<double> sim_snr;
  bool sim_csv = false, sim_no_binary = false;
  std::optional<int> sim_sensors, sim_sources, sim_samples, sim_active;
  std::string sim_noise_family;
  CLI::App* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
  add_common(sim, sim_args);
  sim->add_option("--snr-db", sim_snr, "target SNR in dB (omit for the native noise scale)");
  sim->add_flag("--emit-csv", sim_csv, "also write text matrices");
  sim->add_flag("--no-binary", sim_no_binary, "skip the binary matrices");
  sim->add_option("--sensors", sim_sensors, "number of sensors");
  sim->add_option("--sources", sim_sources, "number of candidate sources");
  sim->add_option("--samples", sim_samples, "number of time samples");
  sim->add_option("--active", sim_active, "number of active sources");
  sim->add_option("--noise-family", sim_noise_family,
                  "gaussian | gaussian_mixture | repository");

  CommonArgs fit_args;
  std::string fit_data, fit_solver;
  CLI::App* fit = app.add_subcommand("fit", "run a solver on a stored dataset");
  add_common(fit, fit_args);
  fit->add_option("--data", fit_data, "dataset directory")->required();
  fit->add_option("--solver", fit_solver, "hvb | chvb")->required();

  CommonArgs sm_args;
  std::string sm_input, sm_out;
  CLI::App* sm = app.add_subcommand("score-match",
                                    "fit per-channel density parameters to residual rows");
  sm->add_option("--config", sm_args.config_path, "JSON configuration file");
  sm->add_option("--input", sm_input, "residual matrix file")->required();
  sm->add_option("--out", sm_out, "output JSON file ('-' or empty prints to stdout)");

  CommonArgs sweep_args;
  std::optional<int> sweep_reps;
  std::string sweep_preset;
  std::vector<double> sweep_snrs;
  std::vector<std::string> sweep_solvers;
  bool sweep_no_timing = false;
  CLI::App* sweep = app.add_subcommand("sweep", "repeated solver comparison across SNR levels");
  add_common(sweep, sweep_args);
  sweep->add_option("--reps", sweep_reps, "repetitions per SNR level");
  sweep->add_option("--preset", sweep_preset, "meg | eeg");
  sweep->add_option("--snr", sweep_snrs, "explicit SNR list in dB");
  sweep->add_option("--solvers", sweep_solvers, "solvers to run (hvb, chvb)");
  sweep->add_flag("--no-timing", sweep_no_timing, "pin wall_ms to 0 for byte-stable output");

  std::string rep_results, rep_out;
  CLI::App* rep = app.add_subcommand("report", "summarize a sweep results file");
  rep->add_option("--results", rep_results, "results.csv from a sweep")->required();
  rep->add_option("--out", rep_out, "output JSON file ('-' or empty prints to stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) {
      ExperimentConfig cfg = resolve_config(sim_args);
      if (sim_snr) cfg.simulate_snr_db = sim_snr;
      if (sim_csv) cfg.emit_csv = true;
      if (sim_no_binary) cfg.emit_binary = false;
      if (sim_sensors) cfg.dims.sensors = *sim_sensors;
      if (sim_sources) cfg.dims.sources = *sim_sources;
      if (sim_samples) cfg.dims.samples = *sim_samples;
      if (sim_active) cfg.dims.active = *sim_active;
      if (!sim_noise_family.empty()) cfg.noise.family = sim_noise_family;
      esi::experiment::cmd_simulate(cfg);
    } else if (fit->parsed()) {
      esi::experiment::cmd_fit(fit_data, fit_solver, resolve_config(fit_args));
    } else if (sm->parsed()) {
      const ExperimentConfig cfg = resolve_config(sm_args);
      esi::experiment::cmd_score_match(sm_input, sm_out, cfg.chvb.score_match);
    } else if (sweep->parsed()) {
      ExperimentConfig cfg = resolve_config(sweep_args);
      if (sweep_reps) cfg.repetitions = *sweep_reps;
      if (!sweep_preset.empty()) {
        cfg.preset = sweep_preset;
        cfg.snr_list.clear();
      }
      if (!sweep_snrs.empty()) cfg.snr_list = sweep_snrs;
      if (!sweep_solvers.empty()) cfg.solvers = sweep_solvers;
      if (sweep_no_timing) cfg.record_timing = false;
      esi::experiment::cmd_sweep(cfg);
    } else if (rep->parsed()) {
      esi::experiment::cmd_report(rep_results, rep_out);
    }
  } catch (const esi::InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const esi::NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const esi::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
