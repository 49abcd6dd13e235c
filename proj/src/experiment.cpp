#include "esi/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <initializer_list>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>

#include "json.hpp"

#include "esi/errors.hpp"
#include "esi/hash.hpp"
#include "esi/matrix_io.hpp"
#include "esi/metrics.hpp"
#include "esi/parallel.hpp"
#include "esi/rng.hpp"

namespace esi::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void bad_config(const std::string& msg) { throw InputError("config: " + msg); }

void expect_keys(const json& obj, const char* where,
                 std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) bad_config("unknown key '" + it.key() + "' in " + where);
  }
}

double as_number(const json& v, const std::string& key) {
  if (!v.is_number()) bad_config("'" + key + "' must be a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) bad_config("'" + key + "' must be an integer");
  return v.get<int>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) bad_config("'" + key + "' must be a boolean");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) bad_config("'" + key + "' must be a string");
  return v.get<std::string>();
}

void overlay_prior(const json& obj, const char* where, HvbConfig& cfg) {
  if (obj.contains("prior_weight")) {
    cfg.prior_weight = as_number(obj["prior_weight"], "prior_weight");
    cfg.gamma0.reset();
  }
  if (obj.contains("gamma0")) {
    if (obj.contains("prior_weight"))
      bad_config(std::string(where) + " sets both prior_weight and gamma0");
    cfg.gamma0 = as_number(obj["gamma0"], "gamma0");
    cfg.prior_weight.reset();
  }
}

void overlay_score_match(const json& obj, ScoreMatchConfig& cfg) {
  expect_keys(obj, "chvb.score_match",
              {"max_iters", "rel_tol", "h_min", "h_max", "eta_min", "eta_max", "bandwidth_floor"});
  if (obj.contains("max_iters")) cfg.max_iters = as_int(obj["max_iters"], "max_iters");
  if (obj.contains("rel_tol")) cfg.rel_tol = as_number(obj["rel_tol"], "rel_tol");
  if (obj.contains("h_min")) cfg.h_min = as_number(obj["h_min"], "h_min");
  if (obj.contains("h_max")) cfg.h_max = as_number(obj["h_max"], "h_max");
  if (obj.contains("eta_min")) cfg.eta_min = as_number(obj["eta_min"], "eta_min");
  if (obj.contains("eta_max")) cfg.eta_max = as_number(obj["eta_max"], "eta_max");
  if (obj.contains("bandwidth_floor"))
    cfg.bandwidth_floor = as_number(obj["bandwidth_floor"], "bandwidth_floor");
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["dims"] = {{"sensors", cfg.dims.sensors},
               {"sources", cfg.dims.sources},
               {"samples", cfg.dims.samples},
               {"active", cfg.dims.active}};
  json noise = {{"family", cfg.noise.family}, {"rho", cfg.noise.rho}, {"kappa", cfg.noise.kappa}};
  if (!cfg.noise.sigma.empty()) noise["sigma"] = cfg.noise.sigma;
  if (!cfg.noise.repository_file.empty())
    noise["repository_file"] = cfg.noise.repository_file;
  j["noise"] = noise;
  j["preset"] = cfg.preset;
  j["snr_list"] = resolve_snr_list(cfg);
  if (cfg.simulate_snr_db)
    j["snr_db"] = *cfg.simulate_snr_db;
  else
    j["snr_db"] = "default";
  j["repetitions"] = cfg.repetitions;
  j["seed"] = cfg.seed;
  j["solvers"] = cfg.solvers;
  json hvb;
  if (cfg.hvb.gamma0) hvb["gamma0"] = *cfg.hvb.gamma0;
  if (cfg.hvb.prior_weight) hvb["prior_weight"] = *cfg.hvb.prior_weight;
  hvb["max_iters"] = cfg.hvb.max_iters;
  hvb["rel_tol"] = cfg.hvb.rel_tol;
  j["hvb"] = hvb;
  json chvb;
  if (cfg.chvb.warm_start.gamma0) chvb["gamma0"] = *cfg.chvb.warm_start.gamma0;
  if (cfg.chvb.warm_start.prior_weight)
    chvb["prior_weight"] = *cfg.chvb.warm_start.prior_weight;
  chvb["warm_start_max_iters"] = cfg.chvb.warm_start.max_iters;
  chvb["warm_start_rel_tol"] = cfg.chvb.warm_start.rel_tol;
  chvb["fixed_point_max_iters"] = cfg.chvb.fixed_point_max_iters;
  chvb["fixed_point_tol"] = cfg.chvb.fixed_point_tol;
  chvb["outer_max_iters"] = cfg.chvb.outer_max_iters;
  chvb["outer_rel_tol"] = cfg.chvb.outer_rel_tol;
  chvb["hessian_mode"] =
      cfg.chvb.hessian_mode == HessianMode::gauss_newton ? "gauss_newton" : "full_clamped";
  chvb["score_match"] = {{"max_iters", cfg.chvb.score_match.max_iters},
                         {"rel_tol", cfg.chvb.score_match.rel_tol},
                         {"h_min", cfg.chvb.score_match.h_min},
                         {"h_max", cfg.chvb.score_match.h_max},
                         {"eta_min", cfg.chvb.score_match.eta_min},
                         {"eta_max", cfg.chvb.score_match.eta_max},
                         {"bandwidth_floor", cfg.chvb.score_match.bandwidth_floor}};
  j["chvb"] = chvb;
  j["output_dir"] = cfg.output_dir;
  j["emit"] = {{"binary", cfg.emit_binary}, {"csv", cfg.emit_csv}};
  j["record_timing"] = cfg.record_timing;
  return j;
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

void write_manifest(const std::string& dir, json manifest,
                    const std::vector<std::string>& file_names) {
  json files;
  for (const auto& name : file_names)
    files[name] = hash::sha256_file_hex((fs::path(dir) / name).string());
  manifest["files"] = files;
  io::write_text_file((fs::path(dir) / "manifest.json").string(), dump_json(manifest));
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

double wall_ms_since(std::chrono::steady_clock::time_point t0, bool record) {
  if (!record) return 0.0;
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
      .count();
}

constexpr const char* kCsvHeader =
    "seed,snr_db,solver,aggregate,s_corr,t_corr,rmse,iters,wall_ms";

std::string metric_row(std::uint64_t seed, double snr_db, const std::string& solver,
                       const metrics::EvalReport& ev, int iters, double wall_ms) {
  std::string row = std::to_string(seed);
  row += ',';
  row += io::format_double(snr_db);
  row += ',';
  row += solver;
  row += ',';
  row += io::format_double(ev.aggregate);
  row += ',';
  row += io::format_double(ev.s_corr);
  row += ',';
  row += io::format_double(ev.t_corr);
  row += ',';
  row += io::format_double(ev.rmse);
  row += ',';
  row += std::to_string(iters);
  row += ',';
  row += io::format_double(wall_ms);
  return row;
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.hvb.prior_weight = 0.0;
  cfg.chvb.warm_start.prior_weight = 0.0;
  return cfg;
}

std::vector<double> resolve_snr_list(const ExperimentConfig& cfg) {
  if (!cfg.snr_list.empty()) return cfg.snr_list;
  if (cfg.preset == "meg") return {20.0, 15.0, 10.0, 5.0, 0.0};
  if (cfg.preset == "eeg") return {0.0, -5.0, -10.0, -15.0, -20.0};
  bad_config("preset must be 'meg' or 'eeg'");
}

ExperimentConfig config_from_json_text(const std::string& text, ExperimentConfig cfg) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) bad_config("top level must be an object");
  expect_keys(j, "config",
              {"dims", "noise", "preset", "snr_list", "snr_db", "repetitions", "seed",
               "solvers", "hvb", "chvb", "output_dir", "emit", "record_timing"});

  if (j.contains("dims")) {
    const json& d = j["dims"];
    expect_keys(d, "dims", {"sensors", "sources", "samples", "active"});
    if (d.contains("sensors")) cfg.dims.sensors = as_int(d["sensors"], "sensors");
    if (d.contains("sources")) cfg.dims.sources = as_int(d["sources"], "sources");
    if (d.contains("samples")) cfg.dims.samples = as_int(d["samples"], "samples");
    if (d.contains("active")) cfg.dims.active = as_int(d["active"], "active");
  }
  if (j.contains("noise")) {
    const json& n = j["noise"];
    expect_keys(n, "noise", {"family", "rho", "kappa", "sigma", "repository_file"});
    if (n.contains("family")) cfg.noise.family = as_string(n["family"], "family");
    if (n.contains("rho")) cfg.noise.rho = as_number(n["rho"], "rho");
    if (n.contains("kappa")) cfg.noise.kappa = as_number(n["kappa"], "kappa");
    if (n.contains("sigma")) {
      if (!n["sigma"].is_array()) bad_config("'sigma' must be an array");
      cfg.noise.sigma.clear();
      for (const auto& v : n["sigma"]) cfg.noise.sigma.push_back(as_number(v, "sigma"));
    }
    if (n.contains("repository_file"))
      cfg.noise.repository_file = as_string(n["repository_file"], "repository_file");
  }
  if (j.contains("preset")) cfg.preset = as_string(j["preset"], "preset");
  if (j.contains("snr_list")) {
    if (!j["snr_list"].is_array() || j["snr_list"].empty())
      bad_config("'snr_list' must be a non-empty array");
    cfg.snr_list.clear();
    for (const auto& v : j["snr_list"]) cfg.snr_list.push_back(as_number(v, "snr_list"));
  }
  if (j.contains("snr_db")) {
    if (j["snr_db"].is_string()) {
      if (j["snr_db"].get<std::string>() != "default")
        bad_config("'snr_db' must be a number or \"default\"");
      cfg.simulate_snr_db.reset();
    } else {
      cfg.simulate_snr_db = as_number(j["snr_db"], "snr_db");
    }
  }
  if (j.contains("repetitions")) cfg.repetitions = as_int(j["repetitions"], "repetitions");
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer())
      bad_config("'seed' must be a non-negative integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("solvers")) {
    if (!j["solvers"].is_array() || j["solvers"].empty())
      bad_config("'solvers' must be a non-empty array");
    cfg.solvers.clear();
    for (const auto& v : j["solvers"]) cfg.solvers.push_back(as_string(v, "solvers"));
  }
  if (j.contains("hvb")) {
    const json& h = j["hvb"];
    expect_keys(h, "hvb", {"prior_weight", "gamma0", "max_iters", "rel_tol"});
    overlay_prior(h, "hvb", cfg.hvb);
    if (h.contains("max_iters")) cfg.hvb.max_iters = as_int(h["max_iters"], "max_iters");
    if (h.contains("rel_tol")) cfg.hvb.rel_tol = as_number(h["rel_tol"], "rel_tol");
  }
  if (j.contains("chvb")) {
    const json& c = j["chvb"];
    expect_keys(c, "chvb",
                {"prior_weight", "gamma0", "warm_start_max_iters", "warm_start_rel_tol",
                 "fixed_point_max_iters", "fixed_point_tol", "outer_max_iters",
                 "outer_rel_tol", "hessian_mode", "score_match"});
    overlay_prior(c, "chvb", cfg.chvb.warm_start);
    if (c.contains("warm_start_max_iters"))
      cfg.chvb.warm_start.max_iters = as_int(c["warm_start_max_iters"], "warm_start_max_iters");
    if (c.contains("warm_start_rel_tol"))
      cfg.chvb.warm_start.rel_tol = as_number(c["warm_start_rel_tol"], "warm_start_rel_tol");
    if (c.contains("fixed_point_max_iters"))
      cfg.chvb.fixed_point_max_iters =
          as_int(c["fixed_point_max_iters"], "fixed_point_max_iters");
    if (c.contains("fixed_point_tol"))
      cfg.chvb.fixed_point_tol = as_number(c["fixed_point_tol"], "fixed_point_tol");
    if (c.contains("outer_max_iters"))
      cfg.chvb.outer_max_iters = as_int(c["outer_max_iters"], "outer_max_iters");
    if (c.contains("outer_rel_tol"))
      cfg.chvb.outer_rel_tol = as_number(c["outer_rel_tol"], "outer_rel_tol");
    if (c.contains("hessian_mode")) {
      const std::string mode = as_string(c["hessian_mode"], "hessian_mode");
      if (mode == "gauss_newton")
        cfg.chvb.hessian_mode = HessianMode::gauss_newton;
      else if (mode == "full_clamped")
        cfg.chvb.hessian_mode = HessianMode::full_clamped;
      else
        bad_config("hessian_mode must be 'gauss_newton' or 'full_clamped'");
    }
    if (c.contains("score_match")) overlay_score_match(c["score_match"], cfg.chvb.score_match);
  }
  if (j.contains("output_dir")) cfg.output_dir = as_string(j["output_dir"], "output_dir");
  if (j.contains("emit")) {
    const json& e = j["emit"];
    expect_keys(e, "emit", {"binary", "csv"});
    if (e.contains("binary")) cfg.emit_binary = as_bool(e["binary"], "binary");
    if (e.contains("csv")) cfg.emit_csv = as_bool(e["csv"], "csv");
  }
  if (j.contains("record_timing"))
    cfg.record_timing = as_bool(j["record_timing"], "record_timing");
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  return config_from_json_text(io::read_text_file(path), default_config());
}

NoiseModel make_noise_model(const NoiseConfig& nc, Eigen::Index sensors) {
  NoiseModel nm;
  if (nc.family == "gaussian")
    nm.family = NoiseFamily::gaussian;
  else if (nc.family == "gaussian_mixture")
    nm.family = NoiseFamily::gaussian_mixture;
  else if (nc.family == "repository")
    nm.family = NoiseFamily::repository;
  else
    bad_config("noise family must be gaussian, gaussian_mixture, or repository");
  nm.rho = nc.rho;
  nm.kappa = nc.kappa;
  if (!nc.sigma.empty())
    nm.sigma = Eigen::Map<const Eigen::VectorXd>(nc.sigma.data(),
                                                 Eigen::Index(nc.sigma.size()));
  if (nm.family == NoiseFamily::repository) {
    if (nc.repository_file.empty())
      bad_config("repository noise needs 'repository_file'");
    nm.repository = io::load_matrix_any(nc.repository_file);
  }
  nm.validate(sensors);
  return nm;
}

std::uint64_t noise_seed_for(std::uint64_t base_seed, int snr_index, int rep) {
  const std::uint64_t chain = derive_seed(base_seed, 3);
  return derive_seed(chain, (std::uint64_t(std::uint32_t(snr_index)) << 32) |
                                std::uint64_t(std::uint32_t(rep)));
}

SimulatedInstance simulate_instance(const ExperimentConfig& cfg, int snr_index, int rep,
                                    std::optional<double> snr_db) {
  SimulatedInstance inst;
  inst.leadfield_seed = derive_seed(cfg.seed, 1);
  inst.sources_seed = derive_seed(cfg.seed, 2);
  inst.noise_seed = noise_seed_for(cfg.seed, snr_index, rep);
  inst.g = make_leadfield(cfg.dims.sensors, cfg.dims.sources, inst.leadfield_seed);
  inst.truth =
      make_sources(cfg.dims.sources, cfg.dims.samples, cfg.dims.active, inst.sources_seed);
  inst.clean = forward_project(inst.g, inst.truth);
  const NoiseModel nm = make_noise_model(cfg.noise, cfg.dims.sensors);
  auto [b, e] = inject_noise(inst.clean, nm, snr_db, inst.noise_seed);
  inst.b = std::move(b);
  inst.e = std::move(e);
  inst.achieved_snr_db = metrics::snr_db(inst.clean, inst.e);
  return inst;
}

namespace {

void emit_matrix(const std::string& dir, const std::string& stem, const Eigen::MatrixXd& m,
                 bool binary, bool csv, std::vector<std::string>& names) {
  if (binary) {
    const std::string name = stem + ".esim";
    io::save_matrix((fs::path(dir) / name).string(), m);
    names.push_back(name);
  }
  if (csv) {
    const std::string name = stem + ".csv";
    io::save_matrix_csv((fs::path(dir) / name).string(), m);
    names.push_back(name);
  }
}

}  // namespace

void cmd_simulate(const ExperimentConfig& cfg) {
  if (!cfg.emit_binary && !cfg.emit_csv)
    bad_config("at least one of emit.binary and emit.csv must be enabled");
  const SimulatedInstance inst = simulate_instance(cfg, 0, 0, cfg.simulate_snr_db);
  ensure_dir(cfg.output_dir);
  std::vector<std::string> names;
  emit_matrix(cfg.output_dir, "leadfield", inst.g, cfg.emit_binary, cfg.emit_csv, names);
  emit_matrix(cfg.output_dir, "sources", inst.truth.j_star, cfg.emit_binary, cfg.emit_csv,
              names);
  emit_matrix(cfg.output_dir, "observations", inst.b, cfg.emit_binary, cfg.emit_csv, names);
  emit_matrix(cfg.output_dir, "noise", inst.e, cfg.emit_binary, cfg.emit_csv, names);

  json manifest;
  manifest["kind"] = "dataset";
  manifest["dims"] = {{"sensors", cfg.dims.sensors},
                      {"sources", cfg.dims.sources},
                      {"samples", cfg.dims.samples},
                      {"active", cfg.dims.active}};
  manifest["active_indices"] = inst.truth.active_indices;
  json noise = {{"family", cfg.noise.family}, {"rho", cfg.noise.rho}, {"kappa", cfg.noise.kappa}};
  if (!cfg.noise.repository_file.empty())
    noise["repository_file"] = cfg.noise.repository_file;
  manifest["noise"] = noise;
  if (cfg.simulate_snr_db)
    manifest["snr_db"] = *cfg.simulate_snr_db;
  else
    manifest["snr_db"] = "default";
  if (inst.achieved_snr_db) manifest["achieved_snr_db"] = *inst.achieved_snr_db;
  manifest["seeds"] = {{"base", cfg.seed},
                       {"leadfield", inst.leadfield_seed},
                       {"sources", inst.sources_seed},
                       {"noise", inst.noise_seed}};
  write_manifest(cfg.output_dir, std::move(manifest), names);
}

namespace {

Eigen::MatrixXd load_listed_matrix(const std::string& dir, const json& files,
                                   const std::string& stem) {
  for (const char* ext : {".esim", ".csv"}) {
    const std::string name = stem + ext;
    if (files.contains(name)) {
      const std::string path = (fs::path(dir) / name).string();
      const std::string want = files[name].get<std::string>();
      const std::string got = hash::sha256_file_hex(path);
      if (got != want)
        throw IoError("checksum mismatch for " + name + " (manifest " + want + ", file " +
                      got + ")");
      return io::load_matrix_any(path);
    }
  }
  throw IoError("dataset manifest lists no file for '" + stem + "'");
}

}  // namespace

Dataset read_dataset(const std::string& dir) {
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  json manifest;
  try {
    manifest = json::parse(io::read_text_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw IoError("bad manifest at " + manifest_path + ": " + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("files"))
    throw IoError("bad manifest at " + manifest_path + ": missing 'files'");
  const json& files = manifest["files"];

  Dataset ds;
  ds.g = load_listed_matrix(dir, files, "leadfield");
  ds.b = load_listed_matrix(dir, files, "observations");
  if (files.contains("sources.esim") || files.contains("sources.csv")) {
    SourceGroundTruth truth;
    truth.j_star = load_listed_matrix(dir, files, "sources");
    if (!manifest.contains("active_indices"))
      throw IoError("dataset manifest has sources but no active_indices");
    for (const auto& v : manifest["active_indices"]) truth.active_indices.push_back(v.get<int>());
    ds.truth = std::move(truth);
  }
  if (files.contains("noise.esim") || files.contains("noise.csv"))
    ds.noise = load_listed_matrix(dir, files, "noise");

  if (ds.b.rows() != ds.g.rows())
    throw InputError("dataset dimension mismatch: observations have " +
                     std::to_string(ds.b.rows()) + " rows but the leadfield has " +
                     std::to_string(ds.g.rows()));
  if (ds.truth && ds.truth->j_star.rows() != ds.g.cols())
    throw InputError("dataset dimension mismatch: sources have " +
                     std::to_string(ds.truth->j_star.rows()) +
                     " rows but the leadfield has " + std::to_string(ds.g.cols()) +
                     " columns");
  return ds;
}

namespace {

json metrics_json(const metrics::EvalReport& ev) {
  return {{"aggregate", ev.aggregate},
          {"s_corr", ev.s_corr},
          {"t_corr", ev.t_corr},
          {"rmse", ev.rmse}};
}

}  // namespace

void cmd_fit(const std::string& data_dir, const std::string& solver,
             const ExperimentConfig& cfg) {
  if (solver != "hvb" && solver != "chvb")
    throw InputError("solver must be 'hvb' or 'chvb'");
  const Dataset ds = read_dataset(data_dir);
  ensure_dir(cfg.output_dir);
  std::vector<std::string> names;
  json summary;
  summary["solver"] = solver;

  Eigen::MatrixXd j_hat;
  if (solver == "hvb") {
    const HvbState st = hvb_fit(ds.b, ds.g, cfg.hvb);
    j_hat = st.j_hat;
    summary["iterations"] = st.iters;
    summary["converged"] = st.converged;
    summary["beta"] = st.beta_bar;
    summary["gamma_bar"] = st.gamma_post.gamma_bar;
    summary["objective_trace"] = st.objective_trace;
  } else {
    const HvbState warm = hvb_fit(ds.b, ds.g, cfg.chvb.warm_start);
    const Eigen::MatrixXd resid = residuals(ds.b, ds.g, warm.j_hat);
    const ChvbState st = chvb_fit(ds.b, ds.g, cfg.chvb, warm);
    j_hat = st.j_hat;
    summary["iterations"] = st.iters;
    summary["converged"] = st.converged;
    summary["gamma_bar"] = st.gamma_post.gamma_bar;
    summary["objective_trace"] = st.objective_trace;
    json channels = json::array();
    for (std::size_t m = 0; m < st.channel_params.size(); ++m)
      channels.push_back({{"channel", m},
                          {"h", st.channel_params[m].h},
                          {"eta", st.channel_params[m].eta}});
    summary["channel_params"] = channels;
    std::vector<double> rms(std::size_t(resid.rows()));
    for (Eigen::Index m = 0; m < resid.rows(); ++m)
      rms[std::size_t(m)] = std::sqrt(resid.row(m).squaredNorm() / double(resid.cols()));
    summary["warm_start"] = {{"iterations", warm.iters},
                             {"converged", warm.converged},
                             {"beta", warm.beta_bar},
                             {"residual_rms_per_channel", rms}};
  }
  if (ds.truth)
    summary["metrics"] =
        metrics_json(metrics::evaluate(j_hat, ds.truth->j_star, ds.truth->active_indices));

  emit_matrix(cfg.output_dir, solver + "_j_hat", j_hat, cfg.emit_binary, cfg.emit_csv, names);
  const std::string summary_name = solver + "_summary.json";
  io::write_text_file((fs::path(cfg.output_dir) / summary_name).string(),
                      dump_json(summary));
  names.push_back(summary_name);
  json manifest;
  manifest["kind"] = "fit";
  manifest["solver"] = solver;
  manifest["data_dir"] = data_dir;
  write_manifest(cfg.output_dir, std::move(manifest), names);
}

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

struct RepResult {
  std::vector<std::string> rows;
  double aggregate_hvb = kNan;
  double aggregate_chvb = kNan;
  double rmse_hvb = kNan;
  double rmse_chvb = kNan;
  bool ok = false;
};

bool same_matrix(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  return x.rows() == y.rows() && x.cols() == y.cols() && (x.array() == y.array()).all();
}

// the chvb warm start is itself an hvb fit; when its configuration matches the
// hvb baseline's, one fit serves both solvers
bool same_hvb_config(const HvbConfig& a, const HvbConfig& b) {
  return a.gamma0 == b.gamma0 && a.prior_weight == b.prior_weight &&
         a.max_iters == b.max_iters && a.rel_tol == b.rel_tol && a.a_max == b.a_max &&
         a.fixed_beta == b.fixed_beta && same_matrix(a.a0, b.a0) && same_matrix(a.phi, b.phi);
}

RepResult run_repetition(const ExperimentConfig& cfg, const Eigen::MatrixXd& g,
                         const SourceGroundTruth& truth, const Eigen::MatrixXd& clean,
                         const NoiseModel& nm, double snr_db, int snr_index, int rep,
                         bool run_hvb, bool run_chvb) {
  RepResult out;
  const std::uint64_t seed = noise_seed_for(cfg.seed, snr_index, rep);
  try {
    const auto [b, e] = inject_noise(clean, nm, snr_db, seed);
    if (run_hvb || run_chvb) {
      std::optional<HvbState> baseline;
      if (run_hvb) {
        const auto t0 = std::chrono::steady_clock::now();
        baseline = hvb_fit(b, g, cfg.hvb);
        const double ms = wall_ms_since(t0, cfg.record_timing);
        const auto ev =
            metrics::evaluate(baseline->j_hat, truth.j_star, truth.active_indices);
        out.rows.push_back(metric_row(seed, snr_db, "hvb", ev, baseline->iters, ms));
        out.aggregate_hvb = ev.aggregate;
        out.rmse_hvb = ev.rmse;
      }
      if (run_chvb) {
        // reuse the baseline as the warm start when the configurations agree
        // (the reported chvb wall time then excludes the shared fit)
        const bool shared = baseline && same_hvb_config(cfg.hvb, cfg.chvb.warm_start);
        const auto t0 = std::chrono::steady_clock::now();
        const ChvbState st =
            shared ? chvb_fit(b, g, cfg.chvb, *baseline) : chvb_fit(b, g, cfg.chvb);
        const double ms = wall_ms_since(t0, cfg.record_timing);
        const auto ev = metrics::evaluate(st.j_hat, truth.j_star, truth.active_indices);
        out.rows.push_back(metric_row(seed, snr_db, "chvb", ev, st.iters, ms));
        out.aggregate_chvb = ev.aggregate;
        out.rmse_chvb = ev.rmse;
      }
    }
    out.ok = true;
  } catch (const std::exception&) {
    out.rows.clear();
    out.rows.push_back(std::to_string(seed) + "," + io::format_double(snr_db) +
                       ",error,nan,nan,nan,nan,0,0");
    out.ok = false;
  }
  return out;
}

std::string compare_row(std::uint64_t base_seed, double snr_db,
                        const std::vector<double>& agg_h, const std::vector<double>& agg_c,
                        const std::vector<double>& rmse_h,
                        const std::vector<double>& rmse_c) {
  const std::size_t n = agg_h.size();
  double mean_diff_agg = kNan, t_stat = kNan, p_value = kNan, mean_diff_rmse = kNan;
  int wins = 0;
  if (n >= 1) {
    double sa = 0.0, sr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sa += agg_c[i] - agg_h[i];
      sr += rmse_c[i] - rmse_h[i];
      if (agg_c[i] > agg_h[i]) ++wins;
    }
    mean_diff_agg = sa / double(n);
    mean_diff_rmse = sr / double(n);
  }
  if (n >= 2) {
    try {
      const Eigen::Map<const Eigen::VectorXd> va(agg_c.data(), Eigen::Index(n));
      const Eigen::Map<const Eigen::VectorXd> vb(agg_h.data(), Eigen::Index(n));
      const auto cmp = metrics::paired_compare(va, vb);
      t_stat = cmp.t_stat;
      p_value = cmp.p_value;
    } catch (const std::exception&) {
      // zero-variance differences: leave the statistics as nan
    }
  }
  std::string row = std::to_string(base_seed);
  row += ',';
  row += io::format_double(snr_db);
  row += ",compare,";
  row += io::format_double(mean_diff_agg);
  row += ',';
  row += io::format_double(t_stat);
  row += ',';
  row += io::format_double(p_value);
  row += ',';
  row += io::format_double(mean_diff_rmse);
  row += ',';
  row += std::to_string(wins);
  row += ',';
  row += std::to_string(n);
  return row;
}

}  // namespace

void cmd_sweep(const ExperimentConfig& cfg) {
  if (cfg.repetitions < 1) bad_config("repetitions must be at least 1");
  bool run_hvb = false, run_chvb = false;
  for (const auto& s : cfg.solvers) {
    if (s == "hvb")
      run_hvb = true;
    else if (s == "chvb")
      run_chvb = true;
    else
      bad_config("unknown solver '" + s + "'");
  }
  if (!run_hvb && !run_chvb) bad_config("no solver selected");
  const std::vector<double> snrs = resolve_snr_list(cfg);

  const std::uint64_t lf_seed = derive_seed(cfg.seed, 1);
  const std::uint64_t src_seed = derive_seed(cfg.seed, 2);
  const Eigen::MatrixXd g = make_leadfield(cfg.dims.sensors, cfg.dims.sources, lf_seed);
  const SourceGroundTruth truth =
      make_sources(cfg.dims.sources, cfg.dims.samples, cfg.dims.active, src_seed);
  const Eigen::MatrixXd clean = forward_project(g, truth);
  const NoiseModel nm = make_noise_model(cfg.noise, cfg.dims.sensors);

  std::string csv(kCsvHeader);
  csv += '\n';
  std::vector<std::string> compare_rows;
  for (std::size_t si = 0; si < snrs.size(); ++si) {
    std::vector<RepResult> results(std::size_t(cfg.repetitions));
    const int reps = cfg.repetitions;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(thread_count())
#endif
    for (int rep = 0; rep < reps; ++rep)
      results[std::size_t(rep)] = run_repetition(cfg, g, truth, clean, nm, snrs[si],
                                                 int(si), rep, run_hvb, run_chvb);
    std::vector<double> agg_h, agg_c, rmse_h, rmse_c;
    for (const RepResult& r : results) {
      for (const std::string& row : r.rows) {
        csv += row;
        csv += '\n';
      }
      if (r.ok && run_hvb && run_chvb) {
        agg_h.push_back(r.aggregate_hvb);
        agg_c.push_back(r.aggregate_chvb);
        rmse_h.push_back(r.rmse_hvb);
        rmse_c.push_back(r.rmse_chvb);
      }
    }
    if (run_hvb && run_chvb)
      compare_rows.push_back(compare_row(cfg.seed, snrs[si], agg_h, agg_c, rmse_h, rmse_c));
  }
  for (const std::string& row : compare_rows) {
    csv += row;
    csv += '\n';
  }

  ensure_dir(cfg.output_dir);
  io::write_text_file((fs::path(cfg.output_dir) / "results.csv").string(), csv);
  json manifest;
  manifest["kind"] = "sweep";
  manifest["config"] = config_to_json(cfg);
  manifest["seeds"] = {{"base", cfg.seed}, {"leadfield", lf_seed}, {"sources", src_seed}};
  write_manifest(cfg.output_dir, std::move(manifest), {"results.csv"});
}

void cmd_score_match(const std::string& input_file, const std::string& out_file,
                     const ScoreMatchConfig& sm_cfg) {
  const Eigen::MatrixXd resid = io::load_matrix_any(input_file);
  json channels = json::array();
  for (Eigen::Index m = 0; m < resid.rows(); ++m) {
    try {
      const ScoreMatchResult r = fit_score_matching(resid.row(m).transpose(), sm_cfg);
      channels.push_back({{"channel", m},
                          {"h", r.params.h},
                          {"eta", r.params.eta},
                          {"converged", r.converged},
                          {"objective", r.objective}});
    } catch (const std::exception& e) {
      channels.push_back({{"channel", m}, {"error", e.what()}});
    }
  }
  json out;
  out["input"] = input_file;
  out["channels"] = channels;
  const std::string text = dump_json(out);
  if (out_file.empty() || out_file == "-") {
    std::fputs(text.c_str(), stdout);
    return;
  }
  io::write_text_file(out_file, text);
  json manifest;
  manifest["kind"] = "score_match";
  const fs::path out_path(out_file);
  json files;
  files[out_path.filename().string()] = hash::sha256_file_hex(out_file);
  manifest["files"] = files;
  io::write_text_file(out_file + ".manifest.json", dump_json(manifest));
}

namespace {

std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

}  // namespace

void cmd_report(const std::string& results_csv, const std::string& out_file) {
  const std::string text = io::read_text_file(results_csv);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw InputError("results file has an unexpected header: " + results_csv);

  struct Group {
    double snr_db = 0.0;
    std::string solver;
    std::vector<double> aggregate, s_corr, t_corr, rmse, iters;
  };
  std::vector<Group> groups;
  json comparisons = json::array();
  std::map<std::string, int> error_counts;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_line(line);
    if (f.size() != 9) throw InputError("malformed results row: " + line);
    const std::string solver(f[2]);
    if (solver == "error") {
      ++error_counts[std::string(f[1])];
      continue;
    }
    if (solver == "compare") {
      comparisons.push_back({{"snr_db", io::parse_double(f[1])},
                             {"mean_diff_aggregate", io::parse_double(f[3])},
                             {"t_stat", io::parse_double(f[4])},
                             {"p_value", io::parse_double(f[5])},
                             {"mean_diff_rmse", io::parse_double(f[6])},
                             {"chvb_wins", int(io::parse_double(f[7]))},
                             {"pairs", int(io::parse_double(f[8]))}});
      continue;
    }
    const double snr = io::parse_double(f[1]);
    Group* grp = nullptr;
    for (Group& cand : groups)
      if (cand.solver == solver && cand.snr_db == snr) {
        grp = &cand;
        break;
      }
    if (!grp) {
      groups.push_back(Group{snr, solver, {}, {}, {}, {}, {}});
      grp = &groups.back();
    }
    grp->aggregate.push_back(io::parse_double(f[3]));
    grp->s_corr.push_back(io::parse_double(f[4]));
    grp->t_corr.push_back(io::parse_double(f[5]));
    grp->rmse.push_back(io::parse_double(f[6]));
    grp->iters.push_back(io::parse_double(f[7]));
  }

  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? kNan : s / double(v.size());
  };
  auto std_of = [&](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / double(v.size() - 1));
  };

  json out;
  out["source"] = results_csv;
  json group_json = json::array();
  for (const Group& grp : groups) {
    group_json.push_back({{"snr_db", grp.snr_db},
                          {"solver", grp.solver},
                          {"n", grp.aggregate.size()},
                          {"mean_aggregate", mean_of(grp.aggregate)},
                          {"std_aggregate", std_of(grp.aggregate)},
                          {"mean_s_corr", mean_of(grp.s_corr)},
                          {"mean_t_corr", mean_of(grp.t_corr)},
                          {"mean_rmse", mean_of(grp.rmse)},
                          {"mean_iters", mean_of(grp.iters)}});
  }
  out["groups"] = group_json;
  out["comparisons"] = comparisons;
  json errors = json::array();
  for (const auto& [snr, count] : error_counts)
    errors.push_back({{"snr_db", io::parse_double(snr)}, {"count", count}});
  out["errors"] = errors;

  const std::string dump = dump_json(out);
  if (out_file.empty() || out_file == "-") {
    std::fputs(dump.c_str(), stdout);
    return;
  }
  io::write_text_file(out_file, dump);
}

}  // namespace esi::experiment
