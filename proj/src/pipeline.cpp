#include "warpfit/pipeline.hpp"

#include "warpfit/clr.hpp"
#include "warpfit/csv.hpp"
#include "warpfit/prep.hpp"
#include "warpfit/registration.hpp"
#include "warpfit/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace warpfit::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- config ------------------------------------------------------------

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean for '" + key + "': " + v);
}

// ---- json helpers --------------------------------------------------------

json vec_to_json(const Vector& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json mat_to_json(const Matrix& m) {
  json a = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(row);
  }
  return a;
}

Vector vec_from_json(const json& a) {
  Vector v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
  return v;
}

Matrix mat_from_json(const json& a) {
  const int rows = static_cast<int>(a.size());
  const int cols = rows ? static_cast<int>(a[0].size()) : 0;
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = a[i][j].get<double>();
  return m;
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(path + ": cannot open for writing");
  out << j.dump(1) << "\n";
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(path + ": cannot open");
  json j;
  in >> j;
  return j;
}

// ---- intermediate artifacts ----------------------------------------------

struct CurveSet {
  std::vector<SampledCurve> curves;             // smoothed, common grid
  std::map<std::string, std::string> classes;   // id -> class value
  design::CovariateTable covariates;            // row order == curves order
};

std::string curves_path(const std::string& dir) { return dir + "/curves.csv"; }
std::string covs_path(const std::string& dir) {
  return dir + "/covariates.csv";
}

std::string effective_curve_file(const PipelineConfig& c,
                                 const std::string& dir) {
  return c.curve_file.empty() ? curves_path(dir) : c.curve_file;
}
std::string effective_covariate_file(const PipelineConfig& c,
                                     const std::string& dir) {
  return c.covariate_file.empty() ? covs_path(dir) : c.covariate_file;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' ||
            c == '_')
               ? c
               : '_';
  return out;
}

CurveSet load_smoothed(const PipelineConfig& config,
                       const std::string& dir) {
  const csv::Table data = csv::read_csv(dir + "/smoothed.csv");
  const csv::Table meta = csv::read_csv(dir + "/curve_meta.csv");
  const int d_id = data.require_column("id", "smoothed.csv");
  const int d_j = data.require_column("j", "smoothed.csv");
  const int d_val = data.require_column("value", "smoothed.csv");

  const int m_id = meta.require_column("id", "curve_meta.csv");
  const int m_t = meta.require_column("T", "curve_meta.csv");
  const int m_class =
      meta.require_column(config.class_column, "curve_meta.csv");

  CurveSet set;
  std::map<std::string, int> row_of;
  for (std::size_t r = 0; r < meta.rows.size(); ++r) {
    SampledCurve c;
    c.id = meta.rows[r][m_id];
    c.duration = csv::parse_double(meta.rows[r][m_t], "curve_meta.csv");
    c.grid = make_grid(config.grid_size);
    c.values = Vector::Zero(config.grid_size);
    row_of[c.id] = static_cast<int>(set.curves.size());
    set.classes[c.id] = meta.rows[r][m_class];
    set.curves.push_back(std::move(c));
  }
  for (std::size_t r = 0; r < data.rows.size(); ++r) {
    const auto it = row_of.find(data.rows[r][d_id]);
    if (it == row_of.end())
      throw UnknownId("smoothed.csv: id '" + data.rows[r][d_id] +
                      "' not in curve_meta.csv");
    const int j = static_cast<int>(
        csv::parse_double(data.rows[r][d_j], "smoothed.csv"));
    set.curves[it->second].values[j] =
        csv::parse_double(data.rows[r][d_val], "smoothed.csv");
  }

  set.covariates.names = meta.header;
  set.covariates.names.erase(set.covariates.names.begin() + m_id);
  // Drop the duration column from the covariate table; keep the rest.
  set.covariates.names.erase(
      std::find(set.covariates.names.begin(), set.covariates.names.end(),
                "T"));
  set.covariates.values.assign(set.covariates.names.size(), {});
  for (std::size_t r = 0; r < meta.rows.size(); ++r) {
    set.covariates.ids.push_back(meta.rows[r][m_id]);
    for (std::size_t c = 0; c < set.covariates.names.size(); ++c) {
      const int col = meta.column(set.covariates.names[c]);
      set.covariates.values[c].push_back(meta.rows[r][col]);
    }
  }
  for (const auto& name : config.numeric_covariates)
    set.covariates.numeric.insert(name);
  return set;
}

std::vector<std::string> class_values(const CurveSet& set) {
  std::vector<std::string> values;
  for (const auto& [id, cls] : set.classes) values.push_back(cls);
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  return values;
}

struct ScoreTable {
  std::vector<std::string> ids;
  Matrix scores;
};

ScoreTable read_scores(const std::string& path) {
  const csv::Table t = csv::read_csv(path);
  ScoreTable s;
  const int n = static_cast<int>(t.rows.size());
  const int m = static_cast<int>(t.header.size()) - 1;
  s.scores.resize(n, m);
  for (int r = 0; r < n; ++r) {
    s.ids.push_back(t.rows[r][0]);
    for (int c = 0; c < m; ++c)
      s.scores(r, c) = csv::parse_double(t.rows[r][c + 1], path);
  }
  return s;
}

void write_scores(const std::string& path, const std::vector<std::string>& ids,
                  const Matrix& scores, const std::string& prefix) {
  csv::Table t;
  t.header.push_back("id");
  for (int c = 0; c < scores.cols(); ++c)
    t.header.push_back(prefix + std::to_string(c + 1));
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::vector<std::string> row{ids[r]};
    for (int c = 0; c < scores.cols(); ++c)
      row.push_back(csv::format_double(scores(static_cast<int>(r), c)));
    t.rows.push_back(std::move(row));
  }
  csv::write_csv(path, t);
}

// ---- manifest -------------------------------------------------------------

struct Manifest {
  json stages = json::object();

  static Manifest load(const std::string& dir) {
    Manifest m;
    const std::string path = dir + "/manifest.json";
    if (fs::exists(path)) {
      const json j = read_json_file(path);
      if (j.contains("stages")) m.stages = j["stages"];
    }
    return m;
  }
  void save(const std::string& dir) const {
    json j;
    j["format"] = 1;
    j["stages"] = stages;
    write_json_file(j, dir + "/manifest.json");
  }
};

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::string hash_file_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(path + ": cannot open for hashing");
  std::uint64_t h = 1469598103934665603ull;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
    if (!in) break;
  }
  return hex64(h);
}

// ---- config ---------------------------------------------------------------

PipelineConfig parse_config(const std::string& text) {
  PipelineConfig c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    const std::string ctx = "config key " + key;

    if (key == "grid_size") c.grid_size = static_cast<int>(csv::parse_double(value, ctx));
    else if (key == "bandwidth") c.bandwidth = csv::parse_double(value, ctx);
    else if (key == "bandwidth_mode") c.bandwidth_mode = value;
    else if (key == "max_missing_fraction") c.max_missing_fraction = csv::parse_double(value, ctx);
    else if (key == "curve_file") c.curve_file = value;
    else if (key == "covariate_file") c.covariate_file = value;
    else if (key == "covariate_columns") c.covariate_columns = split_list(value);
    else if (key == "numeric_covariates") c.numeric_covariates = split_list(value);
    else if (key == "registration_method") c.registration_method = value;
    else if (key == "lambda") c.lambda = value;
    else if (key == "nstar") c.nstar = static_cast<int>(csv::parse_double(value, ctx));
    else if (key == "class_column") c.class_column = value;
    else if (key == "jnd_amp") c.jnd_amp = csv::parse_double(value, ctx);
    else if (key == "jnd_phase") c.jnd_phase = csv::parse_double(value, ctx);
    else if (key == "metric") c.metric = value;
    else if (key == "formula") c.formula = value;
    else if (key == "scalar_residual") c.scalar_residual = parse_bool(value, key);
    else if (key == "max_evals") c.max_evals = static_cast<int>(csv::parse_double(value, ctx));
    else if (key == "tol") c.tol = csv::parse_double(value, ctx);
    else if (key == "blup_speaker") c.blup_speaker = parse_bool(value, key);
    else if (key == "blup_sentence") c.blup_sentence = parse_bool(value, key);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(csv::parse_double(value, ctx));
    else if (key == "sim_speakers") c.sim.n_speakers = static_cast<int>(csv::parse_double(value, ctx));
    else if (key == "sim_sentences") c.sim.n_sentences = static_cast<int>(csv::parse_double(value, ctx));
    else if (key == "sim_classes") c.sim.n_classes = static_cast<int>(csv::parse_double(value, ctx));
    else if (key == "sim_curves") c.sim.n_curves = static_cast<int>(csv::parse_double(value, ctx));
    else if (key == "sim_amplitude_modes") c.sim.n_amplitude_modes = static_cast<int>(csv::parse_double(value, ctx));
    else if (key == "sim_phase_modes") c.sim.n_phase_modes = static_cast<int>(csv::parse_double(value, ctx));
    else if (key == "sim_readings") c.sim.readings_per_curve = static_cast<int>(csv::parse_double(value, ctx));
    else if (key == "sim_noise_sd") c.sim.noise_sd = csv::parse_double(value, ctx);
    else if (key == "sim_missing_probability") c.sim.missing_probability = csv::parse_double(value, ctx);
    else if (key == "sim_base_duration") c.sim.base_duration = csv::parse_double(value, ctx);
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  c.sim.grid_size = c.grid_size;
  c.validate();
  return c;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void PipelineConfig::validate() const {
  if (grid_size < 4) throw ConfigError("grid_size must be >= 4");
  if (!(bandwidth > 0.0 && bandwidth <= 0.5))
    throw ConfigError("bandwidth must lie in (0, 0.5]");
  if (bandwidth_mode != "fixed" && bandwidth_mode != "cv")
    throw ConfigError("bandwidth_mode must be fixed or cv");
  if (!(max_missing_fraction >= 0.0 && max_missing_fraction < 1.0))
    throw ConfigError("max_missing_fraction must lie in [0, 1)");
  if (registration_method != "pairwise" && registration_method != "auc")
    throw ConfigError("registration_method must be pairwise or auc");
  if (lambda != "auto" && !(csv::parse_double(lambda, "lambda") >= 0.0))
    throw ConfigError("lambda must be 'auto' or a nonnegative number");
  if (nstar < 1) throw ConfigError("nstar must be >= 1");
  if (!(jnd_amp > 0.0)) throw ConfigError("jnd_amp must be positive");
  if (!(jnd_phase > 0.0)) throw ConfigError("jnd_phase must be positive");
  if (metric != "peak" && metric != "rms")
    throw ConfigError("metric must be peak or rms");
  if (max_evals < 1) throw ConfigError("max_evals must be >= 1");
  if (!(tol > 0.0)) throw ConfigError("tol must be positive");
}

// ---- basis / model IO ------------------------------------------------------

void save_basis(const fpca::EigenBasis& basis, int retained,
                const std::string& path) {
  json j;
  j["grid"] = vec_to_json(basis.grid);
  j["weights"] = vec_to_json(basis.weights);
  j["mean"] = vec_to_json(basis.mean);
  j["eigenvalues"] = vec_to_json(basis.eigenvalues);
  json funcs = json::array();
  for (int c = 0; c < basis.eigenfunctions.cols(); ++c)
    funcs.push_back(vec_to_json(basis.eigenfunctions.col(c)));
  j["eigenfunctions"] = funcs;
  j["retained"] = retained;
  write_json_file(j, path);
}

fpca::EigenBasis load_basis(const std::string& path, int* retained) {
  const json j = read_json_file(path);
  fpca::EigenBasis b;
  b.grid = vec_from_json(j.at("grid"));
  b.weights = vec_from_json(j.at("weights"));
  b.mean = vec_from_json(j.at("mean"));
  b.eigenvalues = vec_from_json(j.at("eigenvalues"));
  const json& funcs = j.at("eigenfunctions");
  b.eigenfunctions.resize(b.grid.size(), funcs.size());
  for (std::size_t c = 0; c < funcs.size(); ++c)
    b.eigenfunctions.col(static_cast<int>(c)) = vec_from_json(funcs[c]);
  if (retained) *retained = j.at("retained").get<int>();
  return b;
}

void save_model(const mvlme::FittedModel& model, const std::string& path) {
  json j;
  j["b_hat"] = mat_to_json(model.b_hat);
  j["b_se"] = mat_to_json(model.b_se);
  j["sigma_r1"] = mat_to_json(model.sigma_r1);
  j["sigma_r2"] = mat_to_json(model.sigma_r2);
  j["residual_sd"] = vec_to_json(model.residual_sd);
  j["blup1"] = mat_to_json(model.blup1);
  j["blup2"] = mat_to_json(model.blup2);
  j["reml"] = model.reml;
  j["ml"] = model.ml;
  j["sigma2"] = model.sigma2;
  j["theta"] = vec_to_json(model.theta);
  j["converged"] = model.converged;
  j["clamped_at_optimum"] = model.clamped_at_optimum;
  j["min_relative_eigenvalue"] = model.min_relative_eigenvalue;
  j["evaluations"] = model.evaluations;
  j["scalar_residual"] = model.scalar_residual;
  j["component_names"] = model.component_names;
  j["fixed_names"] = model.fixed_names;
  j["level1_names"] = model.level1_names;
  j["level2_names"] = model.level2_names;
  write_json_file(j, path);
}

mvlme::FittedModel load_model(const std::string& path) {
  const json j = read_json_file(path);
  mvlme::FittedModel m;
  m.b_hat = mat_from_json(j.at("b_hat"));
  m.b_se = mat_from_json(j.at("b_se"));
  m.sigma_r1 = mat_from_json(j.at("sigma_r1"));
  m.sigma_r2 = mat_from_json(j.at("sigma_r2"));
  m.residual_sd = vec_from_json(j.at("residual_sd"));
  m.blup1 = mat_from_json(j.at("blup1"));
  m.blup2 = mat_from_json(j.at("blup2"));
  m.reml = j.at("reml").get<double>();
  m.ml = j.at("ml").get<double>();
  m.sigma2 = j.at("sigma2").get<double>();
  m.theta = vec_from_json(j.at("theta"));
  m.converged = j.at("converged").get<bool>();
  m.clamped_at_optimum = j.at("clamped_at_optimum").get<bool>();
  m.min_relative_eigenvalue = j.at("min_relative_eigenvalue").get<double>();
  m.evaluations = j.at("evaluations").get<int>();
  m.scalar_residual = j.at("scalar_residual").get<bool>();
  m.component_names = j.at("component_names").get<std::vector<std::string>>();
  m.fixed_names = j.at("fixed_names").get<std::vector<std::string>>();
  m.level1_names = j.at("level1_names").get<std::vector<std::string>>();
  m.level2_names = j.at("level2_names").get<std::vector<std::string>>();
  return m;
}

// ---- stages ----------------------------------------------------------------

void stage_simulate(const PipelineConfig& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const sim::SimOutput sim_out = sim::simulate(config.sim, config.seed);

  csv::Table curves;
  curves.header = {"id", "t", "f0"};
  for (const auto& c : sim_out.curves)
    for (std::size_t r = 0; r < c.times.size(); ++r)
      curves.rows.push_back(
          {c.id, csv::format_double(c.times[r]),
           std::isnan(c.values[r]) ? ""
                                   : csv::format_double(c.values[r])});
  csv::write_csv(curves_path(out_dir), curves);

  csv::Table covs;
  covs.header = {"id"};
  for (const auto& n : sim_out.covariates.names) covs.header.push_back(n);
  for (std::size_t r = 0; r < sim_out.covariates.ids.size(); ++r) {
    std::vector<std::string> row{sim_out.covariates.ids[r]};
    for (std::size_t c = 0; c < sim_out.covariates.names.size(); ++c)
      row.push_back(sim_out.covariates.values[c][r]);
    covs.rows.push_back(std::move(row));
  }
  csv::write_csv(covs_path(out_dir), covs);

  json truth;
  truth["sigma_r1"] = mat_to_json(sim_out.sigma_r1);
  truth["sigma_r2"] = mat_to_json(sim_out.sigma_r2);
  truth["residual_sd"] = vec_to_json(sim_out.residual_sd);
  truth["class_effects"] = mat_to_json(sim_out.class_effects);
  truth["true_scores"] = mat_to_json(sim_out.true_scores);
  truth["amplitude_mean"] = vec_to_json(sim_out.amplitude_mean);
  truth["amplitude_modes"] = mat_to_json(sim_out.amplitude_modes);
  truth["phase_modes"] = mat_to_json(sim_out.phase_modes);
  write_json_file(truth, out_dir + "/truth.json");
}

void stage_smooth(const PipelineConfig& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  prep::CorpusOptions copts;
  copts.covariate_columns = config.covariate_columns;
  const auto raws =
      prep::load_corpus(effective_curve_file(config, out_dir),
                        effective_covariate_file(config, out_dir), copts);

  csv::Table data;
  data.header = {"id", "j", "u", "value"};
  csv::Table meta;
  meta.header = {"id", "T", "speaker", "sentence", "class"};
  for (const auto& col : config.covariate_columns) meta.header.push_back(col);

  for (const auto& raw : raws) {
    if (!prep::screen_missing(raw, config.max_missing_fraction)) continue;
    const double bw =
        config.bandwidth_mode == "cv" ? prep::cv_bandwidth(raw)
                                      : config.bandwidth;
    const SampledCurve c = prep::smooth_curve(raw, bw, config.grid_size);
    for (int j = 0; j < c.values.size(); ++j)
      data.rows.push_back({c.id, std::to_string(j),
                           csv::format_double(c.grid[j]),
                           csv::format_double(c.values[j])});
    std::vector<std::string> row{c.id, csv::format_double(c.duration),
                                 raw.covariates.at("speaker"),
                                 raw.covariates.at("sentence"),
                                 raw.covariates.at("class")};
    for (const auto& col : config.covariate_columns)
      row.push_back(raw.covariates.at(col));
    meta.rows.push_back(std::move(row));
  }
  csv::write_csv(out_dir + "/smoothed.csv", data);
  csv::write_csv(out_dir + "/curve_meta.csv", meta);
}

void stage_register(const PipelineConfig& config, const std::string& out_dir) {
  const CurveSet set = load_smoothed(config, out_dir);

  for (const std::string& cls : class_values(set)) {
    std::vector<SampledCurve> members;
    for (const auto& c : set.curves)
      if (set.classes.at(c.id) == cls) members.push_back(c);

    std::vector<registration::RegistrationResult> results;
    if (config.registration_method == "auc") {
      results = registration::register_auc(members, cls);
    } else {
      registration::ClassOptions opts;
      opts.nstar = config.nstar;
      opts.seed = config.seed;
      if (config.lambda == "auto") {
        opts.lambda_auto = true;
      } else {
        opts.lambda = csv::parse_double(config.lambda, "lambda");
      }
      results = registration::register_class(members, cls, opts);
    }

    csv::Table t;
    t.header = {"id", "j", "h", "h_inv", "w"};
    for (const auto& r : results)
      for (int j = 0; j < r.h.values.size(); ++j)
        t.rows.push_back({r.id, std::to_string(j),
                          csv::format_double(r.h.values[j]),
                          csv::format_double(r.h_inverse.values[j]),
                          csv::format_double(r.registered[j])});
    csv::write_csv(out_dir + "/registration_" + sanitize(cls) + ".csv", t);
  }
}

namespace {

struct Registered {
  std::vector<std::string> ids;
  Matrix w;      // N x (m+1)
  Matrix h;      // N x (m+1)
};

Registered load_registered(const PipelineConfig& config,
                           const std::string& out_dir) {
  const CurveSet set = load_smoothed(config, out_dir);
  std::map<std::string, std::pair<Vector, Vector>> rows;  // id -> (h, w)
  for (const std::string& cls : class_values(set)) {
    const std::string path =
        out_dir + "/registration_" + sanitize(cls) + ".csv";
    const csv::Table t = csv::read_csv(path);
    const int c_id = t.require_column("id", path);
    const int c_j = t.require_column("j", path);
    const int c_h = t.require_column("h", path);
    const int c_w = t.require_column("w", path);
    for (const auto& row : t.rows) {
      auto& entry = rows[row[c_id]];
      if (entry.first.size() == 0) {
        entry.first = Vector::Zero(config.grid_size);
        entry.second = Vector::Zero(config.grid_size);
      }
      const int j = static_cast<int>(csv::parse_double(row[c_j], path));
      entry.first[j] = csv::parse_double(row[c_h], path);
      entry.second[j] = csv::parse_double(row[c_w], path);
    }
  }
  Registered reg;
  reg.w.resize(rows.size(), config.grid_size);
  reg.h.resize(rows.size(), config.grid_size);
  int i = 0;
  for (const auto& [id, hw] : rows) {
    reg.ids.push_back(id);
    reg.h.row(i) = hw.first.transpose();
    reg.w.row(i) = hw.second.transpose();
    ++i;
  }
  return reg;
}

}  // namespace

void stage_transform(const PipelineConfig& config,
                     const std::string& out_dir) {
  const Registered reg = load_registered(config, out_dir);
  const int m = config.grid_size - 1;
  csv::Table t;
  t.header = {"id"};
  for (int j = 1; j <= m; ++j) t.header.push_back("s" + std::to_string(j));
  for (std::size_t i = 0; i < reg.ids.size(); ++i) {
    const WarpingFunction h =
        WarpingFunction::from_values(reg.h.row(i).transpose());
    const clr::CompositionVector s = clr::forward(h);
    std::vector<std::string> row{reg.ids[i]};
    for (int j = 0; j < m; ++j)
      row.push_back(csv::format_double(s.s[j]));
    t.rows.push_back(std::move(row));
  }
  csv::write_csv(out_dir + "/phase_clr.csv", t);
}

void stage_decompose(const PipelineConfig& config,
                     const std::string& out_dir) {
  const Registered reg = load_registered(config, out_dir);
  const ScoreTable clr_vecs = read_scores(out_dir + "/phase_clr.csv");
  const int g = config.grid_size;

  fpca::SelectionOptions sel;
  sel.metric = config.metric == "rms" ? fpca::DeviationMetric::kRms
                                      : fpca::DeviationMetric::kPeak;
  sel.amplitude_threshold = config.jnd_amp;
  sel.phase_threshold = config.jnd_phase;

  const auto amp_basis =
      fpca::fit_fpca(reg.w, make_grid(g), fpca::Quadrature::kTrapezoid);
  const int m_w =
      fpca::select_components(amp_basis, fpca::ProcessKind::kAmplitude, sel);
  const auto phase_basis = fpca::fit_fpca(
      clr_vecs.scores, midpoint_grid(g - 1), fpca::Quadrature::kCell);
  const int m_s =
      fpca::select_components(phase_basis, fpca::ProcessKind::kPhase, sel);

  save_basis(amp_basis, m_w, out_dir + "/basis_amplitude.json");
  save_basis(phase_basis, m_s, out_dir + "/basis_phase.json");

  write_scores(out_dir + "/scores_amplitude.csv", reg.ids,
               fpca::project_all(amp_basis, reg.w, m_w), "A");
  write_scores(out_dir + "/scores_phase.csv", clr_vecs.ids,
               fpca::project_all(phase_basis, clr_vecs.scores, m_s), "A");

  const std::vector<std::pair<std::string, const fpca::EigenBasis*>> bases = {
      {"amplitude", &amp_basis}, {"phase", &phase_basis}};
  for (const auto& [name, basis] : bases) {
    csv::Table t;
    t.header = {"component", "percent", "cumulative"};
    const auto table = fpca::variance_table(*basis);
    for (std::size_t p = 0; p < table.size(); ++p)
      t.rows.push_back({"FPC" + std::to_string(p + 1),
                        csv::format_double(table[p].percent),
                        csv::format_double(table[p].cumulative_percent)});
    csv::write_csv(out_dir + "/variance_" + name + ".csv", t);
  }
}

namespace {

mvlme::DesignInputs gather_design_inputs(const PipelineConfig& config,
                                         const std::string& out_dir) {
  const CurveSet set = load_smoothed(config, out_dir);
  const ScoreTable amp = read_scores(out_dir + "/scores_amplitude.csv");
  const ScoreTable pha = read_scores(out_dir + "/scores_phase.csv");

  std::map<std::string, int> amp_row, pha_row;
  for (std::size_t i = 0; i < amp.ids.size(); ++i) amp_row[amp.ids[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < pha.ids.size(); ++i) pha_row[pha.ids[i]] = static_cast<int>(i);

  mvlme::DesignInputs inputs;
  const int n = static_cast<int>(set.curves.size());
  inputs.amplitude_scores.resize(n, amp.scores.cols());
  inputs.phase_scores.resize(n, pha.scores.cols());
  inputs.durations.resize(n);
  for (int i = 0; i < n; ++i) {
    const std::string& id = set.curves[i].id;
    if (!amp_row.count(id) || !pha_row.count(id))
      throw UnknownId("scores missing for id '" + id + "'");
    inputs.amplitude_scores.row(i) = amp.scores.row(amp_row[id]);
    inputs.phase_scores.row(i) = pha.scores.row(pha_row[id]);
    inputs.durations[i] = set.curves[i].duration;
  }
  inputs.covariates = set.covariates;
  inputs.formula = config.formula;
  return inputs;
}

}  // namespace

void stage_fit(const PipelineConfig& config, const std::string& out_dir) {
  const mvlme::DesignInputs inputs = gather_design_inputs(config, out_dir);
  auto [spec, responses] = mvlme::build_design(inputs);

  mvlme::FitOptions opts;
  opts.scalar_residual = config.scalar_residual;
  opts.max_evaluations = config.max_evals;
  opts.gradient_tol = config.tol;
  const mvlme::FittedModel model = mvlme::fit(spec, responses, opts);
  save_model(model, out_dir + "/model.json");

  csv::Table fixed;
  fixed.header = {"term", "component", "estimate", "se"};
  for (int t = 0; t < model.b_hat.rows(); ++t)
    for (int c = 0; c < model.b_hat.cols(); ++c)
      fixed.rows.push_back({model.fixed_names[t], model.component_names[c],
                            csv::format_double(model.b_hat(t, c)),
                            csv::format_double(model.b_se(t, c))});
  csv::write_csv(out_dir + "/fixed_effects.csv", fixed);

  csv::Table sds;
  sds.header = {"effect"};
  for (const auto& n : model.component_names) sds.header.push_back(n);
  const auto sd_row = [&](const std::string& name, const Vector& sd) {
    std::vector<std::string> row{name};
    for (int c = 0; c < sd.size(); ++c)
      row.push_back(csv::format_double(sd[c]));
    sds.rows.push_back(std::move(row));
  };
  sd_row("Speaker", model.sigma_r1.diagonal().cwiseSqrt());
  sd_row("Sentence", model.sigma_r2.diagonal().cwiseSqrt());
  sd_row("Residual", model.residual_sd);
  csv::write_csv(out_dir + "/random_sd.csv", sds);

  const std::vector<std::pair<std::string, const Matrix*>> effects = {
      {"speaker", &model.sigma_r1}, {"sentence", &model.sigma_r2}};
  for (const auto& [name, sigma] : effects) {
    const Matrix corr = mvlme::correlation_matrix(*sigma);
    csv::Table t;
    t.header = {"component"};
    for (const auto& n : model.component_names) t.header.push_back(n);
    for (int i = 0; i < corr.rows(); ++i) {
      std::vector<std::string> row{model.component_names[i]};
      for (int j = 0; j < corr.cols(); ++j)
        row.push_back(std::isnan(corr(i, j)) ? "NA"
                                             : csv::format_double(corr(i, j)));
      t.rows.push_back(std::move(row));
    }
    csv::write_csv(out_dir + "/corr_" + name + ".csv", t);
  }
}

void stage_reconstruct(const PipelineConfig& config,
                       const std::string& out_dir) {
  const CurveSet set = load_smoothed(config, out_dir);
  const mvlme::FittedModel model = load_model(out_dir + "/model.json");
  int m_w = 0, m_s = 0;
  const auto amp_basis =
      load_basis(out_dir + "/basis_amplitude.json", &m_w);
  const auto phase_basis = load_basis(out_dir + "/basis_phase.json", &m_s);

  // Rebuild the design to get covariate rows and group indices.
  const mvlme::DesignInputs inputs = gather_design_inputs(config, out_dir);
  auto [spec, responses] = mvlme::build_design(inputs);
  (void)responses;

  csv::Table t;
  t.header = {"id", "t", "observed", "estimated"};
  for (int i = 0; i < static_cast<int>(set.curves.size()); ++i) {
    const SampledCurve& curve = set.curves[i];
    Vector predicted = (spec.X.row(i) * model.b_hat).transpose();
    if (config.blup_speaker)
      predicted += model.blup1.row(spec.group1[i]).transpose();
    if (config.blup_sentence)
      predicted += model.blup2.row(spec.group2[i]).transpose();

    const Vector amp_scores = predicted.head(m_w);
    const Vector pha_scores = predicted.segment(m_w, m_s);
    const double t_hat = std::max(predicted[predicted.size() - 1], 1e-3);
    const SampledCurve est = fpca::reconstruct_curve(
        amp_basis, phase_basis, amp_scores, pha_scores, t_hat, curve.id);

    const double span_obs = curve.duration / 100.0;  // seconds
    const double span_est = t_hat / 100.0;
    for (int j = 0; j < curve.values.size(); ++j) {
      const double time = curve.grid[j] * span_obs;
      const double u_est = std::clamp(time / span_est, 0.0, 1.0);
      const double estimated = interp_linear(est.grid, est.values, u_est);
      t.rows.push_back({curve.id, csv::format_double(time),
                        csv::format_double(curve.values[j]),
                        csv::format_double(estimated)});
    }
  }
  csv::write_csv(out_dir + "/reconstruction.csv", t);
}

// ---- run with manifest caching ----------------------------------------------

bool RunReport::stage_cached(const std::string& name) const {
  for (const auto& s : stages)
    if (s.name == name) return s.cached;
  return false;
}

namespace {

struct StagePlan {
  std::string name;
  std::string config_key;
  std::vector<std::string> external_inputs;   // absolute or cwd-relative
  std::vector<std::string> upstream;          // stage names
  std::function<void()> execute;
  std::vector<std::string> fixed_outputs;     // known ahead of execution
  bool discover_outputs = false;              // registration's per-class files
  std::string discover_prefix;
};

std::string config_section(const PipelineConfig& c, const std::string& stage) {
  std::ostringstream s;
  if (stage == "simulate") {
    s << "speakers=" << c.sim.n_speakers << ";sentences=" << c.sim.n_sentences
      << ";classes=" << c.sim.n_classes << ";curves=" << c.sim.n_curves
      << ";grid=" << c.sim.grid_size
      << ";amodes=" << c.sim.n_amplitude_modes
      << ";pmodes=" << c.sim.n_phase_modes
      << ";readings=" << c.sim.readings_per_curve
      << ";noise=" << csv::format_double(c.sim.noise_sd)
      << ";missing=" << csv::format_double(c.sim.missing_probability)
      << ";base_duration=" << csv::format_double(c.sim.base_duration)
      << ";seed=" << c.seed;
  } else if (stage == "smooth") {
    s << "grid_size=" << c.grid_size
      << ";bandwidth=" << csv::format_double(c.bandwidth)
      << ";mode=" << c.bandwidth_mode
      << ";max_missing=" << csv::format_double(c.max_missing_fraction);
    for (const auto& col : c.covariate_columns) s << ";cov=" << col;
  } else if (stage == "register") {
    s << "method=" << c.registration_method << ";lambda=" << c.lambda
      << ";nstar=" << c.nstar << ";class_column=" << c.class_column
      << ";seed=" << c.seed;
  } else if (stage == "transform") {
    s << "grid_size=" << c.grid_size;
  } else if (stage == "decompose") {
    s << "jnd_amp=" << csv::format_double(c.jnd_amp)
      << ";jnd_phase=" << csv::format_double(c.jnd_phase)
      << ";metric=" << c.metric;
  } else if (stage == "fit") {
    s << "formula=" << c.formula << ";scalar=" << c.scalar_residual
      << ";max_evals=" << c.max_evals
      << ";tol=" << csv::format_double(c.tol);
    for (const auto& col : c.numeric_covariates) s << ";numeric=" << col;
  } else if (stage == "reconstruct") {
    s << "blup_speaker=" << c.blup_speaker
      << ";blup_sentence=" << c.blup_sentence;
  }
  return s.str();
}

}  // namespace

RunReport run(const PipelineConfig& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  Manifest manifest = Manifest::load(out_dir);
  RunReport report;

  const bool simulate_first = config.curve_file.empty();

  std::vector<StagePlan> plan;
  if (simulate_first) {
    plan.push_back({"simulate", config_section(config, "simulate"), {}, {},
                    [&] { stage_simulate(config, out_dir); },
                    {"curves.csv", "covariates.csv", "truth.json"}, false, ""});
  }
  plan.push_back(
      {"smooth", config_section(config, "smooth"),
       simulate_first
           ? std::vector<std::string>{}
           : std::vector<std::string>{config.curve_file, config.covariate_file},
       simulate_first ? std::vector<std::string>{"simulate"}
                      : std::vector<std::string>{},
       [&] { stage_smooth(config, out_dir); },
       {"smoothed.csv", "curve_meta.csv"}, false, ""});
  plan.push_back({"register", config_section(config, "register"), {},
                  {"smooth"},
                  [&] { stage_register(config, out_dir); },
                  {}, true, "registration_"});
  plan.push_back({"transform", config_section(config, "transform"), {},
                  {"register"},
                  [&] { stage_transform(config, out_dir); },
                  {"phase_clr.csv"}, false, ""});
  plan.push_back({"decompose", config_section(config, "decompose"), {},
                  {"register", "transform"},
                  [&] { stage_decompose(config, out_dir); },
                  {"basis_amplitude.json", "basis_phase.json",
                   "scores_amplitude.csv", "scores_phase.csv",
                   "variance_amplitude.csv", "variance_phase.csv"},
                  false, ""});
  plan.push_back({"fit", config_section(config, "fit"), {},
                  {"smooth", "decompose"},
                  [&] { stage_fit(config, out_dir); },
                  {"model.json", "fixed_effects.csv", "random_sd.csv",
                   "corr_speaker.csv", "corr_sentence.csv"},
                  false, ""});
  plan.push_back({"reconstruct", config_section(config, "reconstruct"), {},
                  {"smooth", "decompose", "fit"},
                  [&] { stage_reconstruct(config, out_dir); },
                  {"reconstruction.csv"}, false, ""});

  std::map<std::string, std::string> stage_keys;

  for (const auto& stage : plan) {
    std::uint64_t h = fnv1a(stage.name);
    h = fnv1a(stage.config_key, h);
    for (const auto& f : stage.external_inputs)
      h = fnv1a(hash_file_hex(f), h);
    for (const auto& up : stage.upstream) {
      h = fnv1a(stage_keys.at(up), h);
      // Upstream content hashes so a manually edited artifact invalidates.
      if (manifest.stages.contains(up))
        for (const auto& [file, hash] :
             manifest.stages[up]["outputs"].items()) {
          (void)file;
          h = fnv1a(hash.get<std::string>(), h);
        }
    }
    const std::string key = hex64(h);
    stage_keys[stage.name] = key;

    bool cached = false;
    if (manifest.stages.contains(stage.name) &&
        manifest.stages[stage.name]["key"] == key) {
      cached = true;
      for (const auto& [file, hash] :
           manifest.stages[stage.name]["outputs"].items()) {
        const std::string path = out_dir + "/" + file;
        if (!fs::exists(path) || hash_file_hex(path) != hash.get<std::string>()) {
          cached = false;
          break;
        }
      }
    }

    if (!cached) {
      stage.execute();
      json outputs = json::object();
      if (stage.discover_outputs) {
        std::vector<std::string> found;
        for (const auto& entry : fs::directory_iterator(out_dir)) {
          const std::string name = entry.path().filename().string();
          if (name.rfind(stage.discover_prefix, 0) == 0)
            found.push_back(name);
        }
        std::sort(found.begin(), found.end());
        for (const auto& name : found)
          outputs[name] = hash_file_hex(out_dir + "/" + name);
      } else {
        for (const auto& name : stage.fixed_outputs)
          outputs[name] = hash_file_hex(out_dir + "/" + name);
      }
      manifest.stages[stage.name] = {{"key", key}, {"outputs", outputs}};
      manifest.save(out_dir);
    }
    report.stages.push_back({stage.name, cached});
  }
  manifest.save(out_dir);
  return report;
}

}  // namespace warpfit::pipeline
