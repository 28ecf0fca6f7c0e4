#include "warpfit/clr.hpp"
#include "warpfit/csv.hpp"
#include "warpfit/pipeline.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace warpfit;

pipeline::PipelineConfig load(const std::string& config_path, long long seed) {
  pipeline::PipelineConfig config = config_path.empty()
                                        ? pipeline::PipelineConfig{}
                                        : pipeline::load_config(config_path);
  if (seed >= 0) config.seed = static_cast<std::uint64_t>(seed);
  return config;
}

// Debug helper for the compositional transform: CSV in, CSV out.
// clr: rows are warp values h0..hm -> coordinates s1..sm.
// clr-inverse: rows are coordinates s1..sm -> warp values h0..hm.
void transform_vectors(const std::string& mode, const std::string& in_path,
                       const std::string& out_path) {
  const csv::Table in = csv::read_csv(in_path);
  csv::Table out;
  const int cols = static_cast<int>(in.header.size()) - 1;
  out.header.push_back("id");
  if (mode == "clr") {
    for (int j = 1; j < cols; ++j)
      out.header.push_back("s" + std::to_string(j));
  } else {
    for (int j = 0; j <= cols; ++j)
      out.header.push_back("h" + std::to_string(j));
  }
  for (const auto& row : in.rows) {
    Vector v(cols);
    for (int j = 0; j < cols; ++j)
      v[j] = csv::parse_double(row[j + 1], in_path);
    std::vector<std::string> out_row{row[0]};
    if (mode == "clr") {
      const auto s = clr::forward(WarpingFunction::from_values(v));
      for (int j = 0; j < s.size(); ++j)
        out_row.push_back(csv::format_double(s.s[j]));
    } else {
      const auto h = clr::inverse(v);
      for (int j = 0; j < h.values.size(); ++j)
        out_row.push_back(csv::format_double(h.values[j]));
    }
    out.rows.push_back(std::move(out_row));
  }
  csv::write_csv(out_path, out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"warpfit: joint amplitude/phase/duration modeling of sampled curves"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  long long seed = -1;
  app.add_option("--config", config_path, "configuration file");
  app.add_option("--out", out_dir, "artifacts directory");
  app.add_option("--seed", seed, "root seed (overrides the config)");

  auto* cmd_run = app.add_subcommand("run", "full pipeline with caching");
  auto* cmd_simulate = app.add_subcommand("simulate", "synthetic corpus");
  auto* cmd_smooth = app.add_subcommand("smooth", "screen and smooth curves");

  auto* cmd_register = app.add_subcommand("register", "estimate warps");
  std::string method, lambda, class_column;
  long long nstar = -1;
  cmd_register->add_option("--method", method, "pairwise|auc");
  cmd_register->add_option("--lambda", lambda, "penalty value or 'auto'");
  cmd_register->add_option("--nstar", nstar, "pairwise subsample size");
  cmd_register->add_option("--class-column", class_column,
                           "registration class column");

  auto* cmd_transform = app.add_subcommand(
      "transform", "warps to CLR coordinates (stage or vector debug)");
  std::string transform_mode, transform_in, transform_out;
  cmd_transform->add_option("mode", transform_mode,
                            "clr|clr-inverse (vector debug mode)");
  cmd_transform->add_option("--in", transform_in, "input CSV of vectors");
  cmd_transform->add_option("--out-file", transform_out, "output CSV");

  auto* cmd_decompose = app.add_subcommand("decompose", "FPCA per process");
  std::string process = "both";
  double jnd_amp = -1, jnd_phase = -1;
  std::string metric;
  cmd_decompose->add_option("--process", process, "amplitude|phase|both");
  cmd_decompose->add_option("--jnd-amp", jnd_amp, "amplitude JND (Hz)");
  cmd_decompose->add_option("--jnd-phase", jnd_phase, "tempo JND (relative)");
  cmd_decompose->add_option("--metric", metric, "peak|rms");

  auto* cmd_fit = app.add_subcommand("fit", "multivariate mixed model");
  std::string formula_file;
  bool scalar_residual = false;
  long long max_evals = -1;
  double tol = -1;
  cmd_fit->add_option("--formula", formula_file, "file with the formula");
  cmd_fit->add_flag("--scalar-residual", scalar_residual,
                    "profile one shared residual variance");
  cmd_fit->add_option("--max-evals", max_evals, "objective evaluation budget");
  cmd_fit->add_option("--tol", tol, "gradient norm tolerance");

  auto* cmd_reconstruct =
      app.add_subcommand("reconstruct", "observed vs estimated trajectories");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_transform->parsed() && !transform_mode.empty()) {
      if (transform_mode != "clr" && transform_mode != "clr-inverse")
        throw ConfigError("transform mode must be clr or clr-inverse");
      if (transform_in.empty() || transform_out.empty())
        throw ConfigError("transform vector mode needs --in and --out-file");
      transform_vectors(transform_mode, transform_in, transform_out);
      return 0;
    }

    if (out_dir.empty()) throw ConfigError("--out is required");
    pipeline::PipelineConfig config = load(config_path, seed);

    if (cmd_register->parsed()) {
      if (!method.empty()) config.registration_method = method;
      if (!lambda.empty()) config.lambda = lambda;
      if (nstar > 0) config.nstar = static_cast<int>(nstar);
      if (!class_column.empty()) config.class_column = class_column;
      config.validate();
    }
    if (cmd_decompose->parsed()) {
      if (jnd_amp > 0) config.jnd_amp = jnd_amp;
      if (jnd_phase > 0) config.jnd_phase = jnd_phase;
      if (!metric.empty()) config.metric = metric;
      config.validate();
    }
    if (cmd_fit->parsed()) {
      if (!formula_file.empty()) {
        std::ifstream in(formula_file);
        if (!in) throw ConfigError(formula_file + ": cannot open formula file");
        std::stringstream ss;
        ss << in.rdbuf();
        config.formula = ss.str();
      }
      if (scalar_residual) config.scalar_residual = true;
      if (max_evals > 0) config.max_evals = static_cast<int>(max_evals);
      if (tol > 0) config.tol = tol;
      config.validate();
    }

    if (cmd_run->parsed()) {
      const auto report = pipeline::run(config, out_dir);
      for (const auto& s : report.stages)
        std::cout << s.name << (s.cached ? " (cached)" : " (computed)")
                  << "\n";
    } else if (cmd_simulate->parsed()) {
      pipeline::stage_simulate(config, out_dir);
    } else if (cmd_smooth->parsed()) {
      pipeline::stage_smooth(config, out_dir);
    } else if (cmd_register->parsed()) {
      pipeline::stage_register(config, out_dir);
    } else if (cmd_transform->parsed()) {
      pipeline::stage_transform(config, out_dir);
    } else if (cmd_decompose->parsed()) {
      pipeline::stage_decompose(config, out_dir);
    } else if (cmd_fit->parsed()) {
      pipeline::stage_fit(config, out_dir);
    } else if (cmd_reconstruct->parsed()) {
      pipeline::stage_reconstruct(config, out_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
