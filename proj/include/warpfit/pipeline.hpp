#pragma once

#include "warpfit/fpca.hpp"
#include "warpfit/mvlme.hpp"
#include "warpfit/sim.hpp"
#include "warpfit/types.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace warpfit::pipeline {

struct PipelineConfig {
  // prep
  int grid_size = 16;
  double bandwidth = 0.05;
  std::string bandwidth_mode = "fixed";  // fixed | cv
  double max_missing_fraction = 0.05;
  std::string curve_file;
  std::string covariate_file;
  std::vector<std::string> covariate_columns;
  std::vector<std::string> numeric_covariates;

  // register
  std::string registration_method = "pairwise";  // pairwise | auc
  std::string lambda = "auto";                   // auto | <number>
  int nstar = 30;
  std::string class_column = "class";

  // decompose
  double jnd_amp = 10.0;
  double jnd_phase = 0.05;
  std::string metric = "peak";  // peak | rms

  // fit
  std::string formula = "class";
  bool scalar_residual = false;
  int max_evals = 500;
  double tol = 1e-6;

  // reconstruct
  bool blup_speaker = true;
  bool blup_sentence = true;

  std::uint64_t seed = 0;

  sim::SyntheticSpec sim;

  void validate() const;
};

PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::string& path);

// ---- artifact IO -------------------------------------------------------

void save_basis(const fpca::EigenBasis& basis, int retained,
                const std::string& path);
fpca::EigenBasis load_basis(const std::string& path, int* retained = nullptr);

void save_model(const mvlme::FittedModel& model, const std::string& path);
mvlme::FittedModel load_model(const std::string& path);

// ---- stages -------------------------------------------------------------

void stage_simulate(const PipelineConfig& config, const std::string& out_dir);
void stage_smooth(const PipelineConfig& config, const std::string& out_dir);
void stage_register(const PipelineConfig& config, const std::string& out_dir);
void stage_transform(const PipelineConfig& config, const std::string& out_dir);
void stage_decompose(const PipelineConfig& config, const std::string& out_dir);
void stage_fit(const PipelineConfig& config, const std::string& out_dir);
void stage_reconstruct(const PipelineConfig& config,
                       const std::string& out_dir);

struct StageReport {
  std::string name;
  bool cached = false;
};

struct RunReport {
  std::vector<StageReport> stages;
  bool stage_cached(const std::string& name) const;
};

// Full chain with manifest-based caching: a stage reruns only when its
// config section, seed, or upstream artifacts changed. When `curve_file`
// is empty the corpus comes from the simulate stage.
RunReport run(const PipelineConfig& config, const std::string& out_dir);

std::string hash_file_hex(const std::string& path);

}  // namespace warpfit::pipeline
