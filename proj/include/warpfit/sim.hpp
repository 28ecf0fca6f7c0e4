#pragma once

#include "warpfit/design.hpp"
#include "warpfit/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace warpfit::sim {

// Generative mirror of the fitted model: curves are built from planted
// amplitude/phase modes and score vectors drawn with crossed speaker and
// sentence effects, then sampled on a raw time grid with observation noise.
struct SyntheticSpec {
  int n_speakers = 5;
  int n_sentences = 50;
  int n_classes = 3;
  int n_curves = 400;
  int grid_size = 16;
  int n_amplitude_modes = 2;
  int n_phase_modes = 2;
  int readings_per_curve = 16;
  double noise_sd = 1.0;
  double missing_probability = 0.0;
  double base_level = 120.0;     // Hz
  double base_duration = 16.0;   // tens of ms

  // p x p with p = modes + modes + 1; empty selects the built-in defaults
  // (a planted phase-duration coupling in the sentence effect).
  Matrix sigma_r1, sigma_r2;
  Vector residual_sd;            // p entries
  Matrix class_effects;          // n_classes x p score shifts; empty = default

  int p() const { return n_amplitude_modes + n_phase_modes + 1; }
  void validate() const;

  // The built-in covariance defaults for this spec's dimensions.
  static Matrix default_sigma_speaker(int m_w, int m_s);
  static Matrix default_sigma_sentence(int m_w, int m_s);
  static Vector default_residual_sd(int m_w, int m_s);
};

struct SimOutput {
  std::vector<RawCurve> curves;
  design::CovariateTable covariates;

  // Ground truth for recovery tests.
  Matrix true_scores;       // N x p, duration last
  Matrix sigma_r1, sigma_r2;
  Vector residual_sd;
  Matrix class_effects;
  Vector amplitude_mean;    // on the m+1 grid
  Matrix amplitude_modes;   // columns, orthonormal (trapezoid)
  Matrix phase_modes;       // columns on cell midpoints, zero-sum,
                            // orthonormal (cell weights)
};

SimOutput simulate(const SyntheticSpec& spec, std::uint64_t seed);

// Smooth orthonormal mode sets used by the generator; exposed for tests.
Matrix make_amplitude_modes(int grid_size, int count);
Matrix make_phase_modes(int num_cells, int count);

}  // namespace warpfit::sim
