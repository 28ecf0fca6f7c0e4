#pragma once

#include "warpfit/types.hpp"

#include <string>
#include <vector>

namespace warpfit::fpca {

enum class Quadrature {
  kTrapezoid,  // curves sampled on the m+1 point grid
  kCell,       // step processes on m cell midpoints (exact for steps)
};

// Mean, orthonormal eigenfunctions and eigenvalues of one process.
// Orthonormality is with respect to the quadrature-weighted inner product
// on the stored grid.
struct EigenBasis {
  Vector grid;
  Vector weights;       // quadrature weights matching the grid
  Vector mean;
  Matrix eigenfunctions;  // columns, unit quadrature norm
  Vector eigenvalues;     // nonincreasing, clamped at 0

  int size() const { return static_cast<int>(grid.size()); }
  int components() const { return static_cast<int>(eigenvalues.size()); }

  double inner(const Vector& a, const Vector& b) const {
    return (a.array() * b.array() * weights.array()).sum();
  }
};

// Sample mean and eigendecomposition of the quadrature-weighted sample
// covariance. Rows of `samples` are observations. Sign convention: the
// entry of largest magnitude in each eigenfunction is positive.
EigenBasis fit_fpca(const Matrix& samples, const Vector& grid,
                    Quadrature quadrature);

// Scores of one sample: quadrature inner products of the centered sample
// with the first `count` eigenfunctions (all when count < 0).
Vector project(const EigenBasis& basis, const Vector& sample, int count = -1);

// Score matrix for many samples (rows).
Matrix project_all(const EigenBasis& basis, const Matrix& samples,
                   int count = -1);

enum class DeviationMetric { kPeak, kRms };

struct SelectionOptions {
  DeviationMetric metric = DeviationMetric::kPeak;
  double amplitude_threshold = 10.0;  // Hz
  double phase_threshold = 0.05;      // relative tempo distortion
};

enum class ProcessKind { kAmplitude, kPhase };

// Per-component perceptual deviation: sqrt(lambda_p) * sup|phi_p| (peak)
// or sqrt(lambda_p) (rms); phase deviations are mapped through exp(.)-1
// because the phase process is a log-derivative.
Vector component_deviations(const EigenBasis& basis, ProcessKind kind,
                            DeviationMetric metric);

// Number of components whose deviation clears the threshold; at least 1.
int select_components(const EigenBasis& basis, ProcessKind kind,
                      const SelectionOptions& options = {});

struct VarianceShare {
  double percent = 0.0;
  double cumulative_percent = 0.0;
};

std::vector<VarianceShare> variance_table(const EigenBasis& basis);

// Truncated reconstruction of one process sample from scores.
Vector reconstruct_process(const EigenBasis& basis, const Vector& scores,
                           int count = -1);

// Full curve on physical time from amplitude scores, phase scores and
// duration: w-hat composed with the inverse of the warp implied by s-hat,
// evaluated on the common grid scaled to [0, T].
SampledCurve reconstruct_curve(const EigenBasis& amplitude,
                               const EigenBasis& phase,
                               const Vector& amplitude_scores,
                               const Vector& phase_scores, double duration,
                               const std::string& id = {});

}  // namespace warpfit::fpca
