#include "warpfit/fpca.hpp"

#include "warpfit/clr.hpp"
#include "warpfit/registration.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace warpfit::fpca {

EigenBasis fit_fpca(const Matrix& samples, const Vector& grid,
                    Quadrature quadrature) {
  const int n = static_cast<int>(samples.rows());
  const int g = static_cast<int>(samples.cols());
  if (n < 2) throw DegenerateSample("fit_fpca: need at least 2 samples");
  if (grid.size() != g)
    throw GridMismatch("fit_fpca: grid/sample size mismatch");

  EigenBasis basis;
  basis.grid = grid;
  basis.weights = quadrature == Quadrature::kTrapezoid
                      ? trapezoid_weights(g)
                      : cell_weights(g);
  basis.mean = samples.colwise().mean();

  Matrix centered = samples.rowwise() - basis.mean.transpose();
  Matrix cov = (centered.transpose() * centered) / (n - 1);

  // Symmetrized quadrature-weighted operator W^1/2 C W^1/2.
  const Vector sqrt_w = basis.weights.array().sqrt();
  Matrix sym = sqrt_w.asDiagonal() * cov * sqrt_w.asDiagonal();
  sym = 0.5 * (sym + sym.transpose().eval());

  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success)
    throw NumericalBreakdown("fit_fpca: eigendecomposition failed");

  basis.eigenvalues.resize(g);
  basis.eigenfunctions.resize(g, g);
  for (int p = 0; p < g; ++p) {
    const int src = g - 1 - p;  // solver sorts ascending
    double lambda = solver.eigenvalues()[src];
    if (lambda < 0.0) lambda = 0.0;
    basis.eigenvalues[p] = lambda;
    Vector phi = solver.eigenvectors().col(src).array() / sqrt_w.array();
    int peak = 0;
    for (int j = 1; j < g; ++j)
      if (std::abs(phi[j]) > std::abs(phi[peak])) peak = j;
    if (phi[peak] < 0.0) phi = -phi;
    basis.eigenfunctions.col(p) = phi;
  }
  return basis;
}

Vector project(const EigenBasis& basis, const Vector& sample, int count) {
  if (sample.size() != basis.grid.size())
    throw GridMismatch("project: sample not on basis grid");
  const int m = count < 0 ? basis.components() : count;
  Vector centered = sample - basis.mean;
  Vector scores(m);
  for (int p = 0; p < m; ++p)
    scores[p] = basis.inner(centered, basis.eigenfunctions.col(p));
  return scores;
}

Matrix project_all(const EigenBasis& basis, const Matrix& samples,
                   int count) {
  const int m = count < 0 ? basis.components() : count;
  Matrix scores(samples.rows(), m);
  for (int i = 0; i < samples.rows(); ++i)
    scores.row(i) = project(basis, samples.row(i).transpose(), m).transpose();
  return scores;
}

Vector component_deviations(const EigenBasis& basis, ProcessKind kind,
                            DeviationMetric metric) {
  const int n = basis.components();
  Vector dev(n);
  for (int p = 0; p < n; ++p) {
    const double sd = std::sqrt(basis.eigenvalues[p]);
    double d = metric == DeviationMetric::kPeak
                   ? sd * basis.eigenfunctions.col(p).cwiseAbs().maxCoeff()
                   : sd;
    if (kind == ProcessKind::kPhase) d = std::expm1(d);
    dev[p] = d;
  }
  return dev;
}

int select_components(const EigenBasis& basis, ProcessKind kind,
                      const SelectionOptions& options) {
  const double threshold = kind == ProcessKind::kAmplitude
                               ? options.amplitude_threshold
                               : options.phase_threshold;
  const Vector dev = component_deviations(basis, kind, options.metric);
  int count = 0;
  for (int p = 0; p < dev.size(); ++p)
    if (dev[p] >= threshold) ++count;
  return std::max(count, 1);
}

std::vector<VarianceShare> variance_table(const EigenBasis& basis) {
  const double total = basis.eigenvalues.sum();
  std::vector<VarianceShare> table(basis.components());
  double cum = 0.0;
  for (int p = 0; p < basis.components(); ++p) {
    const double share =
        total > 0.0 ? 100.0 * basis.eigenvalues[p] / total : 0.0;
    cum += share;
    table[p] = {share, cum};
  }
  return table;
}

Vector reconstruct_process(const EigenBasis& basis, const Vector& scores,
                           int count) {
  const int m = count < 0 ? static_cast<int>(scores.size())
                          : std::min<int>(count, scores.size());
  Vector out = basis.mean;
  for (int p = 0; p < m; ++p)
    out += scores[p] * basis.eigenfunctions.col(p);
  return out;
}

SampledCurve reconstruct_curve(const EigenBasis& amplitude,
                               const EigenBasis& phase,
                               const Vector& amplitude_scores,
                               const Vector& phase_scores, double duration,
                               const std::string& id) {
  const Vector w_hat = reconstruct_process(amplitude, amplitude_scores);
  const Vector s_hat = reconstruct_process(phase, phase_scores);
  const WarpingFunction h_hat = clr::inverse(s_hat);
  const WarpingFunction h_inv = registration::invert_warp(h_hat);

  SampledCurve out;
  out.id = id;
  out.grid = amplitude.grid;
  out.duration = duration;
  const int n = static_cast<int>(out.grid.size());
  out.values.resize(n);
  for (int j = 0; j < n; ++j) {
    const double u = h_inv(out.grid[j]);
    out.values[j] = interp_linear(amplitude.grid, w_hat, u);
  }
  return out;
}

}  // namespace warpfit::fpca
