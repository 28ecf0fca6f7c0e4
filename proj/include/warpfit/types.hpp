#pragma once

#include <Eigen/Core>

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace warpfit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---- error types ------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TooFewPoints : Error { using Error::Error; };
struct SingularFit : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct DuplicateId : Error { using Error::Error; };
struct MissingCovariate : Error { using Error::Error; };
struct ZeroIncrement : Error { using Error::Error; };
struct NonMonotone : Error { using Error::Error; };
struct EmptyPool : Error { using Error::Error; };
struct OptimizerDiverged : Error { using Error::Error; };
struct NonPositiveCurve : Error { using Error::Error; };
struct GridMismatch : Error { using Error::Error; };
struct DegenerateSample : Error { using Error::Error; };
struct RankDeficientDesign : Error { using Error::Error; };
struct MissingLevel : Error { using Error::Error; };
struct NotPositiveDefinite : Error { using Error::Error; };
struct NumericalBreakdown : Error { using Error::Error; };
struct TooLarge : Error { using Error::Error; };
struct NoConvergence : Error { using Error::Error; };
struct InvalidSpec : Error { using Error::Error; };
struct UnknownId : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

// ---- grids -------------------------------------------------------------

// m+1 equispaced points 0, 1/m, ..., 1.
Vector make_grid(int num_points);

// Midpoints of the m cells of the unit grid: (j + 1/2)/m, j = 0..m-1.
Vector midpoint_grid(int num_cells);

// Trapezoid quadrature weights for an equispaced grid on [0,1].
Vector trapezoid_weights(int num_points);

// Exact integration weights for step functions on m equal cells (1/m each).
Vector cell_weights(int num_cells);

// Piecewise-linear evaluation of (grid, values) at x in [grid[0], grid[n-1]].
// x outside the range is clamped to the endpoints.
double interp_linear(const Vector& grid, const Vector& values, double x);

// ---- curves ------------------------------------------------------------

struct RawCurve {
  std::string id;
  std::vector<double> times;   // seconds, strictly increasing
  std::vector<double> values;  // Hz; NaN marks a missing reading
  std::map<std::string, std::string> covariates;

  int n_missing() const;
  int n_usable() const;
  void validate() const;  // throws on broken invariants
};

struct SampledCurve {
  std::string id;
  Vector grid;     // m+1 equispaced points on [0,1]
  Vector values;   // Hz, no missing
  double duration = 0.0;  // tens of milliseconds
};

// ---- warping functions ---------------------------------------------------

// Discretized monotone map of [0,1] onto itself: values on the common
// equispaced grid with values[0] = 0, values[m] = 1, strictly increasing.
struct WarpingFunction {
  Vector values;

  int cells() const { return static_cast<int>(values.size()) - 1; }
  Vector grid() const { return make_grid(static_cast<int>(values.size())); }

  static WarpingFunction identity(int num_cells);

  // Validating constructor for externally supplied values.
  static WarpingFunction from_values(Vector v);

  // Evaluate the piecewise-linear warp at t in [0,1].
  double operator()(double t) const;

  bool is_valid() const;
};

}  // namespace warpfit
