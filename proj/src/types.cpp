#include "warpfit/types.hpp"

#include <algorithm>
#include <cmath>

namespace warpfit {

Vector make_grid(int num_points) {
  if (num_points < 2) throw Error("make_grid: need at least 2 points");
  Vector g(num_points);
  const double m = num_points - 1;
  for (int j = 0; j < num_points; ++j) g[j] = j / m;
  g[num_points - 1] = 1.0;
  return g;
}

Vector midpoint_grid(int num_cells) {
  if (num_cells < 1) throw Error("midpoint_grid: need at least 1 cell");
  Vector g(num_cells);
  for (int j = 0; j < num_cells; ++j) g[j] = (j + 0.5) / num_cells;
  return g;
}

Vector trapezoid_weights(int num_points) {
  if (num_points < 2) throw Error("trapezoid_weights: need at least 2 points");
  const double h = 1.0 / (num_points - 1);
  Vector w = Vector::Constant(num_points, h);
  w[0] = 0.5 * h;
  w[num_points - 1] = 0.5 * h;
  return w;
}

Vector cell_weights(int num_cells) {
  if (num_cells < 1) throw Error("cell_weights: need at least 1 cell");
  return Vector::Constant(num_cells, 1.0 / num_cells);
}

double interp_linear(const Vector& grid, const Vector& values, double x) {
  const int n = static_cast<int>(grid.size());
  if (x <= grid[0]) return values[0];
  if (x >= grid[n - 1]) return values[n - 1];
  // grid is strictly increasing; find the cell containing x.
  const double* begin = grid.data();
  const double* it = std::upper_bound(begin, begin + n, x);
  int k = static_cast<int>(it - begin) - 1;
  if (k >= n - 1) k = n - 2;
  const double t = (x - grid[k]) / (grid[k + 1] - grid[k]);
  return values[k] + t * (values[k + 1] - values[k]);
}

int RawCurve::n_missing() const {
  return static_cast<int>(
      std::count_if(values.begin(), values.end(),
                    [](double v) { return std::isnan(v); }));
}

int RawCurve::n_usable() const {
  return static_cast<int>(values.size()) - n_missing();
}

void RawCurve::validate() const {
  if (times.size() != values.size())
    throw Error("curve '" + id + "': times and values differ in length");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1]))
      throw Error("curve '" + id + "': times not strictly increasing");
  if (n_usable() < 4)
    throw TooFewPoints("curve '" + id + "': fewer than 4 usable readings");
}

WarpingFunction WarpingFunction::identity(int num_cells) {
  WarpingFunction w;
  w.values = make_grid(num_cells + 1);
  return w;
}

WarpingFunction WarpingFunction::from_values(Vector v) {
  WarpingFunction w;
  w.values = std::move(v);
  if (!w.is_valid())
    throw NonMonotone("warping function violates boundary or monotonicity");
  return w;
}

double WarpingFunction::operator()(double t) const {
  return interp_linear(grid(), values, t);
}

bool WarpingFunction::is_valid() const {
  const int n = static_cast<int>(values.size());
  if (n < 2) return false;
  if (values[0] != 0.0 || values[n - 1] != 1.0) return false;
  for (int j = 0; j + 1 < n; ++j)
    if (!(values[j] < values[j + 1])) return false;
  for (int j = 0; j < n; ++j)
    if (!(values[j] >= 0.0 && values[j] <= 1.0) || !std::isfinite(values[j]))
      return false;
  return true;
}

}  // namespace warpfit
