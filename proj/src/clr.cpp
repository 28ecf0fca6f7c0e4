#include "warpfit/clr.hpp"

#include <cmath>

namespace warpfit::clr {

CompositionVector forward(const WarpingFunction& h, double epsilon) {
  const int m = h.cells();
  Vector s(m);
  for (int j = 0; j < m; ++j) {
    const double dh = h.values[j + 1] - h.values[j];
    if (!(dh > epsilon))
      throw ZeroIncrement("warp increment " + std::to_string(j) +
                          " is below " + std::to_string(epsilon));
    s[j] = std::log(dh);
  }
  s.array() -= s.mean();  // exact centering, equals dividing by the geomean
  return CompositionVector{std::move(s)};
}

WarpingFunction inverse(const Vector& s_in) {
  const int m = static_cast<int>(s_in.size());
  if (m < 1) throw Error("clr::inverse: empty coordinate vector");
  Vector s = s_in;
  s.array() -= s.mean();
  const double peak = s.maxCoeff();
  Vector inc(m);
  for (int j = 0; j < m; ++j) inc[j] = std::exp(s[j] - peak);
  // Extreme coordinates can underflow an increment to 0; floor and
  // renormalize so strict monotonicity survives in double precision.
  const double floor_inc = 1e-12;
  for (int j = 0; j < m; ++j)
    if (inc[j] < floor_inc) inc[j] = floor_inc;
  inc /= inc.sum();

  WarpingFunction h;
  h.values.resize(m + 1);
  h.values[0] = 0.0;
  double acc = 0.0;
  for (int j = 0; j < m; ++j) {
    acc += inc[j];
    h.values[j + 1] = acc;
  }
  h.values[m] = 1.0;
  return h;
}

WarpingFunction inverse(const CompositionVector& s) { return inverse(s.s); }

Vector log_derivative_curve(const CompositionVector& s) {
  // log h' of the step warp is constant on each cell and equals the CLR
  // coordinate up to a per-curve additive constant that the exp-integral
  // normalization cannot see; the zero-sum representative is canonical here.
  return s.s;
}

}  // namespace warpfit::clr
