#pragma once

#include "warpfit/types.hpp"

namespace warpfit::clr {

// Centered log-ratio coordinates of a warping function's increment vector.
// Zero-sum by construction; length m for a warp on an (m+1)-point grid.
struct CompositionVector {
  Vector s;

  int size() const { return static_cast<int>(s.size()); }
  double sum() const { return s.sum(); }
};

// s_j = log(dh_j / geometric_mean(dh)), dh_j = h[j+1] - h[j].
// Throws ZeroIncrement when an increment is <= epsilon.
CompositionVector forward(const WarpingFunction& h, double epsilon = 1e-12);

// Inverse map: increments are the softmax of s, accumulated from 0 to 1.
// Total on zero-sum vectors; arbitrary finite input is centered first
// (softmax is shift-invariant, so centering does not change the result).
// Always yields a strictly monotone, boundary-respecting warp.
WarpingFunction inverse(const CompositionVector& s);
WarpingFunction inverse(const Vector& s);

// The step-function view of s: values of log h' on the m cell midpoints.
Vector log_derivative_curve(const CompositionVector& s);

}  // namespace warpfit::clr
