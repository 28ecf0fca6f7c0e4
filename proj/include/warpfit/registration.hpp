#pragma once

#include "warpfit/rng.hpp"
#include "warpfit/types.hpp"

#include <string>
#include <vector>

namespace warpfit::registration {

struct PairwiseOptions {
  int max_iterations = 500;
  double diameter_tol = 1e-6;
  double initial_step = 0.25;
  // Curves whose value range falls below this are treated as flat and get
  // the identity warp with the degenerate flag set. Callers that know the
  // class context set it to 1e-6 x (class median range).
  double degenerate_range_threshold = 0.0;
};

struct PairwiseWarp {
  WarpingFunction g;
  double cost = 0.0;
  bool degenerate = false;
};

// Minimizer of  sum_j w_j [ (target(g(u_j)) - reference(u_j))^2
//                           + lambda (g(u_j) - u_j)^2 ]
// over strict boundary-respecting warps, parameterized by CLR coordinates
// so every optimizer proposal is feasible. w_j are trapezoid weights and
// target(g(u)) uses monotone piecewise-linear interpolation.
// g(t) is the position on the target's time-scale matching time t on the
// reference's scale.
PairwiseWarp pairwise_warp(const SampledCurve& target,
                           const SampledCurve& reference, double lambda,
                           const PairwiseOptions& options = {});

// The discretized cost above for an arbitrary candidate warp; shared by the
// optimizer and by brute-force checks in tests.
double warp_cost(const SampledCurve& target, const SampledCurve& reference,
                 const WarpingFunction& g, double lambda);

// Pointwise mean; average of monotone boundary-fixed warps stays one.
WarpingFunction average_warps(const std::vector<WarpingFunction>& warps);

// Empirical inverse warp of `curve`: the mean of nstar pairwise warps of
// pool members toward it, subsampled without replacement when the pool is
// larger than nstar. The curve itself may be drawn; its warp only shrinks
// the average toward the identity.
WarpingFunction estimate_h_inverse(const SampledCurve& curve,
                                   const std::vector<SampledCurve>& pool,
                                   int nstar, double lambda, Rng& rng,
                                   const PairwiseOptions& options = {});

// Exact inverse of the piecewise-linear warp, resampled onto the common
// grid. Rejects non-monotone input.
WarpingFunction invert_warp(const WarpingFunction& warp);

// Integral of (g(t) - t)^2 dt, trapezoid rule.
double warp_distortion(const WarpingFunction& g);

struct RegistrationResult {
  std::string id;
  WarpingFunction h;
  WarpingFunction h_inverse;
  Vector registered;  // w_i on the common grid
  std::string class_key;
  double lambda = 0.0;
  int nstar = 0;
  bool degenerate = false;
};

struct ClassOptions {
  double lambda = 0.0;
  bool lambda_auto = false;
  int nstar = 30;
  std::uint64_t seed = 0;
  int max_iterations = 500;
};

// Registers one class: per-curve h^-1 via pairwise averaging, h by
// inversion, and the registered amplitude w_i(u) = y_i(h_i(u)).
// Output order follows curve ids, so the result does not depend on the
// order curves arrive in.
std::vector<RegistrationResult> register_class(
    const std::vector<SampledCurve>& curves, const std::string& class_key,
    const ClassOptions& options);

// Area-under-the-curve registration: h^-1 is the normalized cumulative
// integral of the (strictly positive) curve.
std::vector<RegistrationResult> register_auc(
    const std::vector<SampledCurve>& curves, const std::string& class_key);

// Smallest lambda from {0, 1e-2, 1e-1, 1, 10} x scale whose median pairwise
// warp distortion over a pilot subsample falls below 0.01; returns the
// largest candidate if none qualifies. scale is the class median of
// per-curve value variances.
double select_lambda(const std::vector<SampledCurve>& curves,
                     std::uint64_t seed, int nstar);

}  // namespace warpfit::registration
