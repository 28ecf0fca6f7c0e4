#include "warpfit/registration.hpp"

#include "warpfit/clr.hpp"
#include "warpfit/optim.hpp"

#include <algorithm>
#include <cmath>

namespace warpfit::registration {

namespace {

double value_range(const Vector& v) { return v.maxCoeff() - v.minCoeff(); }

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 0) {
    std::nth_element(v.begin(), v.begin() + mid - 1, v.begin() + mid);
    return 0.5 * (v[mid - 1] + hi);
  }
  return hi;
}

std::vector<const SampledCurve*> sorted_by_id(
    const std::vector<SampledCurve>& curves) {
  std::vector<const SampledCurve*> ptrs;
  ptrs.reserve(curves.size());
  for (const auto& c : curves) ptrs.push_back(&c);
  std::sort(ptrs.begin(), ptrs.end(),
            [](const SampledCurve* a, const SampledCurve* b) {
              return a->id < b->id;
            });
  return ptrs;
}

Vector registered_amplitude(const SampledCurve& curve,
                            const WarpingFunction& h) {
  const int n = static_cast<int>(curve.values.size());
  Vector w(n);
  for (int j = 0; j < n; ++j)
    w[j] = interp_linear(curve.grid, curve.values, h.values[j]);
  return w;
}

}  // namespace

double warp_cost(const SampledCurve& target, const SampledCurve& reference,
                 const WarpingFunction& g, double lambda) {
  const int n = static_cast<int>(reference.values.size());
  const Vector weights = trapezoid_weights(n);
  double cost = 0.0;
  for (int j = 0; j < n; ++j) {
    const double moved =
        interp_linear(target.grid, target.values, g.values[j]);
    const double diff = moved - reference.values[j];
    const double distort = g.values[j] - reference.grid[j];
    cost += weights[j] * (diff * diff + lambda * distort * distort);
  }
  return cost;
}

PairwiseWarp pairwise_warp(const SampledCurve& target,
                           const SampledCurve& reference, double lambda,
                           const PairwiseOptions& options) {
  if (target.values.size() != reference.values.size())
    throw GridMismatch("pairwise_warp: curves on different grids");
  if (!(lambda >= 0.0)) throw Error("pairwise_warp: lambda must be >= 0");
  const int m = static_cast<int>(reference.values.size()) - 1;

  PairwiseWarp out;
  if (value_range(target.values) < options.degenerate_range_threshold) {
    out.g = WarpingFunction::identity(m);
    out.cost = warp_cost(target, reference, out.g, lambda);
    out.degenerate = true;
    return out;
  }

  const auto objective = [&](const Vector& s) {
    return warp_cost(target, reference, clr::inverse(s), lambda);
  };

  optim::NelderMeadOptions nm;
  nm.max_iterations = options.max_iterations;
  nm.diameter_tol = options.diameter_tol;
  // The penalty steepens the bowl by a factor of lambda relative to the
  // discrepancy scale; shrink the starting simplex accordingly so large
  // penalties still converge within the iteration budget.
  const double ref_mean = reference.values.mean();
  const double ref_var =
      (reference.values.array() - ref_mean).square().mean();
  nm.initial_step =
      options.initial_step / (1.0 + std::sqrt(lambda / (ref_var + 1e-12)));
  const auto result = optim::nelder_mead(objective, Vector::Zero(m), nm);
  if (!std::isfinite(result.value))
    throw OptimizerDiverged("pairwise_warp: non-finite cost");

  out.g = clr::inverse(result.x);
  out.cost = result.value;
  return out;
}

WarpingFunction average_warps(const std::vector<WarpingFunction>& warps) {
  if (warps.empty()) throw EmptyPool("average_warps: no warps");
  Vector acc = Vector::Zero(warps.front().values.size());
  for (const auto& w : warps) {
    if (w.values.size() != acc.size())
      throw GridMismatch("average_warps: mixed grids");
    acc += w.values;
  }
  acc /= static_cast<double>(warps.size());
  acc[0] = 0.0;
  acc[acc.size() - 1] = 1.0;
  return WarpingFunction::from_values(std::move(acc));
}

WarpingFunction estimate_h_inverse(const SampledCurve& curve,
                                   const std::vector<SampledCurve>& pool,
                                   int nstar, double lambda, Rng& rng,
                                   const PairwiseOptions& options) {
  if (pool.empty()) throw EmptyPool("estimate_h_inverse: empty pool");
  const int n = static_cast<int>(pool.size());
  if (nstar < 1) throw Error("estimate_h_inverse: nstar must be >= 1");

  std::vector<int> chosen;
  if (nstar < n) {
    chosen = rng.sample_without_replacement(n, nstar);
    std::sort(chosen.begin(), chosen.end());
  } else {
    chosen.resize(n);
    for (int i = 0; i < n; ++i) chosen[i] = i;
  }

  std::vector<WarpingFunction> warps;
  warps.reserve(chosen.size());
  for (int idx : chosen)
    warps.push_back(pairwise_warp(pool[idx], curve, lambda, options).g);
  return average_warps(warps);
}

WarpingFunction invert_warp(const WarpingFunction& warp) {
  if (!warp.is_valid())
    throw NonMonotone("invert_warp: input is not a valid warping function");
  const int m = warp.cells();
  const Vector grid = warp.grid();
  const Vector& v = warp.values;

  WarpingFunction inv;
  inv.values.resize(m + 1);
  inv.values[0] = 0.0;
  inv.values[m] = 1.0;
  int seg = 0;
  for (int j = 1; j < m; ++j) {
    const double t = grid[j];
    while (seg + 1 < m && v[seg + 1] < t) ++seg;
    inv.values[j] = grid[seg] + (t - v[seg]) / (v[seg + 1] - v[seg]) *
                                    (grid[seg + 1] - grid[seg]);
  }
  return WarpingFunction::from_values(std::move(inv.values));
}

double warp_distortion(const WarpingFunction& g) {
  const int n = static_cast<int>(g.values.size());
  const Vector weights = trapezoid_weights(n);
  const Vector grid = g.grid();
  double acc = 0.0;
  for (int j = 0; j < n; ++j) {
    const double d = g.values[j] - grid[j];
    acc += weights[j] * d * d;
  }
  return acc;
}

std::vector<RegistrationResult> register_class(
    const std::vector<SampledCurve>& curves, const std::string& class_key,
    const ClassOptions& options) {
  if (curves.empty()) return {};
  const auto pool_ptrs = sorted_by_id(curves);
  std::vector<SampledCurve> pool;
  pool.reserve(pool_ptrs.size());
  for (const auto* p : pool_ptrs) pool.push_back(*p);

  double lambda = options.lambda;
  if (options.lambda_auto)
    lambda = select_lambda(pool, options.seed, options.nstar);

  std::vector<double> ranges;
  for (const auto& c : pool) ranges.push_back(value_range(c.values));
  const double range_threshold = 1e-6 * median(ranges);

  PairwiseOptions pw;
  pw.max_iterations = options.max_iterations;
  pw.degenerate_range_threshold = range_threshold;

  const int nstar =
      std::min<int>(options.nstar, static_cast<int>(pool.size()));
  const int m = static_cast<int>(pool.front().values.size()) - 1;

  std::vector<RegistrationResult> out;
  out.reserve(pool.size());
  for (const auto& curve : pool) {
    RegistrationResult r;
    r.id = curve.id;
    r.class_key = class_key;
    r.lambda = lambda;
    r.nstar = nstar;
    if (value_range(curve.values) < range_threshold) {
      // Essentially flat amplitude: the warp is not identifiable.
      r.h_inverse = WarpingFunction::identity(m);
      r.h = WarpingFunction::identity(m);
      r.degenerate = true;
    } else {
      Rng rng = Rng::stream(options.seed, curve.id);
      r.h_inverse =
          estimate_h_inverse(curve, pool, nstar, lambda, rng, pw);
      r.h = invert_warp(r.h_inverse);
    }
    r.registered = registered_amplitude(curve, r.h);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RegistrationResult> register_auc(
    const std::vector<SampledCurve>& curves, const std::string& class_key) {
  std::vector<RegistrationResult> out;
  out.reserve(curves.size());
  const auto pool_ptrs = sorted_by_id(curves);
  for (const auto* cp : pool_ptrs) {
    const SampledCurve& curve = *cp;
    const int n = static_cast<int>(curve.values.size());
    if (curve.values.minCoeff() <= 0.0)
      throw NonPositiveCurve("register_auc: curve '" + curve.id +
                             "' is not strictly positive");
    Vector cum(n);
    cum[0] = 0.0;
    for (int j = 1; j < n; ++j)
      cum[j] = cum[j - 1] + 0.5 * (curve.values[j - 1] + curve.values[j]) *
                                (curve.grid[j] - curve.grid[j - 1]);
    Vector hinv = cum / cum[n - 1];
    hinv[0] = 0.0;
    hinv[n - 1] = 1.0;

    RegistrationResult r;
    r.id = curve.id;
    r.class_key = class_key;
    r.h_inverse = WarpingFunction::from_values(std::move(hinv));
    r.h = invert_warp(r.h_inverse);
    r.registered = registered_amplitude(curve, r.h);
    out.push_back(std::move(r));
  }
  return out;
}

double select_lambda(const std::vector<SampledCurve>& curves,
                     std::uint64_t seed, int nstar) {
  if (curves.empty()) return 0.0;
  std::vector<double> variances;
  for (const auto& c : curves) {
    const double mean = c.values.mean();
    variances.push_back((c.values.array() - mean).square().mean());
  }
  const double scale = median(variances);

  // Pilot subsample keeps the candidate sweep affordable.
  const auto pool_ptrs = sorted_by_id(curves);
  const int n_ref = std::min<int>(8, static_cast<int>(pool_ptrs.size()));
  const int n_donor = std::min<int>(std::min(nstar, 6),
                                    static_cast<int>(pool_ptrs.size()));

  const double factors[] = {0.0, 1e-2, 1e-1, 1.0, 10.0};
  double chosen = factors[4] * scale;
  for (double f : factors) {
    const double lambda = f * scale;
    std::vector<double> distortions;
    Rng rng = Rng::stream(seed, "lambda-pilot");
    for (int i = 0; i < n_ref; ++i) {
      const auto refs = rng.sample_without_replacement(
          static_cast<int>(pool_ptrs.size()), 1);
      const SampledCurve& ref = *pool_ptrs[refs[0]];
      const auto donors = rng.sample_without_replacement(
          static_cast<int>(pool_ptrs.size()), n_donor);
      for (int d : donors) {
        const auto pw = pairwise_warp(*pool_ptrs[d], ref, lambda);
        distortions.push_back(warp_distortion(pw.g));
      }
    }
    if (median(distortions) < 0.01) {
      chosen = lambda;
      break;
    }
  }
  return chosen;
}

}  // namespace warpfit::registration
