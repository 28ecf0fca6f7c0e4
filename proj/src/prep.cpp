#include "warpfit/prep.hpp"

#include "warpfit/csv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace warpfit::prep {

namespace {

struct UsablePoints {
  std::vector<double> x;  // normalized time in [0,1]
  std::vector<double> y;
  double span_seconds = 0.0;
};

UsablePoints usable_points(const RawCurve& raw) {
  raw.validate();
  UsablePoints p;
  const double t0 = raw.times.front();
  const double span = raw.times.back() - raw.times.front();
  if (!(span > 0.0)) throw Error("curve '" + raw.id + "': zero time span");
  p.span_seconds = span;
  for (std::size_t i = 0; i < raw.times.size(); ++i) {
    if (std::isnan(raw.values[i])) continue;
    p.x.push_back((raw.times[i] - t0) / span);
    p.y.push_back(raw.values[i]);
  }
  return p;
}

// Weighted local-linear estimate at u: intercept of the weighted least
// squares line in (x - u). Returns NaN-free value or throws SingularFit.
double local_linear_at(const std::vector<double>& x,
                       const std::vector<double>& y, double u, double h,
                       const std::string& id) {
  double s0 = 0, s1 = 0, s2 = 0, t0 = 0, t1 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - u;
    const double z = d / h;
    const double w = std::exp(-0.5 * z * z);
    s0 += w;
    s1 += w * d;
    s2 += w * d * d;
    t0 += w * y[i];
    t1 += w * y[i] * d;
  }
  const double det = s0 * s2 - s1 * s1;
  if (!(det > 1e-13 * s0 * s2) || !(s0 > 0.0))
    throw SingularFit("curve '" + id + "': local design rank-deficient at u=" +
                      std::to_string(u) + " (bandwidth too small)");
  return (s2 * t0 - s1 * t1) / det;
}

}  // namespace

SampledCurve smooth_curve(const RawCurve& raw, double bandwidth,
                          int grid_size) {
  if (!(bandwidth > 0.0 && bandwidth <= 0.5))
    throw Error("bandwidth must lie in (0, 0.5]");
  if (grid_size < 4) throw Error("grid_size must be at least 4");
  const UsablePoints p = usable_points(raw);
  if (static_cast<int>(p.x.size()) < 4)
    throw TooFewPoints("curve '" + raw.id + "': fewer than 4 usable readings");

  SampledCurve out;
  out.id = raw.id;
  out.grid = make_grid(grid_size);
  out.values.resize(grid_size);
  for (int j = 0; j < grid_size; ++j)
    out.values[j] = local_linear_at(p.x, p.y, out.grid[j], bandwidth, raw.id);
  out.duration = p.span_seconds * 100.0;  // seconds -> tens of ms
  return out;
}

double cv_bandwidth(const RawCurve& raw) {
  const UsablePoints p = usable_points(raw);
  const int n = static_cast<int>(p.x.size());
  if (n < 5) throw TooFewPoints("curve '" + raw.id + "': too few for CV");

  const double lo = 0.02, hi = 0.3;
  double best_h = lo, best_err = std::numeric_limits<double>::infinity();
  for (int c = 0; c < 10; ++c) {
    const double h = lo * std::pow(hi / lo, c / 9.0);
    double err = 0.0;
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      std::vector<double> xs, ys;
      xs.reserve(n - 1);
      ys.reserve(n - 1);
      for (int j = 0; j < n; ++j)
        if (j != i) {
          xs.push_back(p.x[j]);
          ys.push_back(p.y[j]);
        }
      try {
        const double fit = local_linear_at(xs, ys, p.x[i], h, raw.id);
        err += (fit - p.y[i]) * (fit - p.y[i]);
      } catch (const SingularFit&) {
        ok = false;
      }
    }
    if (ok && err < best_err) {
      best_err = err;
      best_h = h;
    }
  }
  return best_h;
}

bool screen_missing(const RawCurve& raw, double max_missing_fraction) {
  if (!(max_missing_fraction >= 0.0 && max_missing_fraction < 1.0))
    throw Error("max_missing_fraction must lie in [0, 1)");
  if (raw.values.empty()) return false;
  const double fraction =
      static_cast<double>(raw.n_missing()) / raw.values.size();
  return fraction < max_missing_fraction;
}

std::vector<RawCurve> load_corpus(const std::string& curve_file,
                                  const std::string& covariate_file,
                                  const CorpusOptions& options) {
  const csv::Table curves = csv::read_csv(curve_file);
  const csv::Table covs = csv::read_csv(covariate_file);

  const int c_id = curves.require_column("id", curve_file);
  const int c_t = curves.require_column("t", curve_file);
  const int c_f0 = curves.require_column("f0", curve_file);

  const int v_id = covs.require_column("id", covariate_file);
  std::vector<std::pair<std::string, int>> cov_cols;
  for (const std::string& name :
       {std::string("speaker"), std::string("sentence"), std::string("class")})
    cov_cols.emplace_back(name, covs.require_column(name, covariate_file));
  for (const std::string& name : options.covariate_columns)
    cov_cols.emplace_back(name, covs.require_column(name, covariate_file));

  std::map<std::string, std::map<std::string, std::string>> cov_by_id;
  for (std::size_t r = 0; r < covs.rows.size(); ++r) {
    const std::string& id = covs.rows[r][v_id];
    if (cov_by_id.count(id))
      throw DuplicateId(covariate_file + ": duplicate id '" + id + "'");
    auto& entry = cov_by_id[id];
    for (const auto& [name, col] : cov_cols) entry[name] = covs.rows[r][col];
  }

  std::map<std::string, RawCurve> by_id;
  std::vector<std::string> order;
  for (std::size_t r = 0; r < curves.rows.size(); ++r) {
    const std::string context =
        curve_file + ":" + std::to_string(r + 2);
    const std::string& id = curves.rows[r][c_id];
    if (id.empty()) throw ParseError(context + ": empty id");
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      it = by_id.emplace(id, RawCurve{}).first;
      it->second.id = id;
      order.push_back(id);
    }
    RawCurve& c = it->second;
    c.times.push_back(csv::parse_double(curves.rows[r][c_t], context));
    const std::string& f0 = curves.rows[r][c_f0];
    c.values.push_back(f0.empty() ? std::nan("")
                                  : csv::parse_double(f0, context));
  }

  std::vector<RawCurve> out;
  out.reserve(order.size());
  for (const std::string& id : order) {
    RawCurve& c = by_id[id];
    auto it = cov_by_id.find(id);
    if (it == cov_by_id.end())
      throw MissingCovariate("no covariate row for id '" + id + "'");
    c.covariates = it->second;
    for (std::size_t i = 1; i < c.times.size(); ++i)
      if (!(c.times[i] > c.times[i - 1]))
        throw ParseError(curve_file + ": id '" + id +
                         "': readings not in increasing time order");
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace warpfit::prep
