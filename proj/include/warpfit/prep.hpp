#pragma once

#include "warpfit/types.hpp"

#include <string>
#include <vector>

namespace warpfit::prep {

// Local-linear fit with Gaussian weights at each point of the common grid.
// `bandwidth` is a fraction of the curve's own time span; the fit runs in
// normalized time, so the kernel scale is the bandwidth itself.
// Readings marked NaN are dropped from the local fits.
SampledCurve smooth_curve(const RawCurve& raw, double bandwidth,
                          int grid_size);

// Leave-one-out cross-validated bandwidth over a logarithmic grid of
// 10 candidates in [0.02, 0.3].
double cv_bandwidth(const RawCurve& raw);

// Accept/reject on the fraction of missing readings.
// Rejects iff missing fraction >= max_missing_fraction.
bool screen_missing(const RawCurve& raw, double max_missing_fraction);

struct CorpusOptions {
  std::vector<std::string> covariate_columns;  // beyond speaker/sentence/class
};

// Joins the curve file (id,t,f0) with the covariate file
// (id,speaker,sentence,class,...). Unmatched ids raise MissingCovariate.
std::vector<RawCurve> load_corpus(const std::string& curve_file,
                                  const std::string& covariate_file,
                                  const CorpusOptions& options = {});

}  // namespace warpfit::prep
