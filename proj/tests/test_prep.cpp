#include "warpfit/prep.hpp"

#include "warpfit/csv.hpp"
#include "warpfit/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace warpfit;

namespace {

RawCurve linear_curve(int n, double a, double b, double t0 = 0.0,
                      double span = 0.2) {
  RawCurve c;
  c.id = "lin";
  for (int i = 0; i < n; ++i) {
    const double t = t0 + span * i / (n - 1);
    c.times.push_back(t);
    c.values.push_back(a + b * t);
  }
  return c;
}

// Independent oracle: direct weighted least squares solve at one point via
// the closed-form 2x2 inverse, written without reference to the smoother.
double wls_oracle(const RawCurve& raw, double u, double bandwidth) {
  const double t0 = raw.times.front();
  const double span = raw.times.back() - raw.times.front();
  double s0 = 0, s1 = 0, s2 = 0, b0 = 0, b1 = 0;
  for (std::size_t i = 0; i < raw.times.size(); ++i) {
    if (std::isnan(raw.values[i])) continue;
    const double x = (raw.times[i] - t0) / span;
    const double w = std::exp(-0.5 * std::pow((x - u) / bandwidth, 2));
    s0 += w;
    s1 += w * (x - u);
    s2 += w * (x - u) * (x - u);
    b0 += w * raw.values[i];
    b1 += w * raw.values[i] * (x - u);
  }
  // Solve [s0 s1; s1 s2] [a; c] = [b0; b1] for the intercept a.
  return (s2 * b0 - s1 * b1) / (s0 * s2 - s1 * s1);
}

std::string temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "warpfit_prep_test";
  std::filesystem::create_directories(dir);
  return dir.string();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("local-linear smoother reproduces linear curves exactly") {
  const RawCurve raw = linear_curve(20, 80.0, 120.0);
  for (double bw : {0.05, 0.2, 0.5}) {
    const SampledCurve c = prep::smooth_curve(raw, bw, 16);
    REQUIRE(c.values.size() == 16);
    for (int j = 0; j < 16; ++j) {
      const double t = raw.times.front() + 0.2 * c.grid[j];
      CHECK(c.values[j] == doctest::Approx(80.0 + 120.0 * t).epsilon(1e-13));
    }
  }
}

TEST_CASE("smoother output grid and duration units") {
  const RawCurve raw = linear_curve(16, 100.0, 0.0, 0.3, 0.16);
  const SampledCurve c = prep::smooth_curve(raw, 0.05, 16);
  CHECK(c.grid[0] == 0.0);
  CHECK(c.grid[15] == 1.0);
  CHECK(c.grid[1] == doctest::Approx(1.0 / 15.0));
  CHECK(c.duration == doctest::Approx(16.0));  // 0.16 s in tens of ms
}

TEST_CASE("smoother matches the brute-force WLS oracle on a noisy sine") {
  RawCurve raw;
  raw.id = "sine";
  Rng rng(123);
  for (int i = 0; i < 40; ++i) {
    const double t = 0.25 * i / 39.0;
    raw.times.push_back(t);
    raw.values.push_back(150.0 + 30.0 * std::sin(2.0 * M_PI * t / 0.25) +
                         2.0 * rng.normal());
  }
  const SampledCurve c = prep::smooth_curve(raw, 0.05, 16);
  for (int j = 0; j < 16; ++j) {
    const double expect = wls_oracle(raw, c.grid[j], 0.05);
    CHECK(std::abs(c.values[j] - expect) <=
          1e-10 * std::max(1.0, std::abs(expect)));
  }
}

TEST_CASE("smoother drops missing readings from the fits") {
  RawCurve raw = linear_curve(20, 50.0, 40.0);
  raw.values[3] = std::nan("");
  raw.values[11] = std::nan("");
  const SampledCurve c = prep::smooth_curve(raw, 0.1, 16);
  for (int j = 0; j < 16; ++j) {
    const double t = raw.times.front() + 0.2 * c.grid[j];
    CHECK(c.values[j] == doctest::Approx(50.0 + 40.0 * t).epsilon(1e-12));
  }
}

TEST_CASE("too few usable points") {
  RawCurve raw = linear_curve(5, 1.0, 1.0);
  raw.values[0] = std::nan("");
  raw.values[2] = std::nan("");
  CHECK_THROWS_AS(prep::smooth_curve(raw, 0.05, 16), TooFewPoints);
}

TEST_CASE("vanishing bandwidth underflows the local design") {
  const RawCurve raw = linear_curve(8, 1.0, 1.0);
  CHECK_THROWS_AS(prep::smooth_curve(raw, 1e-3, 16), SingularFit);
}

TEST_CASE("screening thresholds") {
  RawCurve raw = linear_curve(16, 1.0, 0.0);
  CHECK(prep::screen_missing(raw, 0.05));  // 0 missing
  raw.values[5] = std::nan("");            // 1/16 = 6.25%
  CHECK_FALSE(prep::screen_missing(raw, 0.05));

  RawCurve big = linear_curve(100, 1.0, 0.0);
  for (int i : {10, 20, 30, 40}) big.values[i] = std::nan("");  // 4%
  CHECK(prep::screen_missing(big, 0.05));
}

TEST_CASE("screening is monotone in the threshold") {
  RawCurve raw = linear_curve(20, 1.0, 0.0);
  raw.values[4] = std::nan("");
  raw.values[9] = std::nan("");  // 10%
  bool previous = false;
  for (double thr : {0.01, 0.05, 0.1, 0.1001, 0.2, 0.5}) {
    const bool accepted = prep::screen_missing(raw, thr);
    CHECK((previous == false || accepted == true));
    previous = accepted;
  }
}

TEST_CASE("cv bandwidth lands in the candidate range") {
  RawCurve raw;
  raw.id = "cv";
  Rng rng(55);
  for (int i = 0; i < 30; ++i) {
    const double t = 0.2 * i / 29.0;
    raw.times.push_back(t);
    raw.values.push_back(100.0 + 20.0 * std::sin(8.0 * t / 0.2) +
                         rng.normal());
  }
  const double bw = prep::cv_bandwidth(raw);
  CHECK(bw >= 0.02);
  CHECK(bw <= 0.3);
}

TEST_CASE("load_corpus joins curves with covariates") {
  const std::string dir = temp_dir();
  write_file(dir + "/curves.csv",
             "id,t,f0\n"
             "a,0.0,100\n"
             "a,0.1,110\n"
             "a,0.2,\n"
             "a,0.3,130\n"
             "b,0.0,90\n"
             "b,0.1,95\n");
  write_file(dir + "/covs.csv",
             "id,speaker,sentence,class,B2\n"
             "a,F02,530,4,2\n"
             "b,M01,106,2,1\n");
  prep::CorpusOptions opts;
  opts.covariate_columns = {"B2"};
  const auto curves =
      prep::load_corpus(dir + "/curves.csv", dir + "/covs.csv", opts);
  REQUIRE(curves.size() == 2);
  CHECK(curves[0].id == "a");
  CHECK(curves[0].times.size() == 4);
  CHECK(std::isnan(curves[0].values[2]));
  CHECK(curves[0].covariates.at("speaker") == "F02");
  CHECK(curves[0].covariates.at("class") == "4");
  CHECK(curves[0].covariates.at("B2") == "2");
}

TEST_CASE("empty curve file yields an empty corpus") {
  const std::string dir = temp_dir();
  write_file(dir + "/empty.csv", "id,t,f0\n");
  write_file(dir + "/covs2.csv", "id,speaker,sentence,class\n");
  CHECK(prep::load_corpus(dir + "/empty.csv", dir + "/covs2.csv").empty());
}

TEST_CASE("missing covariate names the id") {
  const std::string dir = temp_dir();
  write_file(dir + "/c3.csv",
             "id,t,f0\nx,0,1\nx,1,2\nx,2,3\nx,3,4\n"
             "y,0,1\ny,1,2\ny,2,3\ny,3,4\n"
             "z,0,1\nz,1,2\nz,2,3\nz,3,4\n");
  write_file(dir + "/v3.csv",
             "id,speaker,sentence,class\nx,S,P,1\nz,S,P,1\n");
  try {
    prep::load_corpus(dir + "/c3.csv", dir + "/v3.csv");
    FAIL("expected MissingCovariate");
  } catch (const MissingCovariate& e) {
    CHECK(std::string(e.what()).find("'y'") != std::string::npos);
  }
}

TEST_CASE("duplicate covariate ids are rejected") {
  const std::string dir = temp_dir();
  write_file(dir + "/c4.csv", "id,t,f0\nx,0,1\nx,1,2\nx,2,3\nx,3,4\n");
  write_file(dir + "/v4.csv",
             "id,speaker,sentence,class\nx,S,P,1\nx,S,P,2\n");
  CHECK_THROWS_AS(prep::load_corpus(dir + "/c4.csv", dir + "/v4.csv"),
                  DuplicateId);
}

TEST_CASE("parse errors carry a line number") {
  const std::string dir = temp_dir();
  write_file(dir + "/c5.csv", "id,t,f0\nx,0,1\nx,zzz,2\n");
  write_file(dir + "/v5.csv", "id,speaker,sentence,class\nx,S,P,1\n");
  try {
    prep::load_corpus(dir + "/c5.csv", dir + "/v5.csv");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":3") != std::string::npos);
  }
}
