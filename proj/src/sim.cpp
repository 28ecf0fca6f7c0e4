#include "warpfit/sim.hpp"

#include "warpfit/clr.hpp"
#include "warpfit/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>

namespace warpfit::sim {

namespace {

// Gram-Schmidt against the given quadrature weights; flips signs so the
// largest-magnitude entry is positive, matching the FPCA convention.
Matrix orthonormalize(Matrix raw, const Vector& weights) {
  const int n = static_cast<int>(raw.cols());
  for (int c = 0; c < n; ++c) {
    Vector v = raw.col(c);
    for (int prev = 0; prev < c; ++prev) {
      const Vector& q = raw.col(prev);
      v -= (q.array() * v.array() * weights.array()).sum() * q;
    }
    const double norm =
        std::sqrt((v.array() * v.array() * weights.array()).sum());
    if (norm < 1e-12) throw Error("orthonormalize: degenerate mode set");
    v /= norm;
    int peak = 0;
    for (int j = 1; j < v.size(); ++j)
      if (std::abs(v[j]) > std::abs(v[peak])) peak = j;
    if (v[peak] < 0.0) v = -v;
    raw.col(c) = v;
  }
  return raw;
}

Matrix psd_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  const Vector lam = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * lam.cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

Vector draw_gaussian(int n, Rng& rng) {
  Vector z(n);
  for (int i = 0; i < n; ++i) z[i] = rng.normal();
  return z;
}

// Exact piecewise-linear inverse of a warp at a single point.
double invert_at(const WarpingFunction& h, double u) {
  const Vector grid = h.grid();
  const Vector& v = h.values;
  const int m = h.cells();
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return 1.0;
  int seg = 0;
  while (seg + 1 < m && v[seg + 1] < u) ++seg;
  return grid[seg] +
         (u - v[seg]) / (v[seg + 1] - v[seg]) * (grid[seg + 1] - grid[seg]);
}

std::string padded_id(const char* prefix, int value, int width) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width % 32, value);
  return buf;
}

}  // namespace

Matrix make_amplitude_modes(int grid_size, int count) {
  const Vector grid = make_grid(grid_size);
  Matrix raw(grid_size, count);
  for (int c = 0; c < count; ++c)
    for (int j = 0; j < grid_size; ++j) {
      const double u = grid[j];
      // Alternating sine/cosine family, linearly independent and smooth.
      raw(j, c) = (c % 2 == 0) ? std::sin((c / 2 + 1) * 2.0 * M_PI * u + 0.4)
                               : std::cos((c / 2 + 1) * M_PI * u);
    }
  return orthonormalize(std::move(raw), trapezoid_weights(grid_size));
}

Matrix make_phase_modes(int num_cells, int count) {
  const Vector grid = midpoint_grid(num_cells);
  const Vector weights = cell_weights(num_cells);
  Matrix raw(num_cells, count);
  for (int c = 0; c < count; ++c) {
    for (int j = 0; j < num_cells; ++j) {
      const double u = grid[j];
      raw(j, c) = (c % 2 == 0) ? std::sin((c / 2 + 1) * 2.0 * M_PI * u)
                               : std::cos((c / 2 + 1) * M_PI * u);
    }
    // Phase modes live in the zero-sum subspace of CLR coordinates.
    raw.col(c).array() -= raw.col(c).mean();
  }
  return orthonormalize(std::move(raw), weights);
}

Matrix SyntheticSpec::default_sigma_speaker(int m_w, int m_s) {
  const int p = m_w + m_s + 1;
  Vector sd(p);
  for (int j = 0; j < m_w; ++j) sd[j] = 3.0 / (j + 1);
  for (int j = 0; j < m_s; ++j) sd[m_w + j] = 0.15 / (j + 1);
  sd[p - 1] = 1.2;
  Matrix corr = Matrix::Identity(p, p);
  corr(0, p - 1) = corr(p - 1, 0) = 0.4;  // amplitude level vs duration
  return sd.asDiagonal() * corr * sd.asDiagonal();
}

Matrix SyntheticSpec::default_sigma_sentence(int m_w, int m_s) {
  const int p = m_w + m_s + 1;
  Vector sd(p);
  for (int j = 0; j < m_w; ++j) sd[j] = 1.5 / (j + 1);
  for (int j = 0; j < m_s; ++j) sd[m_w + j] = 0.18 / (j + 1);
  sd[p - 1] = 1.0;
  Matrix corr = Matrix::Identity(p, p);
  corr(m_w, p - 1) = corr(p - 1, m_w) = 0.8;  // planted phase-duration link
  return sd.asDiagonal() * corr * sd.asDiagonal();
}

Vector SyntheticSpec::default_residual_sd(int m_w, int m_s) {
  const int p = m_w + m_s + 1;
  Vector sd(p);
  for (int j = 0; j < m_w; ++j) sd[j] = 4.0 / (j + 1);
  for (int j = 0; j < m_s; ++j) sd[m_w + j] = 0.22 / (j + 1);
  sd[p - 1] = 1.5;
  return sd;
}

void SyntheticSpec::validate() const {
  if (n_speakers < 1 || n_sentences < 1 || n_classes < 1 || n_curves < 1)
    throw InvalidSpec("simulate: counts must be positive");
  if (grid_size < 4) throw InvalidSpec("simulate: grid_size must be >= 4");
  if (n_amplitude_modes < 1 || n_phase_modes < 1)
    throw InvalidSpec("simulate: need at least one mode per process");
  if (n_amplitude_modes + 1 > grid_size || n_phase_modes + 1 > grid_size - 1)
    throw InvalidSpec("simulate: more modes than the grid supports");
  if (readings_per_curve < 4)
    throw InvalidSpec("simulate: readings_per_curve must be >= 4");
  if (noise_sd < 0.0 || missing_probability < 0.0 ||
      missing_probability >= 1.0)
    throw InvalidSpec("simulate: bad noise or missing probability");
  const int dim = p();
  for (const Matrix* m : {&sigma_r1, &sigma_r2})
    if (m->size() != 0 && (m->rows() != dim || m->cols() != dim))
      throw InvalidSpec("simulate: covariance dimension mismatch");
  if (residual_sd.size() != 0 && residual_sd.size() != dim)
    throw InvalidSpec("simulate: residual_sd dimension mismatch");
}

SimOutput simulate(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int m_w = spec.n_amplitude_modes, m_s = spec.n_phase_modes;
  const int p = spec.p();
  const int g = spec.grid_size;
  const Vector grid = make_grid(g);

  SimOutput out;
  out.sigma_r1 = spec.sigma_r1.size() ? spec.sigma_r1
                                      : SyntheticSpec::default_sigma_speaker(
                                            m_w, m_s);
  out.sigma_r2 = spec.sigma_r2.size() ? spec.sigma_r2
                                      : SyntheticSpec::default_sigma_sentence(
                                            m_w, m_s);
  out.residual_sd = spec.residual_sd.size()
                        ? spec.residual_sd
                        : SyntheticSpec::default_residual_sd(m_w, m_s);
  out.class_effects = spec.class_effects;
  if (!out.class_effects.size()) {
    out.class_effects = Matrix::Zero(spec.n_classes, p);
    for (int c = 1; c < spec.n_classes; ++c) {
      for (int j = 0; j < m_w; ++j)
        out.class_effects(c, j) = 2.0 * c * (j % 2 == 0 ? 1.0 : -0.5);
      for (int j = 0; j < m_s; ++j)
        out.class_effects(c, m_w + j) = 0.05 * c * (j % 2 == 0 ? 1.0 : -0.6);
      out.class_effects(c, p - 1) = 0.8 * c;
    }
  }

  out.amplitude_mean.resize(g);
  for (int j = 0; j < g; ++j)
    out.amplitude_mean[j] =
        spec.base_level + 18.0 * std::sin(M_PI * grid[j]) + 6.0 * grid[j];
  out.amplitude_modes = make_amplitude_modes(g, m_w);
  out.phase_modes = make_phase_modes(g - 1, m_s);

  Rng rng = Rng::stream(seed, "simulate");
  const Matrix sqrt_r1 = psd_sqrt(out.sigma_r1);
  const Matrix sqrt_r2 = psd_sqrt(out.sigma_r2);

  Matrix gamma1(spec.n_speakers, p), gamma2(spec.n_sentences, p);
  for (int i = 0; i < spec.n_speakers; ++i)
    gamma1.row(i) = (sqrt_r1 * draw_gaussian(p, rng)).transpose();
  for (int i = 0; i < spec.n_sentences; ++i)
    gamma2.row(i) = (sqrt_r2 * draw_gaussian(p, rng)).transpose();

  const int id_width =
      std::max(4, static_cast<int>(std::to_string(spec.n_curves).size()));

  out.true_scores.resize(spec.n_curves, p);
  out.covariates.names = {"speaker", "sentence", "class", "sex", "b2"};
  out.covariates.numeric = {"b2"};
  out.covariates.values.assign(5, {});

  for (int i = 0; i < spec.n_curves; ++i) {
    const int speaker = static_cast<int>(rng.below(spec.n_speakers));
    const int sentence = static_cast<int>(rng.below(spec.n_sentences));
    const int cls = static_cast<int>(rng.below(spec.n_classes));
    const int b2 = 1 + static_cast<int>(rng.below(5));

    Vector score = out.class_effects.row(cls).transpose();
    score[p - 1] += spec.base_duration;
    score += gamma1.row(speaker).transpose();
    score += gamma2.row(sentence).transpose();
    for (int j = 0; j < p; ++j) score[j] += out.residual_sd[j] * rng.normal();
    out.true_scores.row(i) = score.transpose();

    Vector w = out.amplitude_mean;
    for (int j = 0; j < m_w; ++j) w += score[j] * out.amplitude_modes.col(j);
    Vector s = Vector::Zero(g - 1);
    for (int j = 0; j < m_s; ++j) s += score[m_w + j] * out.phase_modes.col(j);
    const WarpingFunction h = clr::inverse(s);

    const double duration = std::max(score[p - 1], 4.0);  // tens of ms
    const double span_seconds = duration / 100.0;

    RawCurve curve;
    curve.id = padded_id("c", i + 1, id_width);
    const int reads = spec.readings_per_curve;
    curve.times.resize(reads);
    curve.values.resize(reads);
    for (int r = 0; r < reads; ++r) {
      const double u = static_cast<double>(r) / (reads - 1);
      curve.times[r] = u * span_seconds;
      const double registered_time = invert_at(h, u);
      double value = interp_linear(grid, w, registered_time) +
                     spec.noise_sd * rng.normal();
      if (spec.missing_probability > 0.0 &&
          rng.uniform() < spec.missing_probability)
        value = std::nan("");
      curve.values[r] = value;
    }
    out.curves.push_back(std::move(curve));

    out.covariates.ids.push_back(out.curves.back().id);
    out.covariates.values[0].push_back(
        padded_id("S", speaker + 1, 2));
    out.covariates.values[1].push_back(padded_id("P", sentence + 1, 3));
    out.covariates.values[2].push_back("tone" + std::to_string(cls + 1));
    out.covariates.values[3].push_back(speaker % 2 == 0 ? "f" : "m");
    out.covariates.values[4].push_back(std::to_string(b2));
  }
  return out;
}

}  // namespace warpfit::sim
