#include "warpfit/mvlme.hpp"

#include "warpfit/optim.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <map>

namespace warpfit::mvlme {

namespace {

constexpr double kMinEigenvalue = 1e-8;
constexpr double kTwoPi = 6.283185307179586476925286766559;

Matrix masked_symmetric_clamp(const Matrix& raw, const Matrix& mask,
                              bool* clamped, double* min_eig) {
  Matrix m = (0.5 * (raw + raw.transpose())).cwiseProduct(mask);
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  const double lo = es.eigenvalues().minCoeff();
  if (min_eig) *min_eig = std::min(*min_eig, lo);
  if (lo >= kMinEigenvalue) return m;
  if (clamped) *clamped = true;
  Vector fixed = es.eigenvalues().cwiseMax(kMinEigenvalue);
  return es.eigenvectors() * fixed.asDiagonal() * es.eigenvectors().transpose();
}

double logdet_from_llt(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

// MANOVA-style starting point: covariances of per-level means of the OLS
// residuals, scaled by the within-cell variance. The diagonal default start
// can sit in a poor basin of the profiled deviance; this one usually starts
// inside the right valley.
CovParams moment_start_params(const ModelSpec& spec, const Matrix& responses,
                              const FitOptions& options) {
  const int n = spec.n(), p = spec.p;
  Eigen::HouseholderQR<Matrix> qr(spec.X);
  Matrix resid = responses - spec.X * qr.solve(responses);

  Matrix d1 = Matrix::Zero(spec.l1, p);
  Vector cnt1 = Vector::Zero(spec.l1);
  Matrix d2 = Matrix::Zero(std::max(spec.l2, 0), p);
  Vector cnt2 = Vector::Zero(std::max(spec.l2, 0));
  for (int i = 0; i < n; ++i) {
    d1.row(spec.group1[i]) += resid.row(i);
    cnt1[spec.group1[i]] += 1.0;
    if (spec.l2 > 0) {
      d2.row(spec.group2[i]) += resid.row(i);
      cnt2[spec.group2[i]] += 1.0;
    }
  }
  for (int v = 0; v < spec.l1; ++v) d1.row(v) /= std::max(cnt1[v], 1.0);
  for (int v = 0; v < spec.l2; ++v) d2.row(v) /= std::max(cnt2[v], 1.0);

  Matrix within = resid;
  for (int i = 0; i < n; ++i) {
    within.row(i) -= d1.row(spec.group1[i]);
    if (spec.l2 > 0) within.row(i) -= d2.row(spec.group2[i]);
  }
  const double df =
      std::max(n - spec.l1 - spec.l2 - spec.k(), 1);
  Vector ev =
      (within.array().square().colwise().sum() / df).transpose();
  for (int j = 0; j < p; ++j) ev[j] = std::max(ev[j], 1e-10);
  const double scale =
      options.scalar_residual ? ev.mean() : ev[0];

  CovParams out;
  const Matrix d1c = d1.rowwise() - d1.colwise().mean();
  out.g1 = (d1c.transpose() * d1c) / std::max(spec.l1 - 1, 1) / scale;
  if (spec.l2 > 0) {
    const Matrix d2c = d2.rowwise() - d2.colwise().mean();
    out.g2 = (d2c.transpose() * d2c) / std::max(spec.l2 - 1, 1) / scale;
  }
  if (!options.scalar_residual) {
    out.log_residual_ratio.resize(p - 1);
    for (int j = 1; j < p; ++j)
      out.log_residual_ratio[j - 1] = 0.5 * std::log(ev[j] / ev[0]);
  }
  return out;
}

}  // namespace

Matrix score_mask(int m_w, int m_s) {
  const int p = m_w + m_s + 1;
  Matrix mask = Matrix::Ones(p, p);
  for (int i = 0; i < m_w; ++i)
    for (int j = 0; j < m_w; ++j)
      if (i != j) mask(i, j) = 0.0;
  for (int i = 0; i < m_s; ++i)
    for (int j = 0; j < m_s; ++j)
      if (i != j) mask(m_w + i, m_w + j) = 0.0;
  return mask;
}

Vector CovParams::ratios(int p) const {
  Vector r = Vector::Ones(p);
  for (int j = 0; j < log_residual_ratio.size(); ++j)
    r[j + 1] = std::exp(log_residual_ratio[j]);
  return r;
}

ThetaLayout make_layout(const ModelSpec& spec, bool scalar_residual) {
  ThetaLayout layout;
  layout.p = spec.p;
  layout.scalar_residual = scalar_residual;
  for (int i = 0; i < spec.p; ++i)
    for (int j = 0; j <= i; ++j) {
      if (spec.mask1(i, j) != 0.0) layout.free1.emplace_back(i, j);
      if (spec.l2 > 0 && spec.mask2(i, j) != 0.0)
        layout.free2.emplace_back(i, j);
    }
  return layout;
}

Vector pack_theta(const CovParams& params, const ThetaLayout& layout) {
  Vector theta(layout.size());
  int at = 0;
  for (auto [i, j] : layout.free1) theta[at++] = params.g1(i, j);
  for (auto [i, j] : layout.free2) theta[at++] = params.g2(i, j);
  if (!layout.scalar_residual)
    for (int j = 0; j < layout.p - 1; ++j)
      theta[at++] = params.log_residual_ratio[j];
  return theta;
}

CovParams unpack_theta(const Vector& theta, const ThetaLayout& layout,
                       const ModelSpec& spec, bool* clamped,
                       double* min_eigenvalue) {
  if (theta.size() != layout.size())
    throw Error("unpack_theta: wrong parameter count");
  const int p = layout.p;
  Matrix raw1 = Matrix::Zero(p, p), raw2 = Matrix::Zero(p, p);
  int at = 0;
  for (auto [i, j] : layout.free1) {
    raw1(i, j) = theta[at];
    raw1(j, i) = theta[at];
    ++at;
  }
  for (auto [i, j] : layout.free2) {
    raw2(i, j) = theta[at];
    raw2(j, i) = theta[at];
    ++at;
  }
  CovParams params;
  if (clamped) *clamped = false;
  double min_eig = std::numeric_limits<double>::infinity();
  params.g1 = masked_symmetric_clamp(raw1, spec.mask1, clamped, &min_eig);
  params.g2 = spec.l2 > 0
                  ? masked_symmetric_clamp(raw2, spec.mask2, clamped, &min_eig)
                  : Matrix();
  if (min_eigenvalue) *min_eigenvalue = min_eig;
  if (layout.scalar_residual) {
    params.log_residual_ratio = Vector();
  } else {
    params.log_residual_ratio = theta.segment(at, p - 1);
  }
  return params;
}

RemlProblem::RemlProblem(const ModelSpec& spec, const Matrix& responses)
    : spec_(&spec), responses_(responses) {
  const int n = spec.n();
  if (responses.rows() != n || responses.cols() != spec.p)
    throw Error("RemlProblem: response matrix does not match the spec");
  if (spec.l1 < 1)
    throw Error("RemlProblem: first random effect needs at least one level");
  const bool crossed = spec.l2 > 0;

  counts1_ = Vector::Zero(spec.l1);
  counts2_ = Vector::Zero(std::max(spec.l2, 0));
  z1tx_ = Matrix::Zero(spec.l1, spec.k());
  z2tx_ = Matrix::Zero(spec.l2, spec.k());
  z1ta_ = Matrix::Zero(spec.l1, spec.p);
  z2ta_ = Matrix::Zero(spec.l2, spec.p);
  std::map<std::pair<int, int>, double> cross;
  for (int i = 0; i < n; ++i) {
    const int a = spec.group1[i];
    counts1_[a] += 1.0;
    z1tx_.row(a) += spec.X.row(i);
    z1ta_.row(a) += responses.row(i);
    if (crossed) {
      const int b = spec.group2[i];
      counts2_[b] += 1.0;
      z2tx_.row(b) += spec.X.row(i);
      z2ta_.row(b) += responses.row(i);
      cross[{a, b}] += 1.0;
    }
  }
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(cross.size());
  for (const auto& [key, val] : cross)
    trips.emplace_back(key.first, key.second, val);
  z1tz2_.resize(spec.l1, std::max(spec.l2, 0));
  z1tz2_.setFromTriplets(trips.begin(), trips.end());

  xtx_ = spec.X.transpose() * spec.X;
  xta_ = spec.X.transpose() * responses;
  ata_ = responses.transpose() * responses;
}

Vector RemlProblem::component_variances() const {
  const int n = static_cast<int>(responses_.rows());
  Vector v(responses_.cols());
  for (int j = 0; j < responses_.cols(); ++j) {
    const double mean = responses_.col(j).mean();
    v[j] = (responses_.col(j).array() - mean).square().sum() /
           std::max(n - 1, 1);
  }
  return v;
}

Deviance RemlProblem::evaluate(const CovParams& params) const {
  const ModelSpec& spec = *spec_;
  const int p = spec.p, k = spec.k(), n = spec.n();
  const int l1 = spec.l1, l2 = spec.l2;
  const int q = p * (l1 + l2);

  const Vector r = params.ratios(p);
  const Vector inv_r = r.cwiseInverse();

  // Relative covariances in the residual-scaled space and their inverses
  // (the penalty blocks S'S = P_i (x) I_li).
  Matrix g1s = inv_r.asDiagonal() * params.g1 * inv_r.asDiagonal();
  Eigen::LLT<Matrix> llt_g1(g1s), llt_g2;
  if (llt_g1.info() != Eigen::Success)
    throw NotPositiveDefinite("relative covariance not positive definite");
  const Matrix p1 = llt_g1.solve(Matrix::Identity(p, p));
  Matrix p2;
  // log|V| = log|C_ZZ| + l1 log|G1*| + l2 log|G2*| (Sylvester), which is the
  // supplement's |Phi'Phi| / |S'S| once the fixed-effect block joins in.
  double logdet_g = l1 * logdet_from_llt(llt_g1);
  if (l2 > 0) {
    Matrix g2s = inv_r.asDiagonal() * params.g2 * inv_r.asDiagonal();
    llt_g2.compute(g2s);
    if (llt_g2.info() != Eigen::Success)
      throw NotPositiveDefinite("relative covariance not positive definite");
    p2 = llt_g2.solve(Matrix::Identity(p, p));
    logdet_g += l2 * logdet_from_llt(llt_g2);
  }

  // Augmented normal-equation matrix over the stacked random effects:
  // component-major within each effect, effect 1 first.
  Eigen::SparseMatrix<double> czz(q, q);
  {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(q) * (p + 4));
    const auto idx1 = [&](int comp, int lev) { return comp * l1 + lev; };
    const auto idx2 = [&](int comp, int lev) {
      return p * l1 + comp * l2 + lev;
    };
    // All structural entries go in every time, zeros included: the symbolic
    // factorization is computed once and reused, so the pattern must not
    // depend on the current parameter values.
    for (int a = 0; a < p; ++a) {
      for (int v = 0; v < l1; ++v) {
        for (int b = 0; b < p; ++b) {
          const double pen = p1(a, b);
          const double val = (a == b) ? counts1_[v] + pen : pen;
          trips.emplace_back(idx1(a, v), idx1(b, v), val);
        }
      }
      for (int v = 0; v < l2; ++v) {
        for (int b = 0; b < p; ++b) {
          const double pen = p2(a, b);
          const double val = (a == b) ? counts2_[v] + pen : pen;
          trips.emplace_back(idx2(a, v), idx2(b, v), val);
        }
      }
      for (int outer = 0; outer < z1tz2_.outerSize(); ++outer)
        for (Eigen::SparseMatrix<double>::InnerIterator it(z1tz2_, outer); it;
             ++it) {
          trips.emplace_back(idx1(a, static_cast<int>(it.row())),
                             idx2(a, static_cast<int>(it.col())), it.value());
          trips.emplace_back(idx2(a, static_cast<int>(it.col())),
                             idx1(a, static_cast<int>(it.row())), it.value());
        }
    }
    czz.setFromTriplets(trips.begin(), trips.end());
  }

  if (!pattern_ready_) {
    solver_.analyzePattern(czz);
    pattern_ready_ = true;
  }
  solver_.factorize(czz);
  if (solver_.info() != Eigen::Success)
    throw NumericalBreakdown("augmented system factorization failed");
  const Vector d = solver_.vectorD();
  if ((d.array() <= 0.0).any())
    throw NumericalBreakdown("augmented system not positive definite");
  const double logdet_czz = d.array().log().sum();

  // Scaled response blocks.
  const Matrix z1ta_s = z1ta_ * inv_r.asDiagonal();
  const Matrix z2ta_s = z2ta_ * inv_r.asDiagonal();
  const Matrix xta_s = xta_ * inv_r.asDiagonal();
  double ata_s = 0.0;
  for (int j = 0; j < p; ++j) ata_s += ata_(j, j) * inv_r[j] * inv_r[j];

  Vector cza(q);
  for (int a = 0; a < p; ++a) {
    cza.segment(a * l1, l1) = z1ta_s.col(a);
    cza.segment(p * l1 + a * l2, l2) = z2ta_s.col(a);
  }

  Matrix czx = Matrix::Zero(q, p * k);
  for (int a = 0; a < p; ++a) {
    czx.block(a * l1, a * k, l1, k) = z1tx_;
    czx.block(p * l1 + a * l2, a * k, l2, k) = z2tx_;
  }

  const Matrix y = solver_.solve(czx);     // C_ZZ^-1 C_ZX
  const Vector u0 = solver_.solve(cza);    // C_ZZ^-1 c_ZA

  Matrix schur = -czx.transpose() * y;
  for (int a = 0; a < p; ++a) schur.block(a * k, a * k, k, k) += xtx_;
  Eigen::LLT<Matrix> llt_schur(schur);
  if (llt_schur.info() != Eigen::Success)
    throw NotPositiveDefinite("fixed-effect block not positive definite");
  const double logdet_schur = logdet_from_llt(llt_schur);

  Vector cxa(p * k);
  for (int a = 0; a < p; ++a) cxa.segment(a * k, k) = xta_s.col(a);

  const Vector b_vec = llt_schur.solve(cxa - czx.transpose() * u0);
  const Vector gamma = u0 - y * b_vec;
  const double rss = ata_s - cza.dot(gamma) - cxa.dot(b_vec);
  if (!(rss > 0.0))
    throw NumericalBreakdown("penalized residual sum of squares is not positive");

  const double df_reml = static_cast<double>(p) * (n - k);
  const double sigma2 = rss / df_reml;
  const double log_r_sum = r.array().log().sum();

  Deviance out;
  out.penalized_rss = rss;
  out.sigma2 = sigma2;
  out.reml = logdet_czz + logdet_schur + logdet_g +
             2.0 * (n - k) * log_r_sum +
             df_reml * (1.0 + std::log(kTwoPi * sigma2));
  const double df_ml = static_cast<double>(p) * n;
  out.ml = logdet_czz + logdet_g + 2.0 * n * log_r_sum +
           df_ml * (1.0 + std::log(kTwoPi * rss / df_ml));

  // Back to the original scale: component j carries the factor r_j.
  out.b_hat.resize(k, p);
  out.blup1.resize(l1, p);
  out.blup2.resize(l2, p);
  const Vector se_vec =
      (sigma2 * llt_schur.solve(Matrix::Identity(p * k, p * k)).diagonal())
          .cwiseSqrt();
  out.b_se.resize(k, p);
  for (int a = 0; a < p; ++a) {
    out.b_hat.col(a) = b_vec.segment(a * k, k) * r[a];
    out.b_se.col(a) = se_vec.segment(a * k, k) * r[a];
    out.blup1.col(a) = gamma.segment(a * l1, l1) * r[a];
    out.blup2.col(a) = gamma.segment(p * l1 + a * l2, l2) * r[a];
  }

  // Supplement's conditional per-component sd: residual and penalty
  // contributions attributed componentwise, divisor n - k.
  {
    Matrix fitted_s = spec.X * (out.b_hat * inv_r.asDiagonal());
    for (int i = 0; i < n; ++i) {
      fitted_s.row(i) += out.blup1.row(spec.group1[i]) * inv_r.asDiagonal();
      if (l2 > 0)
        fitted_s.row(i) += out.blup2.row(spec.group2[i]) * inv_r.asDiagonal();
    }
    Matrix resid_s = responses_ * inv_r.asDiagonal() - fitted_s;
    Vector comp = resid_s.array().square().colwise().sum().transpose();
    // Penalty per level is || L^-1 gamma_v ||^2 with G* = L L'; the entries
    // of the whitened coordinates attribute to the p components.
    const Matrix lo1 = llt_g1.matrixL();
    const Matrix w1 = lo1.triangularView<Eigen::Lower>().solve(
        Matrix(out.blup1 * inv_r.asDiagonal()).transpose());
    comp += w1.array().square().rowwise().sum().matrix();
    if (l2 > 0) {
      const Matrix lo2 = llt_g2.matrixL();
      const Matrix w2 = lo2.triangularView<Eigen::Lower>().solve(
          Matrix(out.blup2 * inv_r.asDiagonal()).transpose());
      comp += w2.array().square().rowwise().sum().matrix();
    }
    out.component_sigma =
        (comp / static_cast<double>(n - k)).array().sqrt();
  }

  return out;
}

FittedModel fit(const ModelSpec& spec, const Matrix& responses,
                const FitOptions& options) {
  const RemlProblem problem(spec, responses);
  const ThetaLayout layout = make_layout(spec, options.scalar_residual);
  const int p = spec.p;

  // Start: a tenth of each component's variance in each random effect,
  // residual ratios from the component variances themselves.
  const Vector va = problem.component_variances();
  CovParams start;
  start.g1 = Matrix::Zero(p, p);
  start.g2 = spec.l2 > 0 ? Matrix::Zero(p, p) : Matrix();
  const double sigma2_0 =
      options.scalar_residual ? 0.8 * va.mean() : 0.8 * va[0];
  for (int j = 0; j < p; ++j) {
    start.g1(j, j) = 0.1 * va[j] / sigma2_0;
    if (spec.l2 > 0) start.g2(j, j) = 0.1 * va[j] / sigma2_0;
  }
  if (!options.scalar_residual) {
    start.log_residual_ratio.resize(p - 1);
    for (int j = 1; j < p; ++j)
      start.log_residual_ratio[j - 1] = 0.5 * std::log(va[j] / va[0]);
  }
  const CovParams moment_start = moment_start_params(spec, responses, options);

  int evaluations = 0;
  const auto objective = [&](const Vector& theta) {
    ++evaluations;
    try {
      return problem.evaluate(unpack_theta(theta, layout, spec)).reml;
    } catch (const Error&) {
      return std::numeric_limits<double>::max();
    }
  };

  // The hybrid alternates between the simplex search and quasi-Newton
  // refinement until a full round stops paying.
  optim::NelderMeadOptions nm;
  nm.max_iterations = options.nm_max_iterations;
  nm.initial_step = options.nm_initial_step;
  nm.improvement_tol = options.nm_improvement_tol;
  nm.improvement_window = options.nm_improvement_window;
  optim::BfgsOptions bo;
  bo.gradient_tol = options.gradient_tol;
  bo.max_evaluations = options.max_evaluations;

  Vector theta_best;
  double value_best = std::numeric_limits<double>::max();
  bool gradient_converged = false;
  for (const CovParams* s : {&moment_start, &start}) {
    optim::NelderMeadOptions nm_round = nm;
    Vector theta = pack_theta(*s, layout);
    double value = objective(theta);
    bool converged_here = false;
    for (int round = 0; round < 8; ++round) {
      const auto nm_result = optim::nelder_mead(objective, theta, nm_round);
      if (nm_result.value < value) {
        theta = nm_result.x;
        value = nm_result.value;
      }
      const auto bfgs_result = optim::bfgs(objective, theta, bo);
      converged_here = bfgs_result.converged;
      const double improvement = value - bfgs_result.value;
      if (bfgs_result.value < value) {
        theta = bfgs_result.x;
        value = bfgs_result.value;
      }
      if (converged_here ||
          improvement < 1e-7 * std::max(1.0, std::abs(value)))
        break;
      nm_round.initial_step = std::max(0.02, 0.5 * nm_round.initial_step);
    }
    if (value < value_best) {
      value_best = value;
      theta_best = theta;
      gradient_converged = converged_here;
    }
  }

  FittedModel model;
  model.evaluations = evaluations;
  model.converged = gradient_converged;
  model.theta = theta_best;
  model.scalar_residual = options.scalar_residual;

  bool clamped = false;
  double min_eig = std::numeric_limits<double>::infinity();
  const CovParams final_params =
      unpack_theta(theta_best, layout, spec, &clamped, &min_eig);
  const Deviance dev = problem.evaluate(final_params);

  model.reml = dev.reml;
  model.ml = dev.ml;
  model.sigma2 = dev.sigma2;
  model.b_hat = dev.b_hat;
  model.b_se = dev.b_se;
  model.blup1 = dev.blup1;
  model.blup2 = dev.blup2;
  model.clamped_at_optimum = clamped;
  model.min_relative_eigenvalue = min_eig;

  // Reported covariances keep the masked zeros exact even when the
  // eigenvalue clamp perturbed them during the final evaluation; the
  // clamped_at_optimum flag records that the optimum sat on the boundary.
  const Vector r = final_params.ratios(p);
  model.sigma_r1 =
      (dev.sigma2 * final_params.g1).cwiseProduct(spec.mask1);
  model.sigma_r2 =
      spec.l2 > 0
          ? Matrix((dev.sigma2 * final_params.g2).cwiseProduct(spec.mask2))
          : Matrix();
  if (options.scalar_residual) {
    model.residual_sd = dev.component_sigma;
  } else {
    model.residual_sd = std::sqrt(dev.sigma2) * r;
  }

  model.component_names = spec.component_names;
  model.fixed_names = spec.fixed_names;
  model.level1_names = spec.level1_names;
  model.level2_names = spec.level2_names;
  return model;
}

Matrix correlation_matrix(const Matrix& sigma) {
  const int p = static_cast<int>(sigma.rows());
  Matrix corr = Matrix::Identity(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) {
      if (i == j) continue;
      const double denom = std::sqrt(sigma(i, i) * sigma(j, j));
      corr(i, j) = denom > 0.0 ? sigma(i, j) / denom
                               : std::numeric_limits<double>::quiet_NaN();
    }
  return corr;
}

double direct_reml_deviance(const CovParams& params, const ModelSpec& spec,
                            const Matrix& responses) {
  const int n = spec.n(), p = spec.p, k = spec.k();
  if (static_cast<long>(n) * p > 5000)
    throw TooLarge("direct_reml_deviance: Np exceeds the dense guard");

  Matrix z1 = Matrix::Zero(n, spec.l1), z2 = Matrix::Zero(n, spec.l2);
  for (int i = 0; i < n; ++i) {
    z1(i, spec.group1[i]) = 1.0;
    if (spec.l2 > 0) z2(i, spec.group2[i]) = 1.0;
  }
  const Matrix z1z1 = z1 * z1.transpose();
  const Matrix z2z2 = z2 * z2.transpose();
  const Vector r = params.ratios(p);

  // Whitener from the QR of X, replicated over components.
  Eigen::HouseholderQR<Matrix> qr(spec.X);
  const Matrix q_full = qr.householderQ() * Matrix::Identity(n, n);
  const Matrix kx = q_full.rightCols(n - k);

  const int w = n - k;
  Matrix psi(p * w, p * w);
  Vector omega(p * w);
  for (int a = 0; a < p; ++a) {
    for (int b = 0; b < p; ++b) {
      Matrix v_ab = params.g1(a, b) * z1z1;
      if (spec.l2 > 0) v_ab += params.g2(a, b) * z2z2;
      if (a == b) v_ab.diagonal().array() += r[a] * r[a];
      psi.block(a * w, b * w, w, w) = kx.transpose() * v_ab * kx;
    }
    omega.segment(a * w, w) = kx.transpose() * responses.col(a);
  }

  Eigen::LLT<Matrix> llt(psi);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite("direct_reml_deviance: Psi not PD");
  const double rss = omega.dot(llt.solve(omega));
  const double df = static_cast<double>(p) * (n - k);
  const double sigma2 = rss / df;
  return logdet_from_llt(llt) + df * (1.0 + std::log(kTwoPi * sigma2));
}

std::pair<ModelSpec, Matrix> build_design(const DesignInputs& inputs) {
  const int n = static_cast<int>(inputs.durations.size());
  if (inputs.amplitude_scores.rows() != n || inputs.phase_scores.rows() != n)
    throw Error("build_design: score/duration row mismatch");
  if (inputs.covariates.rows() != n)
    throw Error("build_design: covariate rows do not match curves");

  const int m_w = static_cast<int>(inputs.amplitude_scores.cols());
  const int m_s = static_cast<int>(inputs.phase_scores.cols());
  const int p = m_w + m_s + 1;

  ModelSpec spec;
  spec.p = p;
  spec.mask1 = score_mask(m_w, m_s);
  spec.mask2 = spec.mask1;

  const design::Formula formula = design::parse_formula(inputs.formula);
  design::FixedDesign fixed =
      design::build_fixed_design(formula, inputs.covariates);
  spec.X = std::move(fixed.X);
  spec.fixed_names = std::move(fixed.column_names);
  spec.warnings = std::move(fixed.warnings);

  const int c_speaker = inputs.covariates.column("speaker");
  const int c_sentence = inputs.covariates.column("sentence");
  if (c_speaker < 0 || c_sentence < 0)
    throw Error("build_design: covariates must include speaker and sentence");
  const design::Grouping g1 =
      design::group_levels(inputs.covariates.values[c_speaker]);
  const design::Grouping g2 =
      design::group_levels(inputs.covariates.values[c_sentence]);
  spec.group1 = g1.index;
  spec.group2 = g2.index;
  spec.l1 = static_cast<int>(g1.levels.size());
  spec.l2 = static_cast<int>(g2.levels.size());
  spec.level1_names = g1.levels;
  spec.level2_names = g2.levels;

  for (int j = 0; j < m_w; ++j)
    spec.component_names.push_back("wFPC" + std::to_string(j + 1));
  for (int j = 0; j < m_s; ++j)
    spec.component_names.push_back("sFPC" + std::to_string(j + 1));
  spec.component_names.push_back("Duration");

  Matrix responses(n, p);
  responses.leftCols(m_w) = inputs.amplitude_scores;
  responses.middleCols(m_w, m_s) = inputs.phase_scores;
  responses.col(p - 1) = inputs.durations;
  return {std::move(spec), std::move(responses)};
}

}  // namespace warpfit::mvlme
