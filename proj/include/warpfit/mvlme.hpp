#pragma once

#include "warpfit/design.hpp"
#include "warpfit/types.hpp"

#include <Eigen/SparseCholesky>

#include <string>
#include <vector>

namespace warpfit::mvlme {

// Joint model for the p = M_w + M_s + 1 component responses with crossed
// random effects (speaker and sentence) and a masked unstructured
// covariance per effect.
struct ModelSpec {
  Matrix X;  // N x k fixed design, full column rank
  std::vector<int> group1, group2;  // level index per observation
  int l1 = 0, l2 = 0;
  int p = 0;
  Matrix mask1, mask2;  // p x p 0/1, unit diagonal

  std::vector<std::string> fixed_names;
  std::vector<std::string> level1_names, level2_names;
  std::vector<std::string> component_names;
  std::vector<std::string> warnings;

  int n() const { return static_cast<int>(X.rows()); }
  int k() const { return static_cast<int>(X.cols()); }
};

// Zero pattern of the random-effect covariance: within-amplitude and
// within-phase off-diagonals vanish (score orthogonality); cross-process
// and duration entries are free.
Matrix score_mask(int m_w, int m_s);

// Free covariance parameters: relative covariances Sigma_Ri / sigma^2
// (masked, symmetric) plus optional residual log-ratios r_2..r_p (r_1 = 1).
struct CovParams {
  Matrix g1, g2;
  Vector log_residual_ratio;  // size p-1, or empty in scalar-residual mode

  Vector ratios(int p) const;  // (1, r_2, ..., r_p)
};

struct ThetaLayout {
  std::vector<std::pair<int, int>> free1, free2;  // lower-triangle (i,j)
  int p = 0;
  bool scalar_residual = false;

  int size() const {
    return static_cast<int>(free1.size() + free2.size()) +
           (scalar_residual ? 0 : p - 1);
  }
};

ThetaLayout make_layout(const ModelSpec& spec, bool scalar_residual);
Vector pack_theta(const CovParams& params, const ThetaLayout& layout);

// Assembles symmetric matrices from theta, applies the Hadamard mask and
// clamps eigenvalues at 1e-8. `clamped` reports whether clamping fired.
CovParams unpack_theta(const Vector& theta, const ThetaLayout& layout,
                       const ModelSpec& spec, bool* clamped = nullptr,
                       double* min_eigenvalue = nullptr);

struct Deviance {
  double reml = 0.0;  // -2 log restricted likelihood, profiled
  double ml = 0.0;    // -2 log likelihood, profiled
  double sigma2 = 0.0;
  double penalized_rss = 0.0;
  Matrix b_hat;         // k x p
  Matrix b_se;          // k x p, GLS standard errors
  Matrix blup1, blup2;  // l1 x p, l2 x p
  Vector component_sigma;  // supplement's per-component conditional sd
};

// Profiled REML deviance through the augmented penalized least-squares
// system. The factorization works on the p(l+k)+1 dimensional augmented
// normal equations; nothing of size Np is ever formed.
class RemlProblem {
 public:
  RemlProblem(const ModelSpec& spec, const Matrix& responses);

  Deviance evaluate(const CovParams& params) const;

  const ModelSpec& spec() const { return *spec_; }
  Vector component_variances() const;  // sample variances of the responses

 private:
  const ModelSpec* spec_;
  Matrix responses_;
  // theta-independent Gram blocks
  Vector counts1_, counts2_;
  Eigen::SparseMatrix<double> z1tz2_;
  Matrix z1tx_, z2tx_, xtx_;
  Matrix z1ta_, z2ta_, xta_, ata_;
  mutable Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
  mutable bool pattern_ready_ = false;
};

struct FitOptions {
  bool scalar_residual = false;
  int max_evaluations = 500;  // BFGS stage budget
  double gradient_tol = 1e-6;
  int nm_max_iterations = 500;
  double nm_improvement_tol = 1e-4;
  int nm_improvement_window = 20;
  double nm_initial_step = 0.25;
};

struct FittedModel {
  Matrix b_hat;                // k x p
  Matrix b_se;                 // k x p
  Matrix sigma_r1, sigma_r2;   // p x p, masked zeros exact
  Vector residual_sd;          // p
  Matrix blup1, blup2;
  double reml = 0.0;
  double ml = 0.0;
  double sigma2 = 0.0;
  Vector theta;
  bool converged = false;
  bool clamped_at_optimum = false;
  double min_relative_eigenvalue = 0.0;
  int evaluations = 0;
  bool scalar_residual = false;

  std::vector<std::string> component_names;
  std::vector<std::string> fixed_names;
  std::vector<std::string> level1_names, level2_names;
};

// Hybrid Nelder-Mead / BFGS minimization of the profiled REML deviance.
FittedModel fit(const ModelSpec& spec, const Matrix& responses,
                const FitOptions& options = {});

// P_ij = S_ij / sqrt(S_ii S_jj); zero-variance components get NaN rows and
// columns (off the diagonal).
Matrix correlation_matrix(const Matrix& sigma);

// Literal dense evaluation of the restricted likelihood through the
// whitener K with K' (I_p (x) X) = 0: an independent oracle for
// RemlProblem, valid for deviance differences between parameter points.
// Guards at Np > 5000.
double direct_reml_deviance(const CovParams& params, const ModelSpec& spec,
                            const Matrix& responses);

// Inputs assembled by the pipeline: scores, durations, covariates, formula.
struct DesignInputs {
  Matrix amplitude_scores;  // N x M_w
  Matrix phase_scores;      // N x M_s
  Vector durations;         // N
  design::CovariateTable covariates;  // includes speaker and sentence
  std::string formula;
};

std::pair<ModelSpec, Matrix> build_design(const DesignInputs& inputs);

}  // namespace warpfit::mvlme
