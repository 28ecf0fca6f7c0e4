#pragma once

#include "warpfit/types.hpp"

#include <functional>

namespace warpfit::optim {

using Objective = std::function<double(const Vector&)>;

struct NelderMeadOptions {
  int max_iterations = 500;
  double diameter_tol = 1e-6;
  double initial_step = 0.25;
  // Optional early stop: quit when the best value improves by less than
  // improvement_tol (relative) over improvement_window iterations. <= 0
  // disables the check.
  double improvement_tol = 0.0;
  int improvement_window = 20;
};

struct NelderMeadResult {
  Vector x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;  // diameter tolerance reached
};

NelderMeadResult nelder_mead(const Objective& f, const Vector& start,
                             const NelderMeadOptions& options = {});

struct BfgsOptions {
  double gradient_tol = 1e-6;
  int max_evaluations = 500;
  double fd_step_scale = 1e-5;  // step = scale * (1 + |theta_i|)
};

struct BfgsResult {
  Vector x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;  // gradient norm below tolerance
};

// Quasi-Newton minimization with forward-difference gradients and an
// Armijo backtracking line search.
BfgsResult bfgs(const Objective& f, const Vector& start,
                const BfgsOptions& options = {});

}  // namespace warpfit::optim
