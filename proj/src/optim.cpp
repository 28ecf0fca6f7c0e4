#include "warpfit/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace warpfit::optim {

namespace {

double guarded(const Objective& f, const Vector& x, int& evals) {
  ++evals;
  const double v = f(x);
  return std::isfinite(v) ? v : std::numeric_limits<double>::max();
}

}  // namespace

NelderMeadResult nelder_mead(const Objective& f, const Vector& start,
                             const NelderMeadOptions& options) {
  const int n = static_cast<int>(start.size());
  const double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;

  NelderMeadResult res;
  std::vector<Vector> x(n + 1, start);
  std::vector<double> fx(n + 1);
  for (int i = 1; i <= n; ++i) x[i][i - 1] += options.initial_step;
  for (int i = 0; i <= n; ++i) fx[i] = guarded(f, x[i], res.evaluations);

  std::vector<int> order(n + 1);
  double window_best = *std::min_element(fx.begin(), fx.end());

  for (res.iterations = 0; res.iterations < options.max_iterations;
       ++res.iterations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return fx[a] < fx[b]; });
    const int best = order[0], worst = order[n], second_worst = order[n - 1];

    double diameter = 0.0;
    for (int i = 1; i <= n; ++i)
      diameter = std::max(diameter, (x[order[i]] - x[best]).norm());
    if (diameter < options.diameter_tol) {
      res.converged = true;
      break;
    }
    if (options.improvement_tol > 0.0 && options.improvement_window > 0 &&
        res.iterations > 0 &&
        res.iterations % options.improvement_window == 0) {
      const double scale = std::max(1.0, std::abs(fx[best]));
      if ((window_best - fx[best]) / scale < options.improvement_tol) break;
      window_best = fx[best];
    }

    Vector centroid = Vector::Zero(n);
    for (int i = 0; i <= n; ++i)
      if (i != worst) centroid += x[i];
    centroid /= n;

    const Vector reflected = centroid + alpha * (centroid - x[worst]);
    const double f_ref = guarded(f, reflected, res.evaluations);

    if (f_ref < fx[best]) {
      const Vector expanded = centroid + gamma * (reflected - centroid);
      const double f_exp = guarded(f, expanded, res.evaluations);
      if (f_exp < f_ref) {
        x[worst] = expanded;
        fx[worst] = f_exp;
      } else {
        x[worst] = reflected;
        fx[worst] = f_ref;
      }
    } else if (f_ref < fx[second_worst]) {
      x[worst] = reflected;
      fx[worst] = f_ref;
    } else {
      const bool outside = f_ref < fx[worst];
      const Vector anchor = outside ? reflected : x[worst];
      const Vector contracted = centroid + rho * (anchor - centroid);
      const double f_con = guarded(f, contracted, res.evaluations);
      if (f_con < std::min(f_ref, fx[worst])) {
        x[worst] = contracted;
        fx[worst] = f_con;
      } else {
        for (int i = 0; i <= n; ++i) {
          if (i == best) continue;
          x[i] = x[best] + sigma * (x[i] - x[best]);
          fx[i] = guarded(f, x[i], res.evaluations);
        }
      }
    }
  }

  int best = 0;
  for (int i = 1; i <= n; ++i)
    if (fx[i] < fx[best]) best = i;
  res.x = x[best];
  res.value = fx[best];
  return res;
}

BfgsResult bfgs(const Objective& f, const Vector& start,
                const BfgsOptions& options) {
  const int n = static_cast<int>(start.size());
  BfgsResult res;
  Vector x = start;
  double fx = guarded(f, x, res.evaluations);

  // Central differences: the extra evaluations buy a truncation error of
  // O(h^2), which keeps quasi-Newton directions usable near the optimum.
  auto gradient = [&](const Vector& at, double /*f_at*/) {
    Vector g(n);
    Vector probe = at;
    for (int i = 0; i < n; ++i) {
      const double h = options.fd_step_scale * (1.0 + std::abs(at[i]));
      probe[i] = at[i] + h;
      const double up = guarded(f, probe, res.evaluations);
      probe[i] = at[i] - h;
      const double down = guarded(f, probe, res.evaluations);
      probe[i] = at[i];
      g[i] = (up - down) / (2.0 * h);
    }
    return g;
  };

  Vector g = gradient(x, fx);
  Matrix h_inv = Matrix::Identity(n, n);

  while (res.evaluations < options.max_evaluations) {
    if (g.norm() < options.gradient_tol) {
      res.converged = true;
      break;
    }
    Vector direction = -h_inv * g;
    if (direction.dot(g) >= 0.0) {  // lost curvature; reset to steepest descent
      h_inv.setIdentity();
      direction = -g;
    }

    double step = 1.0;
    double slope = g.dot(direction);
    double f_new = fx;
    Vector x_new = x;
    bool accepted = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      for (int ls = 0; ls < 40 && res.evaluations < options.max_evaluations;
           ++ls) {
        x_new = x + step * direction;
        f_new = guarded(f, x_new, res.evaluations);
        if (f_new <= fx + 1e-4 * step * slope) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted && attempt == 0) {
        // A stale Hessian approximation can point uphill; retry once along
        // the raw gradient.
        h_inv.setIdentity();
        direction = -g;
        slope = g.dot(direction);
        step = 1.0;
      }
    }
    if (!accepted) break;

    const Vector g_new = gradient(x_new, f_new);
    const Vector s = x_new - x;
    const Vector y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const Matrix eye = Matrix::Identity(n, n);
      const Matrix left = eye - (s * y.transpose()) / sy;
      h_inv = left * h_inv * left.transpose() + (s * s.transpose()) / sy;
    }
    x = x_new;
    fx = f_new;
    g = g_new;
  }

  res.x = x;
  res.value = fx;
  if (g.norm() < options.gradient_tol) res.converged = true;
  return res;
}

}  // namespace warpfit::optim
