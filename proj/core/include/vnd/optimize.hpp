#pragma once

// Small dense optimisers used by the inverse-lumping solver and the numeric
// M-step. Problems here have at most a handful of variables.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace vnd::opt {

// Objective returning f(z) and writing the gradient into `grad`.
// Non-finite values are treated as +infinity by the line search.
using Objective = std::function<double(std::span<const double> z, std::span<double> grad)>;

struct BfgsOptions {
  int max_iterations = 500;
  double gradient_tol = 1e-12;  // on the infinity norm
  double value_rel_tol = 1e-15;
  double max_abs_z = 40.0;  // iterates are clamped to [-max_abs_z, max_abs_z]
};

struct BfgsResult {
  std::vector<double> z;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Quasi-Newton minimisation with Armijo backtracking on an unconstrained
// (usually logit-transformed) parametrisation.
BfgsResult minimize_bfgs(const Objective& f, std::vector<double> z0,
                         const BfgsOptions& options = {});

// Residual function r(x) with Jacobian J (row-major, m x n) for box-bounded
// least squares.
using Residuals = std::function<void(std::span<const double> x, std::span<double> r,
                                     std::span<double> jac)>;

struct LeastSquaresResult {
  std::vector<double> x;
  double sum_squares = 0.0;
  // Smallest eigenvalue of J^T J at the solution.
  double min_curvature = 0.0;
  int iterations = 0;
};

// Projected Levenberg-Marquardt on [lower, upper]^n. Intended for polishing a
// good starting point; n must be 1 or 2.
LeastSquaresResult levenberg_marquardt(const Residuals& f, std::size_t num_residuals,
                                       std::vector<double> x0, double lower, double upper,
                                       int max_iterations = 200);

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline double logit(double p, double eps = 1e-15) {
  p = std::min(std::max(p, eps), 1.0 - eps);
  return std::log(p) - std::log1p(-p);
}

}  // namespace vnd::opt
