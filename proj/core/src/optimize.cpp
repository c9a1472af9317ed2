#include "vnd/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vnd/error.hpp"

namespace vnd::opt {

namespace {

double inf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double safe_eval(const Objective& f, std::span<const double> z, std::span<double> g) {
  const double v = f(z, g);
  if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
  for (double gi : g)
    if (!std::isfinite(gi)) return std::numeric_limits<double>::infinity();
  return v;
}

}  // namespace

BfgsResult minimize_bfgs(const Objective& f, std::vector<double> z0,
                         const BfgsOptions& options) {
  const std::size_t n = z0.size();
  auto clamp_z = [&](std::vector<double>& z) {
    for (double& v : z) v = std::clamp(v, -options.max_abs_z, options.max_abs_z);
  };
  clamp_z(z0);

  BfgsResult res;
  res.z = z0;
  std::vector<double> g(n), g_new(n), z_new(n), d(n), s(n), y(n), hy(n);
  res.value = safe_eval(f, res.z, g);
  if (!std::isfinite(res.value)) return res;

  std::vector<double> h(n * n, 0.0);
  auto reset_h = [&](double scale) {
    std::fill(h.begin(), h.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) h[i * n + i] = scale;
  };
  reset_h(1.0);
  bool fresh = true;

  for (int it = 0; it < options.max_iterations; ++it) {
    res.iterations = it + 1;
    if (inf_norm(g) <= options.gradient_tol) {
      res.converged = true;
      break;
    }
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc -= h[i * n + j] * g[j];
      d[i] = acc;
    }
    double slope = dot(g, d);
    if (!(slope < 0.0)) {
      reset_h(1.0);
      fresh = true;
      for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
      slope = dot(g, d);
    }
    // Keep trial steps inside a sane region of the unconstrained space.
    double step = 1.0;
    const double dmax = inf_norm(d);
    if (dmax > 10.0) step = 10.0 / dmax;

    double f_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      for (std::size_t i = 0; i < n; ++i) z_new[i] = res.z[i] + step * d[i];
      clamp_z(z_new);
      f_new = safe_eval(f, z_new, g_new);
      if (f_new <= res.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!fresh) {
        reset_h(1.0);
        fresh = true;
        continue;
      }
      // No descent possible along the gradient: treat as converged at
      // floating-point resolution.
      res.converged = inf_norm(g) <= 1e-6;
      break;
    }

    for (std::size_t i = 0; i < n; ++i) {
      s[i] = z_new[i] - res.z[i];
      y[i] = g_new[i] - g[i];
    }
    const double f_old = res.value;
    res.z = z_new;
    res.value = f_new;
    g = g_new;

    const double sy = dot(s, y);
    if (sy > 1e-300) {
      if (fresh) {
        const double yy = dot(y, y);
        if (yy > 0.0) reset_h(sy / yy);
        fresh = false;
      }
      const double rho = 1.0 / sy;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += h[i * n + j] * y[j];
        hy[i] = acc;
      }
      const double yhy = dot(y, hy);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) +
                          (rho * rho * yhy + rho) * s[i] * s[j];
    }

    const double change = std::abs(f_old - f_new);
    if (change <= options.value_rel_tol * std::max(1.0, std::abs(f_new)) &&
        inf_norm(s) <= 1e-12) {
      res.converged = true;
      break;
    }
  }
  return res;
}

LeastSquaresResult levenberg_marquardt(const Residuals& f, std::size_t m,
                                       std::vector<double> x0, double lower, double upper,
                                       int max_iterations) {
  const std::size_t n = x0.size();
  if (n < 1 || n > 2) throw DomainError("levenberg_marquardt supports 1 or 2 variables");
  auto clamp_x = [&](std::vector<double>& x) {
    for (double& v : x) v = std::clamp(v, lower, upper);
  };
  clamp_x(x0);

  std::vector<double> r(m), jac(m * n), r_try(m), jac_try(m * n), x_try(n);
  auto sum_sq = [](std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
  };

  LeastSquaresResult res;
  res.x = x0;
  f(res.x, r, jac);
  res.sum_squares = sum_sq(r);
  double mu = 1e-3;

  auto normal_eq = [&](std::span<const double> jj, std::span<const double> rr, double a[2][2],
                       double b[2]) {
    for (std::size_t i = 0; i < n; ++i) {
      b[i] = 0.0;
      for (std::size_t j = 0; j < n; ++j) a[i][j] = 0.0;
    }
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t i = 0; i < n; ++i) {
        b[i] += jj[k * n + i] * rr[k];
        for (std::size_t j = 0; j < n; ++j) a[i][j] += jj[k * n + i] * jj[k * n + j];
      }
  };

  for (int it = 0; it < max_iterations; ++it) {
    res.iterations = it + 1;
    if (res.sum_squares < 1e-32) break;
    double a[2][2], b[2];
    normal_eq(jac, r, a, b);
    bool improved = false;
    for (int tries = 0; tries < 30 && !improved; ++tries) {
      double aa[2][2];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          aa[i][j] = a[i][j] + (i == j ? mu * (a[i][i] + 1e-12) : 0.0);
      double delta[2] = {0.0, 0.0};
      if (n == 1) {
        delta[0] = b[0] / aa[0][0];
      } else {
        const double det = aa[0][0] * aa[1][1] - aa[0][1] * aa[1][0];
        if (det == 0.0 || !std::isfinite(det)) {
          mu *= 10.0;
          continue;
        }
        delta[0] = (aa[1][1] * b[0] - aa[0][1] * b[1]) / det;
        delta[1] = (aa[0][0] * b[1] - aa[1][0] * b[0]) / det;
      }
      for (std::size_t i = 0; i < n; ++i) x_try[i] = res.x[i] - delta[i];
      clamp_x(x_try);
      f(x_try, r_try, jac_try);
      const double ss = sum_sq(r_try);
      if (std::isfinite(ss) && ss < res.sum_squares) {
        const bool tiny = std::abs(x_try[0] - res.x[0]) +
                              (n == 2 ? std::abs(x_try[1] - res.x[1]) : 0.0) <
                          1e-17;
        res.x = x_try;
        r.swap(r_try);
        jac.swap(jac_try);
        res.sum_squares = ss;
        mu = std::max(mu / 3.0, 1e-15);
        improved = true;
        if (tiny) it = max_iterations;
      } else {
        mu *= 4.0;
      }
    }
    if (!improved) break;
  }

  double a[2][2], b[2];
  normal_eq(jac, r, a, b);
  if (n == 1) {
    res.min_curvature = a[0][0];
  } else {
    const double tr = a[0][0] + a[1][1];
    const double det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
    res.min_curvature = tr / 2.0 - disc;
  }
  return res;
}

}  // namespace vnd::opt
