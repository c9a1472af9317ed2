#pragma once

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "vnd/markov_core.hpp"
#include "vnd/matrix.hpp"
#include "vnd/rng.hpp"

namespace vnd::testing {

// Interior draw used by the identifiability tests: both stay probabilities in
// [lo, hi] so every level has a well-conditioned row.
inline VndParams random_params(Rng& rng, int ell, double lo = 0.0, double hi = 1.0) {
  VndParams p;
  for (int j = 0; j < ell; ++j) p.lambdas.push_back(lo + (hi - lo) * rng.uniform());
  for (int j = 0; j < ell; ++j) p.etas.push_back(lo + (hi - lo) * rng.uniform());
  return p;
}

// Draw with the middle level on the lambda >= 1 - eta branch.
inline VndParams random_params_half(Rng& rng, int ell, double lo, double hi) {
  auto p = random_params(rng, ell, lo, hi);
  if (ell % 2 == 0) {
    auto m = static_cast<std::size_t>(ell / 2);
    double& l = p.lambdas[m];
    double& e = p.etas[m - 1];
    if (l < 1.0 - e) {
      const double nl = 1.0 - e, ne = 1.0 - l;
      l = nl;
      e = ne;
    }
  }
  return p;
}

inline double max_param_diff(const VndParams& a, const VndParams& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.lambdas.size(); ++i) d = std::max(d, std::abs(a.lambdas[i] - b.lambdas[i]));
  for (std::size_t i = 0; i < a.etas.size(); ++i) d = std::max(d, std::abs(a.etas[i] - b.etas[i]));
  return d;
}

inline double max_row_sum_error(const Matrix& m) {
  double worst = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (double v : m.row(r)) s += v;
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

}  // namespace vnd::testing
