#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>

#include "vnd/error.hpp"
#include "vnd/estimation.hpp"

namespace vnd {

namespace {

constexpr std::size_t kMaxSubsample = 50000;

std::vector<double> subsample(const std::vector<double>& y) {
  if (y.size() <= kMaxSubsample) return y;
  std::vector<double> out;
  out.reserve(kMaxSubsample);
  const double step = static_cast<double>(y.size()) / kMaxSubsample;
  for (std::size_t i = 0; i < kMaxSubsample; ++i) out.push_back(y[static_cast<std::size_t>(i * step)]);
  return out;
}

// Lloyd's algorithm on sorted data with quantile starts.
std::vector<double> kmeans_1d(const std::vector<double>& sorted, int k) {
  const std::size_t n = sorted.size();
  std::vector<double> c(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    const auto idx = static_cast<std::size_t>((j + 0.5) / k * static_cast<double>(n));
    c[static_cast<std::size_t>(j)] = sorted[std::min(idx, n - 1)];
  }
  std::vector<double> sum(c.size()), cnt(c.size());
  for (int it = 0; it < 100; ++it) {
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(cnt.begin(), cnt.end(), 0.0);
    std::size_t j = 0;
    for (double y : sorted) {
      while (j + 1 < c.size() && y > 0.5 * (c[j] + c[j + 1])) ++j;
      sum[j] += y;
      cnt[j] += 1.0;
    }
    bool moved = false;
    for (std::size_t m = 0; m < c.size(); ++m) {
      if (cnt[m] == 0.0) continue;
      const double nc = sum[m] / cnt[m];
      if (nc != c[m]) moved = true;
      c[m] = nc;
    }
    std::sort(c.begin(), c.end());
    if (!moved) break;
  }
  return c;
}

struct MixtureFit {
  double mu, nu, sigma, loglik;
};

// Equally spaced Gaussian mixture with free weights and a shared sigma.
MixtureFit fit_mixture(const std::vector<double>& y, int ell, double mu, double nu, double sigma) {
  const auto n = static_cast<std::size_t>(ell) + 1;
  std::vector<double> w(n, 1.0 / static_cast<double>(n)), r(n), W(n), Y(n), YY(n);
  double loglik = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < 60; ++it) {
    std::fill(W.begin(), W.end(), 0.0);
    std::fill(Y.begin(), Y.end(), 0.0);
    std::fill(YY.begin(), YY.end(), 0.0);
    const double inv2v = 0.5 / (sigma * sigma);
    const double off = -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sigma);
    double ll = 0.0;
    for (double v : y) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < n; ++s) {
        const double d = v - (mu + static_cast<double>(s) * nu);
        r[s] = (w[s] > 0.0 ? std::log(w[s]) : -1e300) - inv2v * d * d;
        m = std::max(m, r[s]);
      }
      double tot = 0.0;
      for (auto& x : r) tot += (x = std::exp(x - m));
      ll += m + std::log(tot) + off;
      for (std::size_t s = 0; s < n; ++s) {
        const double p = r[s] / tot;
        W[s] += p;
        Y[s] += p * v;
        YY[s] += p * v * v;
      }
    }
    loglik = ll;
    double a00 = 0, a01 = 0, a11 = 0, b0 = 0, b1 = 0;
    for (std::size_t s = 0; s < n; ++s) {
      const double si = static_cast<double>(s);
      a00 += W[s];
      a01 += W[s] * si;
      a11 += W[s] * si * si;
      b0 += Y[s];
      b1 += si * Y[s];
      w[s] = W[s] / static_cast<double>(y.size());
    }
    const double det = a00 * a11 - a01 * a01;
    if (det > 1e-12 * a00 * a11) {
      mu = (a11 * b0 - a01 * b1) / det;
      nu = (a00 * b1 - a01 * b0) / det;
    }
    double ss = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const double m = mu + static_cast<double>(s) * nu;
      ss += YY[s] - 2.0 * m * Y[s] + m * m * W[s];
    }
    sigma = std::sqrt(std::max(ss / static_cast<double>(y.size()), 1e-12 * nu * nu + 1e-300));
  }
  return {mu, nu, sigma, loglik};
}

}  // namespace

GaussianEmission initial_emission(const ObservationSeries& obs, int ell) {
  obs.validate();
  if (ell < 1) throw DomainError("ell must be at least 1");
  auto y = subsample(obs.values);
  auto sorted = y;
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front(), hi = sorted.back();
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= static_cast<double>(y.size());
  const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
  if (!(hi > lo)) return GaussianEmission::uniform(ell, lo, sd, sd);

  const auto centers = kmeans_1d(sorted, ell + 1);
  const double base = centers.front();
  std::vector<double> spacings;
  for (std::size_t i = 1; i < centers.size(); ++i) {
    const double gap = centers[i] - base;
    if (!(gap > 1e-9 * (hi - lo))) continue;
    for (int m = 1; m <= std::min(ell, 6); ++m) spacings.push_back(gap / m);
  }
  std::sort(spacings.begin(), spacings.end(), std::greater<>());
  std::vector<double> unique;
  for (double s : spacings) {
    if (unique.empty() || s < 0.95 * unique.back()) unique.push_back(s);
  }
  if (unique.size() > 16) unique.resize(16);
  if (unique.empty()) unique.push_back(sd);

  std::vector<MixtureFit> fits;
  for (double nu : unique) fits.push_back(fit_mixture(y, ell, base, nu, std::min(sd, nu / 4.0)));
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& f : fits) best = std::max(best, f.loglik);
  // Prefer the widest spacing whose likelihood is close to the best: a finer
  // grid can always absorb noise with its spare levels.
  const double slack = 10.0 * std::log(static_cast<double>(y.size()));
  const MixtureFit* chosen = &fits.front();
  for (const auto& f : fits) {
    if (f.loglik >= best - slack) {
      chosen = &f;
      break;
    }
  }
  double nu = chosen->nu;
  double mu = chosen->mu;
  if (nu < 0.0) {
    mu += ell * nu;
    nu = -nu;
  }
  return GaussianEmission::uniform(ell, mu, nu, chosen->sigma);
}

}  // namespace vnd
