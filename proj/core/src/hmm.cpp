#include "vnd/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "vnd/error.hpp"
#include "vnd/rng.hpp"
#include "vnd/sum_chain.hpp"

namespace vnd {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Neumaier compensated sum.
struct CompensatedSum {
  double sum = 0.0;
  double c = 0.0;
  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      c += (sum - t) + x;
    } else {
      c += (x - t) + sum;
    }
    sum = t;
  }
  double value() const { return sum + c; }
};

struct EmissionTable {
  std::vector<double> offset;   // -log(sqrt(2 pi) sigma)
  std::vector<double> inv_two_var;
  std::vector<double> mean;

  explicit EmissionTable(const GaussianEmission& e) {
    const auto n = e.sigmas.size();
    offset.resize(n);
    inv_two_var.resize(n);
    mean.resize(n);
    for (std::size_t s = 0; s < n; ++s) {
      const double sd = e.sigmas[s];
      offset[s] = -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sd);
      inv_two_var[s] = 0.5 / (sd * sd);
      mean[s] = e.mean(static_cast<int>(s));
    }
  }

  double log_density(double y, std::size_t s) const {
    const double d = y - mean[s];
    return offset[s] - inv_two_var[s] * d * d;
  }
};

void check_compatible(const HmmModel& model, const ObservationSeries& obs) {
  model.validate();
  obs.validate();
}

std::size_t sample_categorical(std::span<const double> probs, double u) {
  double acc = 0.0;
  for (std::size_t s = 0; s < probs.size(); ++s) {
    acc += probs[s];
    if (u < acc) return s;
  }
  // Rounding in the row sum: fall back to the last state with positive mass.
  for (std::size_t s = probs.size(); s-- > 0;) {
    if (probs[s] > 0.0) return s;
  }
  return probs.size() - 1;
}

}  // namespace

void GaussianEmission::validate() const {
  if (sigmas.empty()) throw DomainError("emission needs at least one noise level");
  if (!std::isfinite(mu) || !std::isfinite(nu)) throw DomainError("emission mean and step must be finite");
  for (std::size_t s = 0; s < sigmas.size(); ++s) {
    if (!(sigmas[s] > 0.0) || !std::isfinite(sigmas[s])) {
      throw DomainError("emission noise level sigma_" + std::to_string(s) + " must be positive");
    }
  }
}

GaussianEmission GaussianEmission::uniform(int ell, double mu, double nu, double sigma) {
  if (ell < 1) throw DomainError("ell must be at least 1");
  return GaussianEmission{mu, nu, std::vector<double>(static_cast<std::size_t>(ell) + 1, sigma)};
}

void HmmModel::validate() const {
  const auto n = static_cast<std::size_t>(hidden.ell) + 1;
  if (hidden.ell < 1 || hidden.entries.rows() != n || hidden.entries.cols() != n) {
    throw DomainError("hidden matrix must be (ell+1) x (ell+1) with ell >= 1");
  }
  if (emission.ell() != hidden.ell) {
    throw DomainError("emission has " + std::to_string(emission.sigmas.size()) +
                      " noise levels but the hidden chain has " + std::to_string(n) + " states");
  }
  emission.validate();
  if (initial.size() != n) throw DomainError("initial distribution has the wrong length");
  double total = 0.0;
  for (double p : initial) {
    if (!(p >= 0.0)) throw DomainError("initial distribution has a negative entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("initial distribution does not sum to 1");
}

HmmModel HmmModel::with_stationary_start(SumTransitionMatrix hidden, GaussianEmission emission) {
  auto pi = stationary_distribution(hidden).distribution;
  return HmmModel{std::move(hidden), std::move(emission), std::move(pi)};
}

void ObservationSeries::validate() const {
  if (values.empty()) throw DomainError("observation series is empty");
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!std::isfinite(values[k])) {
      throw DomainError("observation " + std::to_string(k + 1) + " is not finite");
    }
  }
  if (sample_interval && !(*sample_interval > 0.0)) {
    throw DomainError("sample interval must be positive");
  }
}

double emission_logdensity(const GaussianEmission& emission, double y, int s) {
  if (s < 0 || s > emission.ell()) throw DomainError("state out of range");
  const double sd = emission.sigmas[static_cast<std::size_t>(s)];
  const double d = (y - emission.mean(s)) / sd;
  return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sd) - 0.5 * d * d;
}

HiddenPath simulate_path(const SumTransitionMatrix& q, std::span<const double> initial,
                         std::size_t num_samples, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(q.ell) + 1;
  if (initial.size() != n) throw DomainError("initial distribution has the wrong length");
  HiddenPath path(num_samples);
  if (num_samples == 0) return path;
  Rng rng(seed);
  std::size_t s = sample_categorical(initial, rng.uniform());
  path[0] = static_cast<int>(s);
  for (std::size_t k = 1; k < num_samples; ++k) {
    s = sample_categorical(q.entries.row(s), rng.uniform());
    path[k] = static_cast<int>(s);
  }
  return path;
}

SimulationResult simulate(const HmmModel& model, std::size_t num_samples, std::uint64_t seed) {
  model.validate();
  if (num_samples == 0) throw DomainError("number of samples must be positive");
  SimulationResult out;
  out.path.resize(num_samples);
  out.observations.values.resize(num_samples);
  Rng rng(seed);
  std::size_t s = 0;
  for (std::size_t k = 0; k < num_samples; ++k) {
    s = k == 0 ? sample_categorical(model.initial, rng.uniform())
               : sample_categorical(model.hidden.entries.row(s), rng.uniform());
    out.path[k] = static_cast<int>(s);
    const int si = static_cast<int>(s);
    out.observations.values[k] = model.emission.mean(si) + model.emission.sigmas[s] * rng.normal();
  }
  return out;
}

FilteringResult forward_backward(const HmmModel& model, const ObservationSeries& obs,
                                 const FilterOptions& options) {
  check_compatible(model, obs);
  const std::size_t K = obs.size();
  const std::size_t n = static_cast<std::size_t>(model.ell()) + 1;
  const EmissionTable table(model.emission);
  const Matrix& q = model.hidden.entries;

  FilteringResult out;
  out.univariate = Matrix(K, n);
  out.expected_transitions = Matrix(n, n);
  out.log_scaling_factors.resize(K);
  if (options.store_bivariate && K > 1) out.bivariate.assign((K - 1) * n * n, 0.0);

  // g holds emission densities scaled by exp(-max_s log g); alpha is stored
  // in `univariate` and overwritten with the smoothed posteriors.
  Matrix g(K, n);
  Matrix& alpha = out.univariate;
  std::vector<double> scale(K);
  CompensatedSum loglik;
  std::vector<double> logg(n);

  for (std::size_t k = 0; k < K; ++k) {
    const double y = obs.values[k];
    double m = kNegInf;
    for (std::size_t s = 0; s < n; ++s) {
      logg[s] = table.log_density(y, s);
      m = std::max(m, logg[s]);
    }
    auto gk = g.row(k);
    for (std::size_t s = 0; s < n; ++s) gk[s] = std::exp(logg[s] - m);

    auto ak = alpha.row(k);
    if (k == 0) {
      for (std::size_t s = 0; s < n; ++s) ak[s] = model.initial[s] * gk[s];
    } else {
      auto prev = alpha.row(k - 1);
      std::fill(ak.begin(), ak.end(), 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        const double a = prev[r];
        if (a == 0.0) continue;
        auto qr = q.row(r);
        for (std::size_t s = 0; s < n; ++s) ak[s] += a * qr[s];
      }
      for (std::size_t s = 0; s < n; ++s) ak[s] *= gk[s];
    }
    double c = 0.0;
    for (std::size_t s = 0; s < n; ++s) c += ak[s];
    if (!(c > 0.0) || !std::isfinite(c)) {
      throw NumericalUnderflow("forward normaliser vanished at sample " + std::to_string(k + 1));
    }
    for (std::size_t s = 0; s < n; ++s) ak[s] /= c;
    scale[k] = c;
    out.log_scaling_factors[k] = std::log(c) + m;
    loglik.add(out.log_scaling_factors[k]);
  }
  out.log_likelihood = loglik.value();

  // Backward pass: beta_k is kept for one step only. gamma_k = alpha_k * beta_k.
  std::vector<double> beta(n, 1.0), next_beta(n), tmp(n);
  Matrix& xi_sum = out.expected_transitions;
  for (std::size_t k = K; k-- > 0;) {
    auto ak = alpha.row(k);
    if (k + 1 < K) {
      auto g1 = g.row(k + 1);
      const double inv_c = 1.0 / scale[k + 1];
      for (std::size_t s = 0; s < n; ++s) tmp[s] = g1[s] * beta[s] * inv_c;
      double* biv = out.bivariate.empty() ? nullptr : out.bivariate.data() + k * n * n;
      for (std::size_t r = 0; r < n; ++r) {
        auto qr = q.row(r);
        const double a = ak[r];
        double b = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
          const double t = qr[s] * tmp[s];
          b += t;
          const double xi = a * t;
          xi_sum(r, s) += xi;
          if (biv) biv[r * n + s] = xi;
        }
        next_beta[r] = b;
      }
      std::swap(beta, next_beta);
    }
    double total = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      // A state the filter cannot reach has no posterior mass, but its scaled
      // beta can grow without bound; drop it before it overflows.
      if (ak[s] < 1e-290) beta[s] = 0.0;
      ak[s] *= beta[s];
      total += ak[s];
    }
    // Guards against drift in the last few bits.
    if (total > 0.0) {
      for (std::size_t s = 0; s < n; ++s) ak[s] /= total;
    }
  }
  return out;
}

double complete_log_likelihood(const HmmModel& model, const HiddenPath& path,
                               const ObservationSeries& obs) {
  check_compatible(model, obs);
  if (path.size() != obs.size()) throw DomainError("path and observations differ in length");
  const int n = model.ell() + 1;
  for (int s : path) {
    if (s < 0 || s >= n) throw DomainError("path state out of range");
  }
  const EmissionTable table(model.emission);
  CompensatedSum total;
  const double p0 = model.initial[static_cast<std::size_t>(path[0])];
  if (p0 <= 0.0) return kNegInf;
  total.add(std::log(p0));
  for (std::size_t k = 0; k < path.size(); ++k) {
    if (k > 0) {
      const double p = model.hidden(path[k - 1], path[k]);
      if (p <= 0.0) return kNegInf;
      total.add(std::log(p));
    }
    total.add(table.log_density(obs.values[k], static_cast<std::size_t>(path[k])));
  }
  return total.value();
}

HiddenPath viterbi(const HmmModel& model, const ObservationSeries& obs) {
  check_compatible(model, obs);
  const std::size_t K = obs.size();
  const std::size_t n = static_cast<std::size_t>(model.ell()) + 1;
  const EmissionTable table(model.emission);

  Matrix logq(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t s = 0; s < n; ++s) {
      const double p = model.hidden.entries(r, s);
      logq(r, s) = p > 0.0 ? std::log(p) : kNegInf;
    }
  }

  std::vector<std::uint16_t> back(K * n);
  std::vector<double> delta(n), next(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double p = model.initial[s];
    delta[s] = (p > 0.0 ? std::log(p) : kNegInf) + table.log_density(obs.values[0], s);
  }
  for (std::size_t k = 1; k < K; ++k) {
    const double y = obs.values[k];
    for (std::size_t s = 0; s < n; ++s) {
      double best = kNegInf;
      std::size_t arg = 0;
      for (std::size_t r = 0; r < n; ++r) {
        const double v = delta[r] + logq(r, s);
        if (v > best) {
          best = v;
          arg = r;
        }
      }
      next[s] = best + table.log_density(y, s);
      back[k * n + s] = static_cast<std::uint16_t>(arg);
    }
    std::swap(delta, next);
  }

  HiddenPath path(K);
  std::size_t s = 0;
  double best = kNegInf;
  for (std::size_t r = 0; r < n; ++r) {
    if (delta[r] > best) {
      best = delta[r];
      s = r;
    }
  }
  if (best == kNegInf) throw NumericalUnderflow("every hidden path has zero probability");
  for (std::size_t k = K; k-- > 0;) {
    path[k] = static_cast<int>(s);
    if (k > 0) s = back[k * n + s];
  }
  return path;
}

}  // namespace vnd
