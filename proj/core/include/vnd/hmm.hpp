#pragma once

// Gaussian-emission hidden Markov model on the sum chain.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vnd/markov_core.hpp"
#include "vnd/matrix.hpp"

namespace vnd {

// Y = mu + S * nu + sigma_S * xi with xi standard normal.
struct GaussianEmission {
  double mu = 0.0;
  double nu = 1.0;
  std::vector<double> sigmas;  // sigma_0 .. sigma_ell

  int ell() const noexcept { return static_cast<int>(sigmas.size()) - 1; }
  double mean(int s) const noexcept { return mu + s * nu; }
  void validate() const;

  static GaussianEmission uniform(int ell, double mu, double nu, double sigma);
};

struct HmmModel {
  SumTransitionMatrix hidden;
  GaussianEmission emission;
  std::vector<double> initial;  // pi over levels 0..ell

  int ell() const noexcept { return hidden.ell; }
  void validate() const;

  // Model whose initial distribution is the stationary law of `hidden`
  // (uniform when the chain is reducible).
  static HmmModel with_stationary_start(SumTransitionMatrix hidden, GaussianEmission emission);
};

struct ObservationSeries {
  std::vector<double> values;
  std::optional<double> sample_interval;  // seconds; metadata only

  std::size_t size() const noexcept { return values.size(); }
  void validate() const;
};

using HiddenPath = std::vector<int>;

struct FilterOptions {
  // The (K-1) x (ell+1)^2 pairwise posteriors dominate memory for long
  // series; estimation only needs their sum over time.
  bool store_bivariate = true;
};

struct FilteringResult {
  double log_likelihood = 0.0;
  Matrix univariate;  // K x (ell+1): P(S_k = s | y)
  // Flattened (K-1) x (ell+1) x (ell+1): P(S_k = r, S_k+1 = s | y); empty
  // unless requested.
  std::vector<double> bivariate;
  // Sum over k of the bivariate slices: expected transition counts.
  Matrix expected_transitions;
  // log of the per-step normalisers; they sum to log_likelihood.
  std::vector<double> log_scaling_factors;

  double pair(std::size_t k, int r, int s) const {
    const auto n = univariate.cols();
    return bivariate[(k * n + static_cast<std::size_t>(r)) * n + static_cast<std::size_t>(s)];
  }
};

struct SimulationResult {
  HiddenPath path;
  ObservationSeries observations;
};

// s_1 ~ pi, s_{k+1} ~ row s_k of the hidden matrix, y_k ~ N(mu + s_k nu,
// sigma_{s_k}^2). Reproducible for a given seed.
SimulationResult simulate(const HmmModel& model, std::size_t num_samples, std::uint64_t seed);

// Samples only the hidden chain. Used for very long chains where the
// emissions are generated separately.
HiddenPath simulate_path(const SumTransitionMatrix& q, std::span<const double> initial,
                         std::size_t num_samples, std::uint64_t seed);

double emission_logdensity(const GaussianEmission& emission, double y, int s);

// Scaled forward-backward pass. Throws NumericalUnderflow if a normaliser is
// exactly zero.
FilteringResult forward_backward(const HmmModel& model, const ObservationSeries& obs,
                                 const FilterOptions& options = {});

// Joint log-density of a hidden path and the observations; -infinity when the
// path uses a zero-probability start or transition.
double complete_log_likelihood(const HmmModel& model, const HiddenPath& path,
                               const ObservationSeries& obs);

// Most probable hidden path; ties go to the lower state index.
HiddenPath viterbi(const HmmModel& model, const ObservationSeries& obs);

}  // namespace vnd
