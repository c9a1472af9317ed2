#pragma once

// Baum-Welch estimation of Gaussian-emission HMMs whose hidden chain is a VND,
// uncoupled (UC) or Chung-Kennedy (CK) sum chain.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "vnd/hmm.hpp"
#include "vnd/markov_core.hpp"

namespace vnd {

enum class ModelKind { vnd, uc, ck };

std::string to_string(ModelKind kind);
// Accepts "vnd", "uc", "ck" in any case; throws ConfigError otherwise.
ModelKind parse_model_kind(std::string_view text);

struct UcParams {
  double lambda = 0.95;
  double eta = 0.95;
  friend bool operator==(const UcParams&, const UcParams&) = default;
};

struct CkParams {
  double lambda = 0.95;
  double eta = 0.95;
  double kappa = 0.1;
  friend bool operator==(const CkParams&, const CkParams&) = default;
};

using HiddenParams = std::variant<VndParams, UcParams, CkParams>;

ModelKind kind_of(const HiddenParams& theta);
SumTransitionMatrix hidden_matrix(const HiddenParams& theta, int ell);
// Default starting point: every stay probability 0.95 (kappa 0.1 for CK).
HiddenParams default_hidden_params(ModelKind kind, int ell);

// Free hidden parameters: 2 ell for VND, 2 for UC, 3 for CK.
int hidden_param_count(ModelKind kind, int ell);
// mu, nu and one sigma per level.
int emission_param_count(int ell);

struct FitConfig {
  ModelKind model_kind = ModelKind::vnd;
  int ell = 2;
  int max_iterations = 500;
  double loglik_rel_tol = 1e-8;
  // lambda_{ell/2} >= 1 - eta_{ell/2} for even ell.
  bool enforce_half_constraint = true;
  int restarts = 5;
  std::uint64_t seed = 0;
  // sigma_s^2 is kept above this multiple of the sample variance.
  double variance_floor_factor = 1e-6;
  // Maximum threads for restarts; 0 means hardware concurrency.
  std::size_t threads = 0;

  void validate() const;
};

struct FitResult {
  ModelKind model_kind = ModelKind::vnd;
  int ell = 0;
  HiddenParams theta_h;
  GaussianEmission theta_e;
  std::vector<double> initial;
  double log_likelihood = 0.0;
  int iterations = 0;
  std::vector<double> loglik_trace;
  bool converged = false;
  // Some sigma_s reached the variance floor, or a level had no weight.
  bool degenerate_emission = false;
  std::size_t num_samples = 0;
  // Final log-likelihood of every restart, best one included.
  std::vector<double> restart_log_likelihoods;
  // Vector-chain matrix of the fitted VND parameters (ell <= kDefaultEllCap).
  std::optional<FullTransitionMatrix> recovered_m;

  HmmModel model() const;
  SumTransitionMatrix hidden() const { return hidden_matrix(theta_h, ell); }
};

// Maximises sum_ij counts(i,j) log q_ij(theta) over the parameter box.
// Starts from `warm_start` plus four jittered points and never returns a point
// with a lower objective than `warm_start`.
HiddenParams m_step_hidden(const Matrix& counts, const FitConfig& config,
                           const HiddenParams& warm_start);

struct EmissionOptions {
  double variance_floor = 0.0;
  // Alternations between the (mu, nu) regression and the sigma update.
  int inner_iterations = 5;
};

struct EmissionUpdate {
  GaussianEmission emission;
  bool degenerate = false;
};

// Weighted Gaussian M-step given the posterior state weights (K x (ell+1)).
// (mu, nu) solve the regression of y on the state index weighted by
// gamma / sigma_s^2; each sigma_s^2 is the weighted residual second moment.
EmissionUpdate m_step_emission(const Matrix& univariate, const ObservationSeries& obs,
                               const GaussianEmission& previous,
                               const EmissionOptions& options = {});

// Emission starting point from the level structure of the data.
GaussianEmission initial_emission(const ObservationSeries& obs, int ell);

// EM from the given model (or the data-driven start), restarts included.
FitResult baum_welch(const ObservationSeries& obs, const FitConfig& config,
                     const std::optional<HmmModel>& init = std::nullopt);

// A single EM run from a fully specified starting model.
FitResult baum_welch_single(const ObservationSeries& obs, const FitConfig& config,
                            const HiddenParams& theta_h, const GaussianEmission& theta_e,
                            std::vector<double> initial);

}  // namespace vnd
