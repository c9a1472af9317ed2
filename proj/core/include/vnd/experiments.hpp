#pragma once

// Model comparison, dwell-time analysis, gating diagnostics and the
// simulation experiments built on top of baum_welch.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vnd/estimation.hpp"

namespace vnd {

// --- BIC -------------------------------------------------------------------

// Free parameters of a fit: hidden + emission (the initial law is fixed).
int fit_param_count(const FitResult& fit);

// 2 log L - p ln K; larger is better.
double bic_score(double log_likelihood, int num_params, std::size_t num_samples);

struct BicEntry {
  std::string label;  // "VND", "UC", "CK"
  double log_likelihood = 0.0;
  int num_params = 0;
  double score = 0.0;
};

struct BicComparison {
  std::string a;
  std::string b;
  // 2 (log L_a - log L_b) - (p_a - p_b) ln K
  double difference = 0.0;
};

struct BicTable {
  std::size_t num_samples = 0;
  std::vector<BicEntry> entries;
  // Every ordered pair (i, j) with i > j in input order.
  std::vector<BicComparison> comparisons;

  const BicComparison* find(const std::string& a, const std::string& b) const;
};

double bic_difference(double ll_a, int p_a, double ll_b, int p_b, std::size_t num_samples);
BicTable bic_compare(const std::vector<FitResult>& fits, std::size_t num_samples);

// --- dwell times -------------------------------------------------------------

struct DwellHistogram {
  int state = 0;
  std::map<std::size_t, std::size_t> counts;           // uncensored runs
  std::map<std::size_t, std::size_t> censored_counts;  // runs touching either end
  double stay_probability = 0.0;  // q_ss of the model used for prediction, if any

  std::size_t total() const;
};

// One histogram per state 0..ell.
std::vector<DwellHistogram> dwell_times(const HiddenPath& path, int ell);

// q_ss^(t-1) (1 - q_ss).
double dwell_prediction(const SumTransitionMatrix& q, int state, std::size_t t);

// --- gating ratios ----------------------------------------------------------

enum class GatingLabel { competitive, cooperative, indeterminate };
std::string to_string(GatingLabel label);

struct GatingRatios {
  double ratio_lambda = 0.0;  // (1 - lambda_0) / (1 - lambda_1)
  double ratio_eta = 0.0;     // (1 - eta_2) / (1 - eta_1)
  GatingLabel label = GatingLabel::indeterminate;
  // A denominator was zero and the ratio was reported as +infinity.
  bool division_by_zero = false;
};

GatingRatios gating_ratios(const VndParams& params);

// --- channel-count scan ------------------------------------------------------

struct ScanEntry {
  int ell = 0;
  std::optional<FitResult> fit;
  std::string error;  // empty when the fit succeeded
};

struct ScanResult {
  // Largest level seen by a coarse decoding of the data; candidates below it
  // are infeasible.
  int observed_max_level = 0;
  std::vector<ScanEntry> entries;
};

// Highest level visited by the Viterbi path of a sticky probe model with
// `probe_ell` levels and data-driven emission.
int observed_max_level(const ObservationSeries& obs, int probe_ell);

ScanResult channel_count_scan(const ObservationSeries& obs, std::vector<int> ells,
                              const FitConfig& config);

// --- robustness experiment ---------------------------------------------------

struct RobustnessScenario {
  int true_ell = 20;
  // 1 - lambda_0, 1 - lambda_1, 1 - eta_1, 1 - eta_2; lambda_k = 1 for k > 1
  // and eta_k = 0.8 for k > 2.
  double leave_closed_0 = 0.001;
  double leave_closed_1 = 0.0005;
  double leave_open_1 = 0.02;
  double leave_open_2 = 0.04;
  double eta_rest = 0.8;
  GaussianEmission emission = GaussianEmission::uniform(20, 0.0, 1.0, 0.2);

  VndParams params() const;
};

struct RobustnessSample {
  int repetition = 0;
  std::optional<GatingRatios> ratios;
  std::string error;
};

struct RobustnessOptions {
  int fit_ell = 3;
  std::size_t num_samples = 1000000;
  int repetitions = 20;
  std::uint64_t seed = 0;
  FitConfig fit;  // model_kind and ell are overridden
  std::size_t threads = 0;
};

// Simulates every repetition from the true-ell VND model and fits a VND model
// with fit_ell levels. Failures are recorded per repetition.
std::vector<RobustnessSample> robustness_experiment(const VndParams& scenario,
                                                    const GaussianEmission& emission,
                                                    const RobustnessOptions& options);

}  // namespace vnd
