#include "vnd/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vnd/error.hpp"
#include "vnd/parallel.hpp"
#include "vnd/rng.hpp"
#include "vnd/sum_chain.hpp"

namespace vnd {

int fit_param_count(const FitResult& fit) {
  return hidden_param_count(fit.model_kind, fit.ell) + emission_param_count(fit.ell);
}

double bic_score(double log_likelihood, int num_params, std::size_t num_samples) {
  return 2.0 * log_likelihood - num_params * std::log(static_cast<double>(num_samples));
}

double bic_difference(double ll_a, int p_a, double ll_b, int p_b, std::size_t num_samples) {
  return 2.0 * (ll_a - ll_b) - (p_a - p_b) * std::log(static_cast<double>(num_samples));
}

const BicComparison* BicTable::find(const std::string& a, const std::string& b) const {
  for (const auto& c : comparisons) {
    if (c.a == a && c.b == b) return &c;
  }
  return nullptr;
}

BicTable bic_compare(const std::vector<FitResult>& fits, std::size_t num_samples) {
  if (num_samples == 0) throw DomainError("BIC needs a positive sample count");
  BicTable t;
  t.num_samples = num_samples;
  for (const auto& f : fits) {
    std::string label = to_string(f.model_kind);
    std::transform(label.begin(), label.end(), label.begin(), ::toupper);
    const int p = fit_param_count(f);
    t.entries.push_back({label, f.log_likelihood, p, bic_score(f.log_likelihood, p, num_samples)});
  }
  for (std::size_t i = 0; i < t.entries.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const auto& a = t.entries[i];
      const auto& b = t.entries[j];
      t.comparisons.push_back(
          {a.label, b.label,
           bic_difference(a.log_likelihood, a.num_params, b.log_likelihood, b.num_params, num_samples)});
    }
  }
  return t;
}

std::size_t DwellHistogram::total() const {
  std::size_t n = 0;
  for (const auto& [len, c] : counts) n += c;
  for (const auto& [len, c] : censored_counts) n += c;
  return n;
}

std::vector<DwellHistogram> dwell_times(const HiddenPath& path, int ell) {
  if (ell < 0) throw DomainError("ell must be nonnegative");
  if (path.empty()) throw DomainError("dwell times need a nonempty path");
  std::vector<DwellHistogram> out(static_cast<std::size_t>(ell) + 1);
  for (int s = 0; s <= ell; ++s) out[static_cast<std::size_t>(s)].state = s;
  std::size_t start = 0;
  for (std::size_t k = 1; k <= path.size(); ++k) {
    if (k < path.size() && path[k] == path[start]) continue;
    const int s = path[start];
    if (s < 0 || s > ell) throw DomainError("path state " + std::to_string(s) + " out of range");
    const std::size_t len = k - start;
    auto& h = out[static_cast<std::size_t>(s)];
    if (start == 0 || k == path.size()) ++h.censored_counts[len];
    else ++h.counts[len];
    start = k;
  }
  return out;
}

double dwell_prediction(const SumTransitionMatrix& q, int state, std::size_t t) {
  if (state < 0 || state > q.ell) throw DomainError("state out of range");
  if (t < 1) throw DomainError("dwell length must be at least 1");
  const double p = q(state, state);
  return std::pow(p, static_cast<double>(t - 1)) * (1.0 - p);
}

std::string to_string(GatingLabel label) {
  switch (label) {
    case GatingLabel::competitive: return "competitive";
    case GatingLabel::cooperative: return "cooperative";
    case GatingLabel::indeterminate: return "indeterminate";
  }
  return "?";
}

GatingRatios gating_ratios(const VndParams& params) {
  params.validate();
  if (params.ell() < 2) throw DomainError("gating ratios need ell >= 2");
  GatingRatios r;
  auto ratio = [&](double num, double den) {
    if (den == 0.0) {
      r.division_by_zero = true;
      return std::numeric_limits<double>::infinity();
    }
    return num / den;
  };
  r.ratio_lambda = ratio(1.0 - params.lambda(0), 1.0 - params.lambda(1));
  r.ratio_eta = ratio(1.0 - params.eta(2), 1.0 - params.eta(1));
  if (r.ratio_lambda > 1.0 && r.ratio_eta > 1.0) r.label = GatingLabel::competitive;
  else if (r.ratio_lambda < 1.0 && r.ratio_eta < 1.0) r.label = GatingLabel::cooperative;
  else r.label = GatingLabel::indeterminate;
  return r;
}

int observed_max_level(const ObservationSeries& obs, int probe_ell) {
  const GaussianEmission e = initial_emission(obs, probe_ell);
  HmmModel probe{q_uc(probe_ell, 0.99, 0.99), e,
                 std::vector<double>(static_cast<std::size_t>(probe_ell) + 1, 1.0 / (probe_ell + 1))};
  const auto path = viterbi(probe, obs);
  return *std::max_element(path.begin(), path.end());
}

ScanResult channel_count_scan(const ObservationSeries& obs, std::vector<int> ells,
                              const FitConfig& config) {
  obs.validate();
  if (ells.empty()) throw DomainError("scan needs at least one candidate ell");
  std::sort(ells.begin(), ells.end());
  ells.erase(std::unique(ells.begin(), ells.end()), ells.end());
  if (ells.front() < 1) throw DomainError("candidate ell must be at least 1");

  ScanResult out;
  out.observed_max_level = observed_max_level(obs, ells.back() + 1);
  std::optional<GaussianEmission> warm;
  for (int ell : ells) {
    ScanEntry entry;
    entry.ell = ell;
    if (ell < out.observed_max_level) {
      entry.error = "infeasible: data reach level " + std::to_string(out.observed_max_level) +
                    " but ell = " + std::to_string(ell);
      out.entries.push_back(std::move(entry));
      continue;
    }
    FitConfig c = config;
    c.model_kind = ModelKind::vnd;
    c.ell = ell;
    try {
      if (!warm) {
        entry.fit = baum_welch(obs, c);
      } else {
        GaussianEmission e = *warm;
        e.sigmas.resize(static_cast<std::size_t>(ell) + 1, e.sigmas.back());
        auto h = hidden_matrix(default_hidden_params(ModelKind::vnd, ell), ell);
        entry.fit = baum_welch(obs, c, HmmModel::with_stationary_start(std::move(h), std::move(e)));
      }
      warm = entry.fit->theta_e;
    } catch (const std::exception& ex) {
      entry.error = ex.what();
    }
    out.entries.push_back(std::move(entry));
  }
  return out;
}

VndParams RobustnessScenario::params() const {
  VndParams p = VndParams::constant(true_ell, 1.0, eta_rest);
  p.lambdas[0] = 1.0 - leave_closed_0;
  p.lambdas[1] = 1.0 - leave_closed_1;
  p.etas[0] = 1.0 - leave_open_1;
  p.etas[1] = 1.0 - leave_open_2;
  p.validate();
  return p;
}

std::vector<RobustnessSample> robustness_experiment(const VndParams& scenario,
                                                    const GaussianEmission& emission,
                                                    const RobustnessOptions& options) {
  scenario.validate();
  if (options.fit_ell > scenario.ell()) throw DomainError("fit ell must not exceed the true ell");
  if (options.fit_ell < 2) throw DomainError("gating ratios need a fitted ell >= 2");
  if (options.repetitions < 1) throw DomainError("repetitions must be positive");
  if (options.num_samples == 0) throw DomainError("number of samples must be positive");
  if (emission.ell() != scenario.ell()) throw DomainError("emission does not match the true ell");
  const HmmModel truth = HmmModel::with_stationary_start(q_vnd_closed_form(scenario), emission);

  std::vector<RobustnessSample> out(static_cast<std::size_t>(options.repetitions));
  parallel_for(
      out.size(),
      [&](std::size_t r) {
        auto& sample = out[r];
        sample.repetition = static_cast<int>(r);
        try {
          Rng rng(options.seed, r);
          const std::uint64_t sim_seed = rng.derive_seed();
          FitConfig c = options.fit;
          c.model_kind = ModelKind::vnd;
          c.ell = options.fit_ell;
          c.seed = rng.derive_seed();
          c.threads = 1;
          const auto sim = simulate(truth, options.num_samples, sim_seed);
          const auto fit = baum_welch(sim.observations, c);
          sample.ratios = gating_ratios(std::get<VndParams>(fit.theta_h));
        } catch (const std::exception& ex) {
          sample.error = ex.what();
        }
      },
      options.threads);
  return out;
}

}  // namespace vnd
