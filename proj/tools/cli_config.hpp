#pragma once

// Typed view of vndhmm configuration files.
//
//   [model]       kind, ell, lambda, eta, kappa
//   [emission]    mu, nu, sigma
//   [simulation]  samples, seed, sample_interval
//   [fit]         model, ell, max_iterations, tolerance, restarts, seed,
//                 assume_half_constraint, variance_floor, threads, decimate
//   [scan]        ells
//   [robustness]  true_ell, fit_ell, samples, repetitions, seed, threads,
//                 leave_closed_0, leave_closed_1, leave_open_1, leave_open_2,
//                 eta_rest, mu, nu, sigma
//
// Unknown sections and keys are errors.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vnd/estimation.hpp"
#include "vnd/experiments.hpp"
#include "vnd/io.hpp"

namespace vndcli {

struct ModelSection {
  vnd::ModelKind kind = vnd::ModelKind::vnd;
  int ell = 0;
  vnd::HiddenParams theta;
};

struct SimulationSection {
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::optional<double> sample_interval;
};

struct FitSection {
  vnd::FitConfig config;
  std::size_t decimate = 1;
};

struct RobustnessSection {
  vnd::RobustnessScenario scenario;
  vnd::RobustnessOptions options;
};

class Config {
 public:
  Config() = default;
  static Config load(const std::string& path);

  bool empty() const { return !doc_.has_value(); }
  const vnd::KeyValueDocument* document() const { return doc_ ? &*doc_ : nullptr; }

  ModelSection model() const;
  vnd::GaussianEmission emission(int ell) const;
  SimulationSection simulation() const;
  FitSection fit() const;
  std::vector<int> scan_ells() const;
  RobustnessSection robustness() const;

 private:
  std::optional<vnd::KeyValueDocument> doc_;
};

}  // namespace vndcli
