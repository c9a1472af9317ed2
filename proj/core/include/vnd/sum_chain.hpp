#pragma once

// The (ell+1)-state sum chain: closed-form transition matrices for the VND,
// uncoupled and Chung-Kennedy models, and recovery of VND parameters from a
// sum-chain matrix (inverse lumping).

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vnd/error.hpp"
#include "vnd/markov_core.hpp"

namespace vnd {

// Row i of the VND sum chain for stay probabilities (lambda, eta) of that row,
// q_ij = sum_r C(i,r) C(ell-i, j-i+r) eta^(i-r) (1-eta)^r
//              lambda^(ell-j-r) (1-lambda)^(j-i+r).
// When d_lambda / d_eta are non-null they receive the partial derivatives.
void vnd_row(int ell, int i, double lambda, double eta, std::span<double> row,
             std::span<double> d_lambda = {}, std::span<double> d_eta = {});

// Closed form without 2^ell enumeration; no cap on ell.
SumTransitionMatrix q_vnd_closed_form(const VndParams& params);
SumTransitionMatrix q_uc(int ell, double lambda, double eta);
// (1 - kappa) * Q_uc + kappa * Q_fc with the lumped fully coupled matrix
// rows (lambda, 0.., 1-lambda), (1/2, 0.., 1/2) for mixed levels and
// (1-eta, 0.., eta).
SumTransitionMatrix q_ck(int ell, double lambda, double eta, double kappa);
// The lumped fully coupled matrix used by q_ck.
SumTransitionMatrix q_fc(int ell, double p00, double p11);

class NonVndInput : public Error {
 public:
  NonVndInput(const std::string& what, int row, double residual)
      : Error("non-vnd-input", what), row_(row), residual_(residual) {}
  int row() const noexcept { return row_; }
  double residual() const noexcept { return residual_; }

 private:
  int row_;
  double residual_;
};

// Raised for even ell when the middle level admits two parameter branches and
// the caller did not ask for the lambda >= 1 - eta branch. `candidates` holds
// both complete parameter sets; the second has lambda' = 1 - eta and
// eta' = 1 - lambda on the middle level.
class AmbiguousEvenCase : public Error {
 public:
  AmbiguousEvenCase(const std::string& what, int level, std::vector<VndParams> candidates)
      : Error("ambiguous-even-case", what), level_(level), candidates_(std::move(candidates)) {}
  int level() const noexcept { return level_; }
  const std::vector<VndParams>& candidates() const noexcept { return candidates_; }

 private:
  int level_;
  std::vector<VndParams> candidates_;
};

struct RecoveryOptions {
  // Select lambda >= 1 - eta on level ell/2 when ell is even.
  bool even_ell_constraint = false;
  // Largest accepted per-row sum of squared residuals.
  double residual_tol = 1e-6;
  // Branches closer than this are treated as one.
  double branch_tol = 1e-8;
  // Rows whose residual curvature falls below this are flagged unidentified.
  double curvature_tol = 1e-10;
};

struct RecoveryResult {
  VndParams params;
  // Worst per-row sum of squared residuals.
  double residual = 0.0;
  // Per level 0..ell: true when that level's parameters are not determined.
  std::vector<bool> unidentified;
  // For even ell: the level ell/2 branch that was rejected, if distinct.
  std::optional<VndParams> rejected_branch;
};

RecoveryResult recover_vnd_params(const SumTransitionMatrix& q,
                                  const RecoveryOptions& options = {});

// Convenience overload mirroring the common call.
inline VndParams recover_vnd_params(const SumTransitionMatrix& q, bool even_ell_constraint) {
  RecoveryOptions o;
  o.even_ell_constraint = even_ell_constraint;
  return recover_vnd_params(q, o).params;
}

struct StationaryResult {
  std::vector<double> distribution;
  bool irreducible = true;  // false: distribution is the uniform fallback
};

StationaryResult stationary_distribution(const SumTransitionMatrix& q);

}  // namespace vnd
