#pragma once

// Vector Markov chains on {0,1}^ell: transition-matrix construction for the
// vector-norm-dependent (VND), fully coupled, uncoupled and Chung-Kennedy
// models, structural property checks, and lumping to the sum chain.
//
// State vectors are indexed little-endian: bit i of the index is coordinate i.

#include <bit>
#include <cstdint>
#include <optional>
#include <vector>

#include "vnd/matrix.hpp"

namespace vnd {

// Default upper bound on ell for anything that materialises a 2^ell x 2^ell
// matrix.
inline constexpr int kDefaultEllCap = 12;

// Default tolerance for the structural checks.
inline constexpr double kStructureTolerance = 1e-10;

class StateVector {
 public:
  StateVector(int ell, std::uint32_t index);
  static StateVector from_bits(const std::vector<int>& bits);

  int ell() const noexcept { return ell_; }
  std::uint32_t index() const noexcept { return index_; }
  int bit(int i) const noexcept { return static_cast<int>((index_ >> i) & 1u); }
  int one_norm() const noexcept { return std::popcount(index_); }

 private:
  int ell_;
  std::uint32_t index_;
};

// The 2*ell probabilities of a VND chain: lambdas[j] = P(stay closed | j open)
// for j = 0..ell-1 and etas[j-1] = P(stay open | j open) for j = 1..ell.
struct VndParams {
  std::vector<double> lambdas;
  std::vector<double> etas;

  int ell() const noexcept { return static_cast<int>(lambdas.size()); }

  // lambda_j with the convention lambda_ell = 1.
  double lambda(int j) const { return j >= ell() ? 1.0 : lambdas.at(static_cast<std::size_t>(j)); }
  // eta_j with the convention eta_0 = 1.
  double eta(int j) const { return j <= 0 ? 1.0 : etas.at(static_cast<std::size_t>(j - 1)); }

  // Throws DomainError unless both sequences have the same positive length and
  // every entry lies in [0,1].
  void validate() const;

  static VndParams constant(int ell, double lambda, double eta);

  friend bool operator==(const VndParams&, const VndParams&) = default;
};

struct FullTransitionMatrix {
  int ell = 0;
  Matrix entries;  // 2^ell x 2^ell
};

struct SumTransitionMatrix {
  int ell = 0;
  Matrix entries;  // (ell+1) x (ell+1)

  double operator()(int i, int j) const {
    return entries(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  }

  // Wraps a user-supplied matrix; throws DomainError unless it is square,
  // has entries in [0,1] and rows summing to 1 within `tol`.
  static SumTransitionMatrix from_matrix(Matrix m, double tol = 1e-9);
};

// Result of the structural checks. Each check fills its own flag; flags of
// checks that were not run stay empty. max_violation is the largest absolute
// deviation seen by the checks that were run.
struct StructureReport {
  std::optional<bool> lumpable;
  std::optional<bool> permutation_invariant;
  std::optional<bool> conditionally_independent;
  double max_violation = 0.0;
};

enum class Structure { general, lumpable, permutation_invariant, vnd };

FullTransitionMatrix build_m_vnd(const VndParams& params, int ell_cap = kDefaultEllCap);
FullTransitionMatrix build_m_uc(int ell, double lambda, double eta,
                                int ell_cap = kDefaultEllCap);
// Fully coupled chain. From all-zeros: p00 to all-zeros, 1-p00 to all-ones.
// From all-ones: p11 to all-ones, 1-p11 to all-zeros. Mixed states (never
// reached by this chain) jump to all-zeros or all-ones with probability 1/2
// each, which keeps the matrix permutation invariant.
FullTransitionMatrix build_m_fc(int ell, double p00, double p11,
                                int ell_cap = kDefaultEllCap);
// kappa * FC(lambda, eta) + (1 - kappa) * UC(lambda, eta).
FullTransitionMatrix build_m_ck(int ell, double lambda, double eta, double kappa,
                                int ell_cap = kDefaultEllCap);

// Sum-chain matrix: q_ij is the mean over x with |x| = i of the mass row x puts
// on {y : |y| = j}. Exact for lumpable input.
SumTransitionMatrix lump(const FullTransitionMatrix& m);

StructureReport is_lumpable(const FullTransitionMatrix& m, double tol = kStructureTolerance);
StructureReport is_permutation_invariant(const FullTransitionMatrix& m,
                                         double tol = kStructureTolerance);
StructureReport is_conditionally_independent(const FullTransitionMatrix& m,
                                              double tol = kStructureTolerance);
// Runs all three checks.
StructureReport analyze_structure(const FullTransitionMatrix& m,
                                  double tol = kStructureTolerance);

// Reads lambda_r and eta_r off a matrix through the per-coordinate
// conditionals P(X'_i = b | X_i = b, |X| = r). Returns nullopt unless the
// matrix is permutation invariant and conditionally independent within tol.
std::optional<VndParams> extract_vnd_params(const FullTransitionMatrix& m,
                                            double tol = kStructureTolerance);

std::uint64_t count_free_params(int ell, Structure structure);

// Number of distinct (|x|, |y|, |x - y|) classes over all pairs x, y.
std::uint64_t signature_class_count(int ell);

// Binomial coefficient as a double; exact for the sizes used here.
double binomial(int n, int k);

}  // namespace vnd
