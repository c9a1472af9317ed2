#include "vnd/markov_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

#include "vnd/error.hpp"

namespace vnd {

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DomainError("max_abs_diff: shape mismatch");
  double worst = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) worst = std::max(worst, std::abs(da[i] - db[i]));
  return worst;
}

namespace {

void check_ell(int ell, int ell_cap) {
  if (ell < 1) throw DomainError("ell must be at least 1");
  if (ell > ell_cap) {
    std::ostringstream os;
    os << "ell = " << ell << " exceeds the cap of " << ell_cap
       << " for 2^ell x 2^ell matrices";
    throw DomainError(os.str());
  }
}

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    std::ostringstream os;
    os << name << " = " << p << " is not a probability";
    throw DomainError(os.str());
  }
}

// x^n with 0^0 = 1.
double ipow(double x, int n) {
  double r = 1.0;
  for (int i = 0; i < n; ++i) r *= x;
  return r;
}

std::size_t dim(int ell) { return std::size_t{1} << ell; }

}  // namespace

StateVector::StateVector(int ell, std::uint32_t index) : ell_(ell), index_(index) {
  if (ell < 1 || ell > 31) throw DomainError("StateVector: ell out of range");
  if (index >= (std::uint32_t{1} << ell)) throw DomainError("StateVector: index out of range");
}

StateVector StateVector::from_bits(const std::vector<int>& bits) {
  std::uint32_t idx = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] != 0 && bits[i] != 1) throw DomainError("StateVector: bits must be 0 or 1");
    idx |= static_cast<std::uint32_t>(bits[i]) << i;
  }
  return StateVector(static_cast<int>(bits.size()), idx);
}

void VndParams::validate() const {
  if (lambdas.empty()) throw DomainError("VndParams: ell must be at least 1");
  if (lambdas.size() != etas.size()) {
    std::ostringstream os;
    os << "VndParams: " << lambdas.size() << " lambdas but " << etas.size() << " etas";
    throw DomainError(os.str());
  }
  for (double p : lambdas) check_probability(p, "lambda");
  for (double p : etas) check_probability(p, "eta");
}

VndParams VndParams::constant(int ell, double lambda, double eta) {
  if (ell < 1) throw DomainError("ell must be at least 1");
  VndParams p;
  p.lambdas.assign(static_cast<std::size_t>(ell), lambda);
  p.etas.assign(static_cast<std::size_t>(ell), eta);
  return p;
}

SumTransitionMatrix SumTransitionMatrix::from_matrix(Matrix m, double tol) {
  if (m.rows() < 2 || m.rows() != m.cols())
    throw DomainError("sum-chain matrix must be square with at least 2 rows");
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      double v = m(i, j);
      if (!(v >= -tol && v <= 1.0 + tol)) {
        std::ostringstream os;
        os << "entry (" << i << "," << j << ") = " << v << " is not a probability";
        throw DomainError(os.str());
      }
      s += v;
    }
    if (std::abs(s - 1.0) > tol) {
      std::ostringstream os;
      os << "row " << i << " sums to " << s << ", not 1";
      throw DomainError(os.str());
    }
  }
  return {static_cast<int>(m.rows()) - 1, std::move(m)};
}

FullTransitionMatrix build_m_vnd(const VndParams& params, int ell_cap) {
  params.validate();
  const int ell = params.ell();
  check_ell(ell, ell_cap);
  const std::size_t n = dim(ell);
  FullTransitionMatrix out{ell, Matrix(n, n)};
  for (std::uint32_t x = 0; x < n; ++x) {
    const int r = std::popcount(x);
    const double lam = params.lambda(r);
    const double eta = params.eta(r);
    for (std::uint32_t y = 0; y < n; ++y) {
      const std::uint32_t mask = static_cast<std::uint32_t>(n - 1);
      const int stay0 = std::popcount(~x & ~y & mask);
      const int open = std::popcount(~x & y & mask);
      const int stay1 = std::popcount(x & y);
      const int close = std::popcount(x & ~y & mask);
      out.entries(x, y) = ipow(lam, stay0) * ipow(1.0 - lam, open) * ipow(eta, stay1) *
                          ipow(1.0 - eta, close);
    }
  }
  return out;
}

FullTransitionMatrix build_m_uc(int ell, double lambda, double eta, int ell_cap) {
  check_probability(lambda, "lambda");
  check_probability(eta, "eta");
  return build_m_vnd(VndParams::constant(ell, lambda, eta), ell_cap);
}

FullTransitionMatrix build_m_fc(int ell, double p00, double p11, int ell_cap) {
  check_ell(ell, ell_cap);
  check_probability(p00, "p00");
  check_probability(p11, "p11");
  const std::size_t n = dim(ell);
  const std::size_t ones = n - 1;
  FullTransitionMatrix out{ell, Matrix(n, n)};
  for (std::size_t x = 0; x < n; ++x) {
    if (x == 0) {
      out.entries(x, 0) = p00;
      out.entries(x, ones) += 1.0 - p00;
    } else if (x == ones) {
      out.entries(x, 0) = 1.0 - p11;
      out.entries(x, ones) += p11;
    } else {
      out.entries(x, 0) = 0.5;
      out.entries(x, ones) = 0.5;
    }
  }
  return out;
}

FullTransitionMatrix build_m_ck(int ell, double lambda, double eta, double kappa,
                                int ell_cap) {
  check_probability(kappa, "kappa");
  FullTransitionMatrix fc = build_m_fc(ell, lambda, eta, ell_cap);
  FullTransitionMatrix uc = build_m_uc(ell, lambda, eta, ell_cap);
  auto f = fc.entries.data();
  auto u = uc.entries.data();
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = kappa * f[i] + (1.0 - kappa) * u[i];
  return uc;
}

SumTransitionMatrix lump(const FullTransitionMatrix& m) {
  const int ell = m.ell;
  const std::size_t n = dim(ell);
  const std::size_t levels = static_cast<std::size_t>(ell) + 1;
  Matrix q(levels, levels);
  std::vector<double> level_size(levels, 0.0);
  for (std::uint32_t x = 0; x < n; ++x) {
    const auto i = static_cast<std::size_t>(std::popcount(x));
    level_size[i] += 1.0;
    for (std::uint32_t y = 0; y < n; ++y)
      q(i, static_cast<std::size_t>(std::popcount(y))) += m.entries(x, y);
  }
  for (std::size_t i = 0; i < levels; ++i)
    for (std::size_t j = 0; j < levels; ++j) q(i, j) /= level_size[i];
  return {ell, std::move(q)};
}

StructureReport is_lumpable(const FullTransitionMatrix& m, double tol) {
  const int ell = m.ell;
  const std::size_t n = dim(ell);
  const std::size_t levels = static_cast<std::size_t>(ell) + 1;
  // Per (level of x, level of y): min and max of the block sums.
  Matrix lo(levels, levels, std::numeric_limits<double>::infinity());
  Matrix hi(levels, levels, -std::numeric_limits<double>::infinity());
  std::vector<double> block(levels);
  for (std::uint32_t x = 0; x < n; ++x) {
    std::fill(block.begin(), block.end(), 0.0);
    for (std::uint32_t y = 0; y < n; ++y)
      block[static_cast<std::size_t>(std::popcount(y))] += m.entries(x, y);
    const auto i = static_cast<std::size_t>(std::popcount(x));
    for (std::size_t j = 0; j < levels; ++j) {
      lo(i, j) = std::min(lo(i, j), block[j]);
      hi(i, j) = std::max(hi(i, j), block[j]);
    }
  }
  StructureReport report;
  for (std::size_t i = 0; i < levels; ++i)
    for (std::size_t j = 0; j < levels; ++j)
      report.max_violation = std::max(report.max_violation, hi(i, j) - lo(i, j));
  report.lumpable = report.max_violation <= tol;
  return report;
}

StructureReport is_permutation_invariant(const FullTransitionMatrix& m, double tol) {
  const int ell = m.ell;
  const std::size_t n = dim(ell);
  const std::size_t levels = static_cast<std::size_t>(ell) + 1;
  // Entries with equal (|x|, |y|, |x - y|) must agree; index the class by
  // (|x|, |y|, |x xor y|) in a flat (ell+1)^3 table.
  const std::size_t classes = levels * levels * levels;
  std::vector<double> lo(classes, std::numeric_limits<double>::infinity());
  std::vector<double> hi(classes, -std::numeric_limits<double>::infinity());
  for (std::uint32_t x = 0; x < n; ++x) {
    const auto nx = static_cast<std::size_t>(std::popcount(x));
    for (std::uint32_t y = 0; y < n; ++y) {
      const auto ny = static_cast<std::size_t>(std::popcount(y));
      const auto d = static_cast<std::size_t>(std::popcount(x ^ y));
      const std::size_t c = (nx * levels + ny) * levels + d;
      const double v = m.entries(x, y);
      lo[c] = std::min(lo[c], v);
      hi[c] = std::max(hi[c], v);
    }
  }
  StructureReport report;
  for (std::size_t c = 0; c < classes; ++c)
    if (hi[c] >= lo[c]) report.max_violation = std::max(report.max_violation, hi[c] - lo[c]);
  report.permutation_invariant = report.max_violation <= tol;
  return report;
}

StructureReport is_conditionally_independent(const FullTransitionMatrix& m, double tol) {
  const int ell = m.ell;
  const std::size_t n = dim(ell);
  std::vector<double> p_one(static_cast<std::size_t>(ell));
  StructureReport report;
  for (std::uint32_t x = 0; x < n; ++x) {
    std::fill(p_one.begin(), p_one.end(), 0.0);
    for (std::uint32_t y = 0; y < n; ++y)
      for (int i = 0; i < ell; ++i)
        if ((y >> i) & 1u) p_one[static_cast<std::size_t>(i)] += m.entries(x, y);
    for (std::uint32_t y = 0; y < n; ++y) {
      double prod = 1.0;
      for (int i = 0; i < ell; ++i) {
        const double p = p_one[static_cast<std::size_t>(i)];
        prod *= ((y >> i) & 1u) ? p : 1.0 - p;
      }
      report.max_violation = std::max(report.max_violation, std::abs(prod - m.entries(x, y)));
    }
  }
  report.conditionally_independent = report.max_violation <= tol;
  return report;
}

StructureReport analyze_structure(const FullTransitionMatrix& m, double tol) {
  StructureReport a = is_lumpable(m, tol);
  StructureReport b = is_permutation_invariant(m, tol);
  StructureReport c = is_conditionally_independent(m, tol);
  StructureReport out;
  out.lumpable = a.lumpable;
  out.permutation_invariant = b.permutation_invariant;
  out.conditionally_independent = c.conditionally_independent;
  out.max_violation = std::max({a.max_violation, b.max_violation, c.max_violation});
  return out;
}

std::optional<VndParams> extract_vnd_params(const FullTransitionMatrix& m, double tol) {
  if (!*is_permutation_invariant(m, tol).permutation_invariant) return std::nullopt;
  if (!*is_conditionally_independent(m, tol).conditionally_independent) return std::nullopt;
  const int ell = m.ell;
  const std::size_t n = dim(ell);
  VndParams p;
  p.lambdas.resize(static_cast<std::size_t>(ell));
  p.etas.resize(static_cast<std::size_t>(ell));
  // Representative for level r: the lowest r bits set. Coordinate ell-1 is
  // closed when r < ell and coordinate 0 is open when r > 0.
  for (int r = 0; r <= ell; ++r) {
    const std::uint32_t x = (r == 0) ? 0u : ((std::uint32_t{1} << r) - 1u);
    if (r < ell) {
      const int i = ell - 1;
      double stay = 0.0;
      for (std::uint32_t y = 0; y < n; ++y)
        if (((y >> i) & 1u) == 0u) stay += m.entries(x, y);
      p.lambdas[static_cast<std::size_t>(r)] = stay;
    }
    if (r > 0) {
      double stay = 0.0;
      for (std::uint32_t y = 0; y < n; ++y)
        if (y & 1u) stay += m.entries(x, y);
      p.etas[static_cast<std::size_t>(r - 1)] = stay;
    }
  }
  return p;
}

std::uint64_t count_free_params(int ell, Structure structure) {
  if (ell < 1) throw DomainError("ell must be at least 1");
  const auto l = static_cast<std::uint64_t>(ell);
  switch (structure) {
    case Structure::general: {
      if (ell > 31) throw DomainError("ell too large for a general parameter count");
      const std::uint64_t n = std::uint64_t{1} << ell;
      return n * (n - 1);
    }
    case Structure::lumpable: {
      if (ell > 31) throw DomainError("ell too large for a lumpable parameter count");
      const std::uint64_t n = std::uint64_t{1} << ell;
      return n * (n - 1) - l * (n - 1 - l);
    }
    case Structure::permutation_invariant:
      return l * (l + 1) * (l + 5) / 6;
    case Structure::vnd:
      return 2 * l;
  }
  return 0;
}

std::uint64_t signature_class_count(int ell) {
  if (ell < 1 || ell > 16) throw DomainError("signature_class_count: ell out of range");
  const std::uint32_t n = std::uint32_t{1} << ell;
  std::vector<bool> seen(static_cast<std::size_t>((ell + 1) * (ell + 1) * (ell + 1)), false);
  std::uint64_t count = 0;
  for (std::uint32_t x = 0; x < n; ++x)
    for (std::uint32_t y = 0; y < n; ++y) {
      const int c = (std::popcount(x) * (ell + 1) + std::popcount(y)) * (ell + 1) +
                    std::popcount(x ^ y);
      if (!seen[static_cast<std::size_t>(c)]) {
        seen[static_cast<std::size_t>(c)] = true;
        ++count;
      }
    }
  return count;
}

double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return std::round(r);
}

}  // namespace vnd
