#include "vnd/sum_chain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "vnd/optimize.hpp"

namespace vnd {

namespace {

void check_unit(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    std::ostringstream os;
    os << name << " = " << p << " is not a probability";
    throw DomainError(os.str());
  }
}

// powers[k] = x^k for k = 0..n, with 0^0 = 1.
std::vector<double> power_table(double x, int n) {
  std::vector<double> t(static_cast<std::size_t>(n) + 1);
  t[0] = 1.0;
  for (int k = 1; k <= n; ++k) t[static_cast<std::size_t>(k)] = t[static_cast<std::size_t>(k) - 1] * x;
  return t;
}

}  // namespace

void vnd_row(int ell, int i, double lambda, double eta, std::span<double> row,
             std::span<double> d_lambda, std::span<double> d_eta) {
  const auto pe = power_table(eta, ell);
  const auto pe1 = power_table(1.0 - eta, ell);
  const auto pl = power_table(lambda, ell);
  const auto pl1 = power_table(1.0 - lambda, ell);
  const bool grads = !d_lambda.empty();
  auto at = [](const std::vector<double>& t, int k) { return t[static_cast<std::size_t>(k)]; };
  for (int j = 0; j <= ell; ++j) {
    double q = 0.0, dl = 0.0, de = 0.0;
    const int r_lo = std::max(0, i - j);
    const int r_hi = std::min(i, ell - j);
    for (int r = r_lo; r <= r_hi; ++r) {
      const int stay1 = i - r;          // open that stay open
      const int close = r;              // open that close
      const int stay0 = ell - j - r;    // closed that stay closed
      const int open = j - i + r;       // closed that open
      const double c = binomial(i, r) * binomial(ell - i, open);
      const double e_part = at(pe, stay1) * at(pe1, close);
      const double l_part = at(pl, stay0) * at(pl1, open);
      q += c * e_part * l_part;
      if (grads) {
        double de_part = 0.0;
        if (stay1 > 0) de_part += stay1 * at(pe, stay1 - 1) * at(pe1, close);
        if (close > 0) de_part -= close * at(pe, stay1) * at(pe1, close - 1);
        double dl_part = 0.0;
        if (stay0 > 0) dl_part += stay0 * at(pl, stay0 - 1) * at(pl1, open);
        if (open > 0) dl_part -= open * at(pl, stay0) * at(pl1, open - 1);
        de += c * de_part * l_part;
        dl += c * e_part * dl_part;
      }
    }
    row[static_cast<std::size_t>(j)] = q;
    if (grads) {
      d_lambda[static_cast<std::size_t>(j)] = dl;
      d_eta[static_cast<std::size_t>(j)] = de;
    }
  }
}

SumTransitionMatrix q_vnd_closed_form(const VndParams& params) {
  params.validate();
  const int ell = params.ell();
  const auto n = static_cast<std::size_t>(ell) + 1;
  SumTransitionMatrix q{ell, Matrix(n, n)};
  for (int i = 0; i <= ell; ++i)
    vnd_row(ell, i, params.lambda(i), params.eta(i), q.entries.row(static_cast<std::size_t>(i)));
  return q;
}

SumTransitionMatrix q_uc(int ell, double lambda, double eta) {
  check_unit(lambda, "lambda");
  check_unit(eta, "eta");
  return q_vnd_closed_form(VndParams::constant(ell, lambda, eta));
}

SumTransitionMatrix q_fc(int ell, double p00, double p11) {
  if (ell < 1) throw DomainError("ell must be at least 1");
  check_unit(p00, "p00");
  check_unit(p11, "p11");
  const auto n = static_cast<std::size_t>(ell) + 1;
  const std::size_t top = n - 1;
  SumTransitionMatrix q{ell, Matrix(n, n)};
  q.entries(0, 0) = p00;
  q.entries(0, top) += 1.0 - p00;
  for (std::size_t i = 1; i < top; ++i) {
    q.entries(i, 0) = 0.5;
    q.entries(i, top) = 0.5;
  }
  q.entries(top, 0) += 1.0 - p11;
  q.entries(top, top) += p11;
  return q;
}

SumTransitionMatrix q_ck(int ell, double lambda, double eta, double kappa) {
  check_unit(kappa, "kappa");
  SumTransitionMatrix uc = q_uc(ell, lambda, eta);
  const SumTransitionMatrix fc = q_fc(ell, lambda, eta);
  auto u = uc.entries.data();
  auto f = fc.entries.data();
  for (std::size_t k = 0; k < u.size(); ++k) u[k] = (1.0 - kappa) * u[k] + kappa * f[k];
  return uc;
}

namespace {

struct RowSolution {
  double lambda = 0.0;
  double eta = 0.0;
  double residual = 0.0;
  double curvature = 0.0;
};

double row_residual(int ell, int s, double lambda, double eta, std::span<const double> target) {
  std::vector<double> row(static_cast<std::size_t>(ell) + 1);
  vnd_row(ell, s, lambda, eta, row);
  double ss = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) ss += (row[j] - target[j]) * (row[j] - target[j]);
  return ss;
}

// Sum of squared derivatives of the row entries with respect to one
// parameter; the curvature of a one-parameter boundary row.
double row_curvature_1d(int ell, int s, double lambda, double eta, bool wrt_lambda) {
  const auto n = static_cast<std::size_t>(ell) + 1;
  std::vector<double> row(n), dl(n), de(n);
  vnd_row(ell, s, lambda, eta, row, dl, de);
  double c = 0.0;
  for (std::size_t j = 0; j < n; ++j) c += wrt_lambda ? dl[j] * dl[j] : de[j] * de[j];
  return c;
}

// Every distinct local minimiser of the row-s least-squares problem found
// from a 5x5 grid of interior starts, polished and sorted by residual, then by
// lambda.
std::vector<RowSolution> solve_interior_row(int ell, int s, std::span<const double> target) {
  const auto n = static_cast<std::size_t>(ell) + 1;
  opt::Objective objective = [&](std::span<const double> z, std::span<double> grad) {
    const double lam = opt::sigmoid(z[0]);
    const double eta = opt::sigmoid(z[1]);
    std::vector<double> row(n), dl(n), de(n);
    vnd_row(ell, s, lam, eta, row, dl, de);
    double ss = 0.0, gl = 0.0, ge = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double r = row[j] - target[j];
      ss += r * r;
      gl += 2.0 * r * dl[j];
      ge += 2.0 * r * de[j];
    }
    grad[0] = gl * lam * (1.0 - lam);
    grad[1] = ge * eta * (1.0 - eta);
    return ss;
  };
  opt::Residuals residuals = [&](std::span<const double> x, std::span<double> r,
                                 std::span<double> jac) {
    std::vector<double> row(n), dl(n), de(n);
    vnd_row(ell, s, x[0], x[1], row, dl, de);
    for (std::size_t j = 0; j < n; ++j) {
      r[j] = row[j] - target[j];
      jac[j * 2] = dl[j];
      jac[j * 2 + 1] = de[j];
    }
  };

  opt::BfgsOptions bopts;
  bopts.gradient_tol = 1e-16;
  bopts.max_iterations = 300;
  std::vector<RowSolution> found;
  auto search = [&](std::span<const double> grid) {
    for (double l0 : grid) {
      for (double e0 : grid) {
        auto b = opt::minimize_bfgs(objective, {opt::logit(l0), opt::logit(e0)}, bopts);
        auto p = opt::levenberg_marquardt(residuals, n,
                                          {opt::sigmoid(b.z[0]), opt::sigmoid(b.z[1])}, 0.0, 1.0);
        RowSolution sol{p.x[0], p.x[1], p.sum_squares, p.min_curvature};
        bool dup = false;
        for (auto& f : found) {
          if (std::abs(f.lambda - sol.lambda) < 1e-7 && std::abs(f.eta - sol.eta) < 1e-7) {
            if (sol.residual < f.residual) f = sol;
            dup = true;
            break;
          }
        }
        if (!dup) found.push_back(sol);
      }
    }
  };
  const double coarse[] = {0.1, 0.3, 0.5, 0.7, 0.9};
  search(coarse);
  // Near-exact secondary minima exist close to the box edges; when no start
  // reached an exact fit, search a finer grid.
  const bool exact = std::any_of(found.begin(), found.end(),
                                 [](const RowSolution& f) { return f.residual < 1e-20; });
  if (!exact) {
    const double fine[] = {0.01, 0.03, 0.06, 0.15, 0.2, 0.4, 0.6, 0.8, 0.85, 0.94, 0.97, 0.99};
    search(fine);
  }
  std::sort(found.begin(), found.end(), [](const RowSolution& a, const RowSolution& b) {
    if (a.residual != b.residual) return a.residual < b.residual;
    return a.lambda < b.lambda;
  });
  return found;
}

}  // namespace

RecoveryResult recover_vnd_params(const SumTransitionMatrix& q, const RecoveryOptions& options) {
  const int ell = q.ell;
  if (ell < 1 || q.entries.rows() != static_cast<std::size_t>(ell) + 1 ||
      q.entries.cols() != q.entries.rows())
    throw DomainError("recover_vnd_params: malformed sum-chain matrix");

  RecoveryResult out;
  out.params.lambdas.assign(static_cast<std::size_t>(ell), 0.0);
  out.params.etas.assign(static_cast<std::size_t>(ell), 0.0);
  out.unidentified.assign(static_cast<std::size_t>(ell) + 1, false);

  auto fail = [&](int row, double residual) {
    std::ostringstream os;
    os << "row " << row << " of the matrix is not reproduced by any VND parameters "
       << "(best sum of squared residuals " << residual << " > " << options.residual_tol << ")";
    throw NonVndInput(os.str(), row, residual);
  };

  // Boundary levels: q_00 = lambda_0^ell and q_ll = eta_ell^ell.
  const double lambda0 = q(0, 0) <= 0.0 ? 0.0 : std::pow(q(0, 0), 1.0 / ell);
  const double eta_top = q(ell, ell) <= 0.0 ? 0.0 : std::pow(q(ell, ell), 1.0 / ell);
  out.params.lambdas[0] = lambda0;
  out.params.etas[static_cast<std::size_t>(ell) - 1] = eta_top;
  {
    const double r0 = row_residual(ell, 0, lambda0, 1.0, q.entries.row(0));
    if (r0 > options.residual_tol) fail(0, r0);
    const double rl = row_residual(ell, ell, 1.0, eta_top, q.entries.row(static_cast<std::size_t>(ell)));
    if (rl > options.residual_tol) fail(ell, rl);
    out.residual = std::max(r0, rl);
    out.unidentified[0] = row_curvature_1d(ell, 0, lambda0, 1.0, true) < options.curvature_tol;
    out.unidentified[static_cast<std::size_t>(ell)] =
        row_curvature_1d(ell, ell, 1.0, eta_top, false) < options.curvature_tol;
  }

  std::optional<int> ambiguous_level;
  for (int s = 1; s < ell; ++s) {
    const auto sols = solve_interior_row(ell, s, q.entries.row(static_cast<std::size_t>(s)));
    RowSolution best = sols.front();
    if (best.residual > options.residual_tol) fail(s, best.residual);

    if (2 * s == ell) {
      // The middle level admits (lambda, eta) and (1 - eta, 1 - lambda).
      RowSolution other = best;
      other.lambda = 1.0 - best.eta;
      other.eta = 1.0 - best.lambda;
      const bool distinct = std::abs(other.lambda - best.lambda) > options.branch_tol ||
                            std::abs(other.eta - best.eta) > options.branch_tol;
      if (distinct) {
        const bool best_ok = best.lambda >= 1.0 - best.eta;
        if (!best_ok) std::swap(best, other);
        if (!options.even_ell_constraint) ambiguous_level = s;
        VndParams rejected = out.params;  // completed below
        out.rejected_branch = rejected;
        out.rejected_branch->lambdas[static_cast<std::size_t>(s)] = other.lambda;
        out.rejected_branch->etas[static_cast<std::size_t>(s) - 1] = other.eta;
      }
    }
    out.params.lambdas[static_cast<std::size_t>(s)] = best.lambda;
    out.params.etas[static_cast<std::size_t>(s) - 1] = best.eta;
    out.residual = std::max(out.residual, best.residual);
    out.unidentified[static_cast<std::size_t>(s)] = best.curvature < options.curvature_tol;
  }

  if (out.rejected_branch) {
    // Fill in every level except the middle one from the accepted solution.
    const int mid = ell / 2;
    VndParams full = out.params;
    full.lambdas[static_cast<std::size_t>(mid)] = out.rejected_branch->lambdas[static_cast<std::size_t>(mid)];
    full.etas[static_cast<std::size_t>(mid) - 1] = out.rejected_branch->etas[static_cast<std::size_t>(mid) - 1];
    out.rejected_branch = full;
  }

  if (ambiguous_level) {
    std::ostringstream os;
    os << "ell = " << ell << " is even and level " << *ambiguous_level
       << " has two parameter branches reproducing the matrix; "
       << "assume lambda >= 1 - eta on that level to select one";
    throw AmbiguousEvenCase(os.str(), *ambiguous_level, {out.params, *out.rejected_branch});
  }
  return out;
}

StationaryResult stationary_distribution(const SumTransitionMatrix& q) {
  const auto n = static_cast<std::size_t>(q.ell) + 1;
  StationaryResult out;

  // Strong connectivity: everything reachable from 0 and 0 reachable from
  // everything.
  auto reach = [&](bool forward) {
    std::vector<bool> seen(n, false);
    std::vector<std::size_t> stack{0};
    seen[0] = true;
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      for (std::size_t v = 0; v < n; ++v) {
        const double w = forward ? q.entries(u, v) : q.entries(v, u);
        if (w > 0.0 && !seen[v]) {
          seen[v] = true;
          stack.push_back(v);
        }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
  };
  if (!reach(true) || !reach(false)) {
    out.irreducible = false;
    out.distribution.assign(n, 1.0 / static_cast<double>(n));
    return out;
  }

  // Direct solve of pi (Q - I) = 0 with sum(pi) = 1, then power-iteration
  // polishing on the lazy chain (I + Q) / 2.
  Matrix a(n, n);
  std::vector<double> b(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = q.entries(j, i) - (i == j ? 1.0 : 0.0);
  for (std::size_t j = 0; j < n; ++j) a(n - 1, j) = 1.0;
  b[n - 1] = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    if (piv != c) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(c, j), a(piv, j));
      std::swap(b[c], b[piv]);
    }
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a(r, c) / a(c, c);
      if (f == 0.0) continue;
      for (std::size_t j = c; j < n; ++j) a(r, j) -= f * a(c, j);
      b[r] -= f * b[c];
    }
  }
  std::vector<double> pi(n);
  for (std::size_t c = n; c-- > 0;) {
    double s = b[c];
    for (std::size_t j = c + 1; j < n; ++j) s -= a(c, j) * pi[j];
    pi[c] = s / a(c, c);
  }
  auto normalise = [&](std::vector<double>& v) {
    double s = 0.0;
    for (double& x : v) {
      x = std::max(x, 0.0);
      s += x;
    }
    for (double& x : v) x /= s;
  };
  normalise(pi);

  std::vector<double> next(n);
  for (int it = 0; it < 1000; ++it) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += pi[i] * q.entries(i, j);
      next[j] = 0.5 * (pi[j] + s);
    }
    normalise(next);
    double diff = 0.0;
    for (std::size_t j = 0; j < n; ++j) diff += std::abs(next[j] - pi[j]);
    pi.swap(next);
    if (diff < 1e-15) break;
  }
  out.distribution = std::move(pi);
  return out;
}

}  // namespace vnd
