#include "vnd/estimation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "vnd/error.hpp"
#include "vnd/optimize.hpp"
#include "vnd/parallel.hpp"
#include "vnd/rng.hpp"
#include "vnd/sum_chain.hpp"

namespace vnd {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::vnd: return "vnd";
    case ModelKind::uc: return "uc";
    case ModelKind::ck: return "ck";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view text) {
  std::string t(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "vnd") return ModelKind::vnd;
  if (t == "uc") return ModelKind::uc;
  if (t == "ck") return ModelKind::ck;
  throw ConfigError("unknown model kind '" + std::string(text) + "' (expected vnd, uc or ck)");
}

ModelKind kind_of(const HiddenParams& theta) {
  switch (theta.index()) {
    case 0: return ModelKind::vnd;
    case 1: return ModelKind::uc;
    default: return ModelKind::ck;
  }
}

SumTransitionMatrix hidden_matrix(const HiddenParams& theta, int ell) {
  if (const auto* v = std::get_if<VndParams>(&theta)) {
    if (v->ell() != ell) throw DomainError("VND parameters do not match ell");
    return q_vnd_closed_form(*v);
  }
  if (const auto* u = std::get_if<UcParams>(&theta)) return q_uc(ell, u->lambda, u->eta);
  const auto& c = std::get<CkParams>(theta);
  return q_ck(ell, c.lambda, c.eta, c.kappa);
}

HiddenParams default_hidden_params(ModelKind kind, int ell) {
  switch (kind) {
    case ModelKind::vnd: return VndParams::constant(ell, 0.95, 0.95);
    case ModelKind::uc: return UcParams{};
    case ModelKind::ck: return CkParams{};
  }
  return UcParams{};
}

int hidden_param_count(ModelKind kind, int ell) {
  switch (kind) {
    case ModelKind::vnd: return static_cast<int>(count_free_params(ell, Structure::vnd));
    case ModelKind::uc: return 2;
    case ModelKind::ck: return 3;
  }
  return 0;
}

int emission_param_count(int ell) { return 2 + ell + 1; }

void FitConfig::validate() const {
  if (ell < 1) throw ConfigError("ell must be at least 1");
  if (max_iterations < 1) throw ConfigError("max_iterations must be positive");
  if (!(loglik_rel_tol > 0.0)) throw ConfigError("loglik_rel_tol must be positive");
  if (restarts < 1) throw ConfigError("restarts must be at least 1");
  if (!(variance_floor_factor > 0.0)) throw ConfigError("variance_floor_factor must be positive");
}

HmmModel FitResult::model() const { return HmmModel{hidden(), theta_e, initial}; }

// ---------------------------------------------------------------------------
// Hidden M-step

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Objective in the natural parameters theta (probabilities); writes d/dtheta.
using ThetaObjective = std::function<double(std::span<const double> theta, std::span<double> grad)>;

// theta = T(z). Every coordinate is a logistic map, except that with
// `half` the second coordinate is eta = 1 - lambda + lambda * sigmoid(z1),
// which enforces eta >= 1 - lambda.
struct Transform {
  std::size_t dim;
  bool half;

  void apply(std::span<const double> z, std::span<double> theta, std::span<double> jac) const {
    // jac is dim x dim row-major: d theta_i / d z_j.
    std::fill(jac.begin(), jac.end(), 0.0);
    for (std::size_t i = 0; i < dim; ++i) {
      theta[i] = opt::sigmoid(z[i]);
      jac[i * dim + i] = theta[i] * (1.0 - theta[i]);
    }
    if (half) {
      const double l = theta[0];
      const double t = opt::sigmoid(z[1]);
      theta[1] = 1.0 - l + l * t;
      jac[1 * dim + 0] = (t - 1.0) * jac[0];
      jac[1 * dim + 1] = l * t * (1.0 - t);
    }
  }

  std::vector<double> inverse(std::span<const double> theta) const {
    std::vector<double> z(dim);
    for (std::size_t i = 0; i < dim; ++i) z[i] = opt::logit(theta[i]);
    if (half) {
      const double l = std::max(theta[0], 1e-15);
      z[1] = opt::logit((theta[1] - (1.0 - l)) / l);
    }
    return z;
  }
};

std::vector<double> maximize_box(const ThetaObjective& f, std::vector<double> warm, bool half,
                                 Rng& rng) {
  const std::size_t dim = warm.size();
  const Transform tr{dim, half};
  std::vector<double> grad(dim);
  const double warm_value = f(warm, grad);

  std::vector<double> theta(dim), jac(dim * dim), g(dim);
  opt::Objective fz = [&](std::span<const double> z, std::span<double> gz) {
    tr.apply(z, theta, jac);
    const double v = f(theta, g);
    for (std::size_t j = 0; j < dim; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < dim; ++i) s += g[i] * jac[i * dim + j];
      gz[j] = s;
    }
    return v;
  };

  const auto z0 = tr.inverse(warm);
  double best_value = warm_value;
  std::vector<double> best = warm;
  opt::BfgsOptions bo;
  bo.max_iterations = 200;
  // Starts: the warm start, four jittered copies, then a coarse z-space grid
  // (every node for up to two coordinates, otherwise the best node).
  std::vector<std::vector<double>> starts{z0};
  for (int j = 0; j < 4; ++j) {
    auto z = z0;
    for (auto& zi : z) zi = std::clamp(zi + 1.5 * rng.normal(), -bo.max_abs_z, bo.max_abs_z);
    starts.push_back(std::move(z));
  }
  const double nodes[] = {-3.0, -1.5, 0.0, 1.5, 3.0};
  std::size_t cells = 1;
  for (std::size_t i = 0; i < dim; ++i) cells *= 5;
  std::vector<double> zg(dim), gg(dim), grid_best;
  double grid_value = kInf;
  for (std::size_t c = 0; c < cells; ++c) {
    for (std::size_t i = 0, r = c; i < dim; ++i, r /= 5) zg[i] = nodes[r % 5];
    if (dim <= 2) {
      starts.push_back(zg);
      continue;
    }
    const double v = fz(zg, gg);
    if (v < grid_value) {
      grid_value = v;
      grid_best = zg;
    }
  }
  if (!grid_best.empty()) starts.push_back(grid_best);

  for (const auto& z : starts) {
    const auto res = opt::minimize_bfgs(fz, z, bo);
    if (std::isfinite(res.value) && res.value < best_value) {
      std::vector<double> t(dim), j(dim * dim);
      tr.apply(res.z, t, j);
      // Re-evaluate: the transform can round to the box edge.
      const double v = f(t, grad);
      if (v < best_value) {
        best_value = v;
        best = t;
      }
    }
  }
  return best;
}

// -sum_j n_j log q_j and its gradient, given q and dq/dtheta_a.
double row_objective(std::span<const double> n, std::span<const double> q,
                     const std::vector<std::span<const double>>& dq, std::span<double> grad) {
  double v = 0.0;
  for (std::size_t j = 0; j < n.size(); ++j) {
    if (n[j] <= 0.0) continue;
    if (!(q[j] > 0.0)) return kInf;
    v -= n[j] * std::log(q[j]);
    for (std::size_t a = 0; a < dq.size(); ++a) grad[a] -= n[j] * dq[a][j] / q[j];
  }
  return v;
}

std::vector<double> fc_row(int ell, int i, double lambda, double eta, std::vector<double>& dl,
                           std::vector<double>& de) {
  const auto n = static_cast<std::size_t>(ell) + 1;
  std::vector<double> row(n, 0.0);
  dl.assign(n, 0.0);
  de.assign(n, 0.0);
  if (i == 0) {
    row[0] = lambda;
    row[n - 1] += 1.0 - lambda;
    dl[0] = 1.0;
    dl[n - 1] -= 1.0;
  } else if (i == ell) {
    row[0] += 1.0 - eta;
    row[n - 1] += eta;
    de[0] -= 1.0;
    de[n - 1] += 1.0;
  } else {
    row[0] = 0.5;
    row[n - 1] = 0.5;
  }
  return row;
}

HiddenParams m_step_vnd(const Matrix& counts, const FitConfig& config, const VndParams& warm) {
  const int ell = warm.ell();
  const auto n = static_cast<std::size_t>(ell) + 1;
  VndParams out = warm;
  for (int i = 0; i <= ell; ++i) {
    const auto ni = counts.row(static_cast<std::size_t>(i));
    const double total = std::accumulate(ni.begin(), ni.end(), 0.0);
    if (!(total > 0.0)) continue;
    const bool has_lambda = i < ell;
    const bool has_eta = i > 0;
    const bool half = config.enforce_half_constraint && ell % 2 == 0 && 2 * i == ell;

    std::vector<double> row(n), dl(n), de(n);
    ThetaObjective f = [&](std::span<const double> th, std::span<double> grad) {
      const double lambda = has_lambda ? th[0] : 1.0;
      const double eta = has_eta ? th[has_lambda ? 1 : 0] : 1.0;
      vnd_row(ell, i, lambda, eta, row, dl, de);
      std::vector<std::span<const double>> dq;
      if (has_lambda) dq.emplace_back(dl);
      if (has_eta) dq.emplace_back(de);
      std::fill(grad.begin(), grad.end(), 0.0);
      const double v = row_objective(ni, row, dq, grad);
      for (auto& gi : grad) gi /= total;
      return v / total;
    };

    std::vector<double> start;
    double wl = warm.lambda(i), we = warm.eta(i);
    if (half && wl + we < 1.0) {
      // Same row on the other branch.
      const double sl = 1.0 - we, se = 1.0 - wl;
      wl = sl;
      we = se;
    }
    if (has_lambda) start.push_back(wl);
    if (has_eta) start.push_back(we);
    Rng rng(config.seed, 0x9e3779b9u + static_cast<std::uint64_t>(i));
    const auto best = maximize_box(f, start, half, rng);
    if (has_lambda) out.lambdas[static_cast<std::size_t>(i)] = best[0];
    if (has_eta) out.etas[static_cast<std::size_t>(i - 1)] = best[has_lambda ? 1 : 0];
  }
  return out;
}

HiddenParams m_step_shared(const Matrix& counts, const FitConfig& config, const HiddenParams& warm,
                           int ell) {
  const bool ck = std::holds_alternative<CkParams>(warm);
  const auto n = static_cast<std::size_t>(ell) + 1;
  double total = 0.0;
  for (double c : counts.data()) total += c;
  if (!(total > 0.0)) return warm;

  std::vector<double> row(n), dl(n), de(n), fdl, fde, mix(n), mdl(n), mde(n), mdk(n);
  ThetaObjective f = [&](std::span<const double> th, std::span<double> grad) {
    const double lambda = th[0], eta = th[1];
    const double kappa = ck ? th[2] : 0.0;
    std::fill(grad.begin(), grad.end(), 0.0);
    double v = 0.0;
    std::vector<double> g(grad.size());
    for (int i = 0; i <= ell; ++i) {
      vnd_row(ell, i, lambda, eta, row, dl, de);
      std::vector<std::span<const double>> dq;
      if (ck) {
        const auto fc = fc_row(ell, i, lambda, eta, fdl, fde);
        for (std::size_t j = 0; j < n; ++j) {
          mix[j] = (1.0 - kappa) * row[j] + kappa * fc[j];
          mdl[j] = (1.0 - kappa) * dl[j] + kappa * fdl[j];
          mde[j] = (1.0 - kappa) * de[j] + kappa * fde[j];
          mdk[j] = fc[j] - row[j];
        }
        dq = {mdl, mde, mdk};
      } else {
        dq = {dl, de};
      }
      std::fill(g.begin(), g.end(), 0.0);
      const double r = row_objective(counts.row(static_cast<std::size_t>(i)),
                                     ck ? std::span<const double>(mix) : std::span<const double>(row),
                                     dq, g);
      if (!std::isfinite(r)) return kInf;
      v += r;
      for (std::size_t a = 0; a < g.size(); ++a) grad[a] += g[a];
    }
    for (auto& gi : grad) gi /= total;
    return v / total;
  };

  std::vector<double> start;
  if (ck) {
    const auto& c = std::get<CkParams>(warm);
    start = {c.lambda, c.eta, c.kappa};
  } else {
    const auto& u = std::get<UcParams>(warm);
    start = {u.lambda, u.eta};
  }
  Rng rng(config.seed, 0x9e3779b9u);
  const auto best = maximize_box(f, start, false, rng);
  if (ck) return CkParams{best[0], best[1], best[2]};
  return UcParams{best[0], best[1]};
}

}  // namespace

HiddenParams m_step_hidden(const Matrix& counts, const FitConfig& config,
                           const HiddenParams& warm_start) {
  const int ell = static_cast<int>(counts.rows()) - 1;
  if (ell < 1 || counts.cols() != counts.rows()) {
    throw DomainError("expected transition counts must be a square matrix of size ell+1 >= 2");
  }
  for (double c : counts.data()) {
    if (!(c >= 0.0) || !std::isfinite(c)) throw DomainError("transition counts must be finite and nonnegative");
  }
  if (const auto* v = std::get_if<VndParams>(&warm_start)) {
    if (v->ell() != ell) throw DomainError("warm start does not match the count matrix size");
    return m_step_vnd(counts, config, *v);
  }
  return m_step_shared(counts, config, warm_start, ell);
}

// ---------------------------------------------------------------------------
// Emission M-step

EmissionUpdate m_step_emission(const Matrix& univariate, const ObservationSeries& obs,
                               const GaussianEmission& previous, const EmissionOptions& options) {
  const std::size_t K = obs.size();
  const std::size_t n = univariate.cols();
  if (univariate.rows() != K) throw DomainError("posterior weights do not match the series length");
  if (previous.sigmas.size() != n) throw DomainError("emission does not match the number of states");

  std::vector<double> W(n, 0.0), ybar(n, 0.0), S(n, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const auto gk = univariate.row(k);
    const double y = obs.values[k];
    for (std::size_t s = 0; s < n; ++s) {
      W[s] += gk[s];
      ybar[s] += gk[s] * y;
    }
  }
  for (std::size_t s = 0; s < n; ++s) ybar[s] = W[s] > 0.0 ? ybar[s] / W[s] : 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const auto gk = univariate.row(k);
    const double y = obs.values[k];
    for (std::size_t s = 0; s < n; ++s) {
      const double d = y - ybar[s];
      S[s] += gk[s] * d * d;
    }
  }

  constexpr double kEmpty = 1e-10;
  EmissionUpdate out{previous, false};
  auto& e = out.emission;
  const double floor = options.variance_floor;
  for (int it = 0; it < std::max(1, options.inner_iterations); ++it) {
    double a00 = 0, a01 = 0, a11 = 0, b0 = 0, b1 = 0;
    for (std::size_t s = 0; s < n; ++s) {
      if (W[s] <= kEmpty) continue;
      const double w = W[s] / (e.sigmas[s] * e.sigmas[s]);
      const double si = static_cast<double>(s);
      a00 += w;
      a01 += w * si;
      a11 += w * si * si;
      b0 += w * ybar[s];
      b1 += w * si * ybar[s];
    }
    const double det = a00 * a11 - a01 * a01;
    if (a00 > 0.0 && det > 1e-12 * a00 * a11) {
      e.mu = (a11 * b0 - a01 * b1) / det;
      e.nu = (a00 * b1 - a01 * b0) / det;
    } else if (a00 > 0.0) {
      // A single occupied level: nu is not identified, keep it.
      e.mu = (b0 - e.nu * a01) / a00;
    }
    for (std::size_t s = 0; s < n; ++s) {
      if (W[s] <= kEmpty) continue;
      const double d = ybar[s] - e.mean(static_cast<int>(s));
      double v = (S[s] + W[s] * d * d) / W[s];
      if (v <= floor) v = floor;
      e.sigmas[s] = std::sqrt(v);
    }
  }
  for (std::size_t s = 0; s < n; ++s) {
    if (W[s] <= kEmpty) out.degenerate = true;
    else if (e.sigmas[s] * e.sigmas[s] <= floor * (1.0 + 1e-12)) out.degenerate = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// EM driver

namespace {

double sample_variance(const std::vector<double>& y) {
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double ss = 0.0;
  for (double v : y) ss += (v - mean) * (v - mean);
  return y.size() > 1 ? ss / static_cast<double>(y.size() - 1) : 0.0;
}

HiddenParams jitter_hidden(ModelKind kind, int ell, Rng& rng) {
  auto u = [&] { return 0.8 + 0.19 * rng.uniform(); };
  switch (kind) {
    case ModelKind::vnd: {
      VndParams p = VndParams::constant(ell, 0.95, 0.95);
      for (auto& l : p.lambdas) l = u();
      for (auto& e : p.etas) e = u();
      return p;
    }
    case ModelKind::uc: return UcParams{u(), u()};
    case ModelKind::ck: return CkParams{u(), u(), 0.02 + 0.48 * rng.uniform()};
  }
  return UcParams{};
}

GaussianEmission jitter_emission(GaussianEmission e, Rng& rng) {
  const double step = std::abs(e.nu);
  e.mu += 0.05 * step * rng.normal();
  e.nu *= 1.0 + 0.03 * rng.normal();
  for (auto& s : e.sigmas) s *= 1.0 + 0.1 * std::abs(rng.normal());
  return e;
}

// Best-effort translation of an arbitrary hidden matrix into the requested
// parametrisation, used when the caller supplies an initial model.
HiddenParams params_from_matrix(const SumTransitionMatrix& q, const FitConfig& config) {
  VndParams v = VndParams::constant(config.ell, 0.95, 0.95);
  try {
    RecoveryOptions o;
    o.even_ell_constraint = true;
    o.residual_tol = kInf;
    v = recover_vnd_params(q, o).params;
  } catch (const Error&) {
  }
  if (config.model_kind == ModelKind::vnd) return v;
  const double lambda = std::accumulate(v.lambdas.begin(), v.lambdas.end(), 0.0) / v.ell();
  const double eta = std::accumulate(v.etas.begin(), v.etas.end(), 0.0) / v.ell();
  if (config.model_kind == ModelKind::uc) return UcParams{lambda, eta};
  return CkParams{lambda, eta, 0.1};
}

}  // namespace

FitResult baum_welch_single(const ObservationSeries& obs, const FitConfig& config,
                            const HiddenParams& theta_h, const GaussianEmission& theta_e,
                            std::vector<double> initial) {
  config.validate();
  obs.validate();
  FitResult res;
  res.model_kind = kind_of(theta_h);
  res.ell = config.ell;
  res.theta_h = theta_h;
  res.theta_e = theta_e;
  res.initial = std::move(initial);
  res.num_samples = obs.size();

  double var = sample_variance(obs.values);
  if (!(var > 0.0)) var = 1.0;
  EmissionOptions eo;
  eo.variance_floor = config.variance_floor_factor * var;
  for (auto& s : res.theta_e.sigmas) s = std::max(s, std::sqrt(eo.variance_floor));

  FilterOptions fo;
  fo.store_bivariate = false;
  bool degenerate = false;
  for (int it = 0;; ++it) {
    HmmModel model{hidden_matrix(res.theta_h, res.ell), res.theta_e, res.initial};
    const FilteringResult fb = forward_backward(model, obs, fo);
    const double ll = fb.log_likelihood;
    if (!res.loglik_trace.empty()) {
      const double prev = res.loglik_trace.back();
      if (ll - prev < config.loglik_rel_tol * std::max(std::abs(prev), 1.0)) {
        res.loglik_trace.push_back(ll);
        res.converged = true;
        break;
      }
    }
    res.loglik_trace.push_back(ll);
    if (it >= config.max_iterations) break;
    res.theta_h = m_step_hidden(fb.expected_transitions, config, res.theta_h);
    const auto em = m_step_emission(fb.univariate, obs, res.theta_e, eo);
    res.theta_e = em.emission;
    degenerate = em.degenerate;
    res.iterations = it + 1;
  }
  res.log_likelihood = res.loglik_trace.back();
  res.degenerate_emission = degenerate;
  if (const auto* v = std::get_if<VndParams>(&res.theta_h); v && res.ell <= kDefaultEllCap) {
    res.recovered_m = build_m_vnd(*v);
  }
  return res;
}

FitResult baum_welch(const ObservationSeries& obs, const FitConfig& config,
                     const std::optional<HmmModel>& init) {
  config.validate();
  obs.validate();

  HiddenParams h0 = default_hidden_params(config.model_kind, config.ell);
  GaussianEmission e0;
  std::vector<double> pi0;
  if (init) {
    init->validate();
    if (init->ell() != config.ell) throw ConfigError("initial model ell does not match the configuration");
    h0 = params_from_matrix(init->hidden, config);
    e0 = init->emission;
    pi0 = init->initial;
  } else {
    e0 = initial_emission(obs, config.ell);
    pi0 = stationary_distribution(hidden_matrix(h0, config.ell)).distribution;
  }

  const auto restarts = static_cast<std::size_t>(config.restarts);
  std::vector<std::optional<FitResult>> fits(restarts);
  std::vector<std::exception_ptr> errors(restarts);
  parallel_for(
      restarts,
      [&](std::size_t r) {
        try {
          if (r == 0) {
            fits[r] = baum_welch_single(obs, config, h0, e0, pi0);
            return;
          }
          Rng rng(config.seed, r);
          const HiddenParams h = jitter_hidden(config.model_kind, config.ell, rng);
          const GaussianEmission e = jitter_emission(e0, rng);
          auto pi = init ? pi0 : stationary_distribution(hidden_matrix(h, config.ell)).distribution;
          fits[r] = baum_welch_single(obs, config, h, e, std::move(pi));
        } catch (...) {
          errors[r] = std::current_exception();
        }
      },
      config.threads);

  std::optional<std::size_t> best;
  std::vector<double> lls;
  for (std::size_t r = 0; r < restarts; ++r) {
    if (!fits[r]) continue;
    lls.push_back(fits[r]->log_likelihood);
    if (!best || fits[r]->log_likelihood > fits[*best]->log_likelihood) best = r;
  }
  if (!best) std::rethrow_exception(errors.front());
  FitResult out = std::move(*fits[*best]);
  out.restart_log_likelihoods = std::move(lls);
  return out;
}

}  // namespace vnd
