#include <cmath>
#include <limits>
#include <numbers>

#include "support.hpp"
#include "vnd/error.hpp"
#include "vnd/hmm.hpp"
#include "vnd/sum_chain.hpp"

using namespace vnd;
using vnd::testing::random_params;

namespace {

HmmModel random_model(Rng& rng, int ell) {
  // Random stochastic hidden matrix (not necessarily VND) and random start.
  const auto n = static_cast<std::size_t>(ell) + 1;
  Matrix q(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    double t = 0.0;
    for (std::size_t s = 0; s < n; ++s) t += (q(r, s) = 0.05 + rng.uniform());
    for (std::size_t s = 0; s < n; ++s) q(r, s) /= t;
  }
  std::vector<double> pi(n);
  double t = 0.0;
  for (auto& p : pi) t += (p = 0.05 + rng.uniform());
  for (auto& p : pi) p /= t;
  GaussianEmission e{rng.normal(), 0.5 + rng.uniform(), {}};
  for (std::size_t s = 0; s < n; ++s) e.sigmas.push_back(0.3 + rng.uniform());
  return HmmModel{SumTransitionMatrix{ell, q}, e, pi};
}

ObservationSeries random_obs(Rng& rng, std::size_t K) {
  ObservationSeries o;
  for (std::size_t k = 0; k < K; ++k) o.values.push_back(2.0 * rng.normal());
  return o;
}

struct Enumeration {
  double log_sum;
  double best;
  HiddenPath argmax;
};

// Visits every hidden path; argmax keeps the lexicographically smallest path
// among ties, which is what lower-state tie breaking produces.
Enumeration enumerate_paths(const HmmModel& m, const ObservationSeries& obs) {
  const int n = m.ell() + 1;
  const std::size_t K = obs.size();
  std::size_t total = 1;
  for (std::size_t k = 0; k < K; ++k) total *= static_cast<std::size_t>(n);
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> all;
  HiddenPath path(K), best_path;
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t k = K; k-- > 0;) {
      path[k] = static_cast<int>(c % static_cast<std::size_t>(n));
      c /= static_cast<std::size_t>(n);
    }
    const double v = complete_log_likelihood(m, path, obs);
    all.push_back(v);
    if (v > mx) {
      mx = v;
      best_path = path;
    }
  }
  double s = 0.0;
  for (double v : all) s += std::exp(v - mx);
  return {mx + std::log(s), mx, best_path};
}

}  // namespace

TEST_CASE("emission log density") {
  const GaussianEmission e{0.0, 1.0, {0.5, 1.0, 2.0}};
  CHECK(emission_logdensity(e, 1.0, 1) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)));
  CHECK(emission_logdensity(e, 2.0, 1) == doctest::Approx(-1.41894).epsilon(1e-5));
  CHECK(emission_logdensity(e, 2.0, 2) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi * 4.0)));
  CHECK_THROWS_AS(emission_logdensity(e, 0.0, 3), DomainError);

  // Simpson quadrature over +-12 sigma.
  for (int s = 0; s <= 2; ++s) {
    const double c = e.mean(s), w = 12 * e.sigmas[static_cast<std::size_t>(s)];
    const int n = 20000;
    const double h = 2 * w / n;
    double total = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double wt = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
      total += wt * std::exp(emission_logdensity(e, c - w + i * h, s));
    }
    CHECK(std::abs(total * h / 3 - 1.0) <= 1e-8);
  }
}

TEST_CASE("model validation") {
  HmmModel m{q_uc(2, 0.9, 0.9), GaussianEmission::uniform(2, 0, 1, 0.2), {0.5, 0.5, 0.0}};
  CHECK_NOTHROW(m.validate());
  m.initial = {0.5, 0.6, 0.0};
  CHECK_THROWS_AS(m.validate(), DomainError);
  m.initial = {0.5, 0.5, 0.0};
  m.emission.sigmas = {0.2, 0.2};
  CHECK_THROWS_AS(m.validate(), DomainError);
  m.emission.sigmas = {0.2, 0.0, 0.2};
  CHECK_THROWS_AS(m.validate(), DomainError);
  CHECK_THROWS_AS((ObservationSeries{{1.0, NAN}, {}}.validate()), DomainError);
  CHECK_THROWS_AS((ObservationSeries{{}, {}}.validate()), DomainError);
}

TEST_CASE("forward-backward and Viterbi agree with path enumeration") {
  Rng rng(31);
  for (int rep = 0; rep < 100; ++rep) {
    const int ell = 1 + rep % 2;
    const std::size_t K = 1 + static_cast<std::size_t>(rep % 8);
    const auto m = random_model(rng, ell);
    const auto obs = random_obs(rng, K);
    const auto en = enumerate_paths(m, obs);
    const auto fb = forward_backward(m, obs);
    CHECK(std::abs(fb.log_likelihood - en.log_sum) <= 1e-10);
    const auto path = viterbi(m, obs);
    CHECK(path == en.argmax);
    CHECK(complete_log_likelihood(m, path, obs) == doctest::Approx(en.best).epsilon(1e-12));
  }
}

TEST_CASE("filtering distributions are normalised and consistent") {
  Rng rng(32);
  const auto m = random_model(rng, 2);
  const auto obs = random_obs(rng, 200);
  const auto fb = forward_backward(m, obs);
  const std::size_t n = 3;
  for (std::size_t k = 0; k < obs.size(); ++k) {
    double s = 0.0;
    for (double v : fb.univariate.row(k)) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-10);
  }
  Matrix sum(n, n);
  for (std::size_t k = 0; k + 1 < obs.size(); ++k) {
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      double row = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        row += fb.pair(k, static_cast<int>(r), static_cast<int>(s));
        sum(r, s) += fb.pair(k, static_cast<int>(r), static_cast<int>(s));
      }
      CHECK(std::abs(row - fb.univariate(k, r)) <= 1e-10);
      total += row;
    }
    CHECK(std::abs(total - 1.0) <= 1e-10);
  }
  CHECK(max_abs_diff(sum, fb.expected_transitions) <= 1e-9);

  double ls = 0.0;
  for (double c : fb.log_scaling_factors) ls += c;
  CHECK(ls == doctest::Approx(fb.log_likelihood).epsilon(1e-12));

  FilterOptions lean;
  lean.store_bivariate = false;
  const auto fb2 = forward_backward(m, obs, lean);
  CHECK(fb2.bivariate.empty());
  CHECK(fb2.log_likelihood == fb.log_likelihood);
  CHECK(max_abs_diff(fb2.expected_transitions, fb.expected_transitions) == 0.0);
}

TEST_CASE("single observation posterior is Bayes' rule") {
  Rng rng(33);
  const auto m = random_model(rng, 2);
  const ObservationSeries obs{{0.7}, {}};
  const auto fb = forward_backward(m, obs);
  double z = 0.0;
  std::vector<double> w(3);
  for (int s = 0; s < 3; ++s) z += (w[s] = m.initial[s] * std::exp(emission_logdensity(m.emission, 0.7, s)));
  for (int s = 0; s < 3; ++s) CHECK(fb.univariate(0, s) == doctest::Approx(w[s] / z).epsilon(1e-12));
  CHECK(fb.log_likelihood == doctest::Approx(std::log(z)).epsilon(1e-12));
}

TEST_CASE("uninformative emissions reproduce the chain marginals") {
  HmmModel m{q_vnd_closed_form(VndParams{{0.9, 0.8}, {0.98, 0.89}}), GaussianEmission{0.0, 0.0, {1.0, 1.0, 1.0}},
             {0.2, 0.3, 0.5}};
  Rng rng(34);
  const auto obs = random_obs(rng, 30);
  const auto fb = forward_backward(m, obs);
  std::vector<double> p = m.initial;
  for (std::size_t k = 0; k < obs.size(); ++k) {
    for (int s = 0; s < 3; ++s) CHECK(fb.univariate(k, s) == doctest::Approx(p[s]).epsilon(1e-10));
    std::vector<double> next(3, 0.0);
    for (int r = 0; r < 3; ++r)
      for (int s = 0; s < 3; ++s) next[s] += p[r] * m.hidden(r, s);
    p = next;
  }
}

TEST_CASE("log-likelihood is invariant to a common shift") {
  Rng rng(35);
  auto m = random_model(rng, 2);
  auto obs = random_obs(rng, 500);
  const double a = forward_backward(m, obs).log_likelihood;
  m.emission.mu += 123.25;
  for (auto& y : obs.values) y += 123.25;
  CHECK(std::abs(forward_backward(m, obs).log_likelihood - a) <= 1e-9);
}

TEST_CASE("complete log-likelihood") {
  Rng rng(36);
  const auto m = random_model(rng, 2);
  const ObservationSeries one{{0.3}, {}};
  CHECK(complete_log_likelihood(m, {1}, one) ==
        doctest::Approx(std::log(m.initial[1]) + emission_logdensity(m.emission, 0.3, 1)));

  HmmModel blocked{q_vnd_closed_form(VndParams{{1.0, 0.5}, {0.5, 0.5}}), GaussianEmission::uniform(2, 0, 1, 1),
                   {1.0, 0.0, 0.0}};
  const ObservationSeries two{{0.0, 1.0}, {}};
  CHECK(complete_log_likelihood(blocked, {0, 1}, two) == -std::numeric_limits<double>::infinity());
  CHECK(complete_log_likelihood(blocked, {1, 1}, two) == -std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(complete_log_likelihood(blocked, {0}, two), DomainError);
}

TEST_CASE("simulation") {
  SUBCASE("noiseless levels") {
    HmmModel m = HmmModel::with_stationary_start(q_uc(2, 0.9, 0.8), GaussianEmission::uniform(2, 1.5, 2.0, 1e-9));
    const auto sim = simulate(m, 1000, 4);
    for (std::size_t k = 0; k < 1000; ++k)
      CHECK(sim.observations.values[k] == doctest::Approx(1.5 + 2.0 * sim.path[k]).epsilon(1e-6));
  }
  SUBCASE("absorbing start") {
    HmmModel m{SumTransitionMatrix{2, Matrix::identity(3)}, GaussianEmission::uniform(2, 0, 1, 0.1), {1, 0, 0}};
    for (int s : simulate(m, 500, 5).path) CHECK(s == 0);
  }
  SUBCASE("reproducible by seed") {
    HmmModel m = HmmModel::with_stationary_start(q_uc(2, 0.9, 0.8), GaussianEmission::uniform(2, 0, 1, 0.3));
    const auto a = simulate(m, 2000, 77);
    const auto b = simulate(m, 2000, 77);
    const auto c = simulate(m, 2000, 78);
    CHECK(a.path == b.path);
    CHECK(a.observations.values == b.observations.values);
    CHECK(a.observations.values != c.observations.values);
  }
  SUBCASE("empirical transitions and occupancy match the chain") {
    const VndParams p{{0.9877, 0.9979}, {0.9922, 0.9371}};
    const auto q = q_vnd_closed_form(p);
    HmmModel m = HmmModel::with_stationary_start(q, GaussianEmission::uniform(2, 0, 1, 0.2));
    const std::size_t K = 1000000;
    const auto sim = simulate(m, K, 6);
    Matrix counts(3, 3);
    for (std::size_t k = 0; k + 1 < K; ++k) counts(sim.path[k], sim.path[k + 1]) += 1;
    for (int i = 0; i < 3; ++i) {
      double n = 0;
      for (int j = 0; j < 3; ++j) n += counts(i, j);
      for (int j = 0; j < 3; ++j) {
        const double se = std::sqrt(n * q(i, j) * (1 - q(i, j)));
        CHECK(std::abs(counts(i, j) - n * q(i, j)) <= 3 * se + 1e-9);
      }
    }
    // Batch means for the occupancy standard error.
    const auto pi = stationary_distribution(q).distribution;
    const std::size_t batches = 50, len = K / batches;
    for (int s = 0; s < 3; ++s) {
      std::vector<double> means;
      for (std::size_t b = 0; b < batches; ++b) {
        double c = 0;
        for (std::size_t k = b * len; k < (b + 1) * len; ++k) c += sim.path[k] == s;
        means.push_back(c / len);
      }
      double mean = 0, var = 0;
      for (double v : means) mean += v;
      mean /= batches;
      for (double v : means) var += (v - mean) * (v - mean);
      const double se = std::sqrt(var / (batches - 1) / batches);
      CHECK(std::abs(mean - pi[s]) <= 3 * se);
    }
  }
}

TEST_CASE("Viterbi limits") {
  SUBCASE("well separated levels decode to the nearest level") {
    HmmModel m = HmmModel::with_stationary_start(q_uc(3, 0.9, 0.9), GaussianEmission::uniform(3, 0, 1, 0.01));
    const auto sim = simulate(m, 3000, 8);
    const auto path = viterbi(m, sim.observations);
    for (std::size_t k = 0; k < path.size(); ++k)
      CHECK(path[k] == static_cast<int>(std::lround(sim.observations.values[k])));
  }
  SUBCASE("constant data at the baseline") {
    HmmModel m = HmmModel::with_stationary_start(q_uc(2, 0.999, 0.9), GaussianEmission::uniform(2, 0, 1, 0.5));
    ObservationSeries obs{std::vector<double>(100, 0.0), {}};
    for (int s : viterbi(m, obs)) CHECK(s == 0);
  }
  SUBCASE("ties go to the lower state") {
    HmmModel m{q_uc(1, 0.5, 0.5), GaussianEmission{0.0, 0.0, {1.0, 1.0}}, {0.5, 0.5}};
    ObservationSeries obs{{0.1, -0.2, 0.3}, {}};
    for (int s : viterbi(m, obs)) CHECK(s == 0);
  }
}

TEST_CASE("vanishing normaliser raises NumericalUnderflow") {
  HmmModel m = HmmModel::with_stationary_start(q_uc(1, 0.9, 0.9), GaussianEmission::uniform(1, 0, 1, 1e-3));
  ObservationSeries obs{{0.0, 1e200}, {}};
  CHECK_THROWS_AS(forward_backward(m, obs), NumericalUnderflow);
}
