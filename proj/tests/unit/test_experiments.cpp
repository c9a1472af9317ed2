#include <cmath>
#include <limits>

#include "support.hpp"
#include "vnd/error.hpp"
#include "vnd/experiments.hpp"
#include "vnd/sum_chain.hpp"

using namespace vnd;

namespace {

VndParams from_leave_rates(double l0, double l1, double e1, double e2) {
  return VndParams{{1 - l0, 1 - l1}, {1 - e1, 1 - e2}};
}

FitResult fake_fit(ModelKind kind, int ell, double ll, std::size_t n) {
  FitResult f;
  f.model_kind = kind;
  f.ell = ell;
  f.theta_h = default_hidden_params(kind, ell);
  f.theta_e = GaussianEmission::uniform(ell, 0, 1, 1);
  f.log_likelihood = ll;
  f.num_samples = n;
  return f;
}

}  // namespace

TEST_CASE("BIC arithmetic") {
  CHECK(bic_score(-100.0, 4, 100) == doctest::Approx(-200.0 - 4 * std::log(100.0)));
  CHECK(bic_difference(-100, 9, -105, 7, 1000) == doctest::Approx(10.0 - 2 * std::log(1000.0)));

  const std::size_t n = 10000;
  const auto table = bic_compare({fake_fit(ModelKind::uc, 2, -5000, n), fake_fit(ModelKind::vnd, 2, -4980, n),
                                  fake_fit(ModelKind::ck, 2, -4999, n)},
                                 n);
  REQUIRE(table.entries.size() == 3);
  CHECK(table.entries[0].label == "UC");
  CHECK(table.entries[1].num_params == 4 + 5);
  CHECK(table.entries[2].num_params == 3 + 5);
  REQUIRE(table.comparisons.size() == 3);
  const auto* vu = table.find("VND", "UC");
  REQUIRE(vu != nullptr);
  CHECK(vu->difference == doctest::Approx(40.0 - 2 * std::log(double(n))));
  const auto* cu = table.find("CK", "UC");
  REQUIRE(cu != nullptr);
  CHECK(cu->difference == doctest::Approx(2.0 - std::log(double(n))));
  CHECK(table.find("UC", "VND") == nullptr);
}

TEST_CASE("identical fits have zero BIC difference") {
  const auto a = fake_fit(ModelKind::vnd, 3, -123.5, 500);
  const auto table = bic_compare({a, a}, 500);
  CHECK(table.comparisons.at(0).difference == 0.0);
}

TEST_CASE("dwell histograms") {
  SUBCASE("short path") {
    const auto h = dwell_times({0, 0, 1, 1, 1, 0}, 1);
    REQUIRE(h.size() == 2);
    CHECK(h[0].counts.empty());
    CHECK(h[0].censored_counts.at(2) == 1);
    CHECK(h[0].censored_counts.at(1) == 1);
    CHECK(h[1].counts.at(3) == 1);
    CHECK(h[1].censored_counts.empty());
    CHECK(h[1].total() == 1);
  }
  SUBCASE("constant path is a single censored run") {
    const auto h = dwell_times(HiddenPath(10, 2), 2);
    CHECK(h[2].counts.empty());
    CHECK(h[2].censored_counts.at(10) == 1);
    CHECK(h[0].total() == 0);
  }
  SUBCASE("states outside the range are rejected") {
    CHECK_THROWS_AS(dwell_times({0, 3}, 2), DomainError);
  }
}

TEST_CASE("dwell prediction is geometric") {
  Matrix m(2, 2);
  m(0, 0) = 0.9;
  m(0, 1) = 0.1;
  m(1, 0) = 1.0;
  const SumTransitionMatrix q{1, m};
  CHECK(dwell_prediction(q, 0, 1) == doctest::Approx(0.1));
  CHECK(dwell_prediction(q, 0, 2) == doctest::Approx(0.09));
  CHECK(dwell_prediction(q, 1, 1) == 1.0);
  double s = 0.0;
  for (std::size_t t = 1; t <= 400; ++t) s += dwell_prediction(q, 0, t);
  CHECK(std::abs(s - 1.0) <= 1e-12);
}

TEST_CASE("simulated dwell times follow the prediction") {
  const auto q = q_vnd_closed_form(VndParams{{0.95, 0.97}, {0.9, 0.8}});
  const auto path = simulate_path(q, stationary_distribution(q).distribution, 200000, 61);
  const auto h = dwell_times(path, 2);
  for (int s = 0; s <= 2; ++s) {
    double sum = 0.0, n = 0.0;
    for (const auto& [t, c] : h[static_cast<std::size_t>(s)].counts) {
      sum += static_cast<double>(t * c);
      n += static_cast<double>(c);
    }
    const double expected = 1.0 / (1.0 - q(s, s));
    CHECK(sum / n == doctest::Approx(expected).epsilon(0.05));
  }
}

TEST_CASE("gating ratios") {
  const auto ds1 = gating_ratios(from_leave_rates(0.0123, 0.0021, 0.0078, 0.0629));
  CHECK(ds1.ratio_lambda == doctest::Approx(5.834).epsilon(0.015));
  CHECK(ds1.ratio_eta == doctest::Approx(8.074).epsilon(0.015));
  CHECK(ds1.label == GatingLabel::competitive);

  const auto ds2 = gating_ratios(from_leave_rates(0.0162, 0.0027, 0.0047, 0.0457));
  CHECK(ds2.ratio_lambda == doctest::Approx(6.002).epsilon(0.015));
  CHECK(ds2.ratio_eta == doctest::Approx(9.637).epsilon(0.015));
  CHECK(ds2.label == GatingLabel::competitive);

  const auto uc = gating_ratios(VndParams::constant(3, 0.9, 0.8));
  CHECK(uc.ratio_lambda == doctest::Approx(1.0));
  CHECK(uc.ratio_eta == doctest::Approx(1.0));
  CHECK(uc.label == GatingLabel::indeterminate);
  CHECK(to_string(uc.label) == "indeterminate");

  CHECK(gating_ratios(from_leave_rates(0.001, 0.01, 0.02, 0.002)).label == GatingLabel::cooperative);

  const auto dz = gating_ratios(VndParams{{0.9, 1.0}, {0.9, 0.8}});
  CHECK(dz.division_by_zero);
  CHECK(dz.ratio_lambda == std::numeric_limits<double>::infinity());

  CHECK_THROWS_AS(gating_ratios(VndParams{{0.9}, {0.9}}), DomainError);
}

TEST_CASE("robustness scenario parameters") {
  const auto p = RobustnessScenario{}.params();
  CHECK(p.ell() == 20);
  CHECK(p.lambdas[0] == doctest::Approx(0.999));
  CHECK(p.lambdas[1] == doctest::Approx(0.9995));
  CHECK(p.lambdas[5] == 1.0);
  CHECK(p.eta(1) == doctest::Approx(0.98));
  CHECK(p.eta(2) == doctest::Approx(0.96));
  CHECK(p.eta(3) == 0.8);
}

TEST_CASE("channel-count scan") {
  HmmModel truth = HmmModel::with_stationary_start(q_vnd_closed_form(VndParams{{0.97, 0.98}, {0.95, 0.9}}),
                                                   GaussianEmission::uniform(2, 0, 1, 0.2));
  const auto sim = simulate(truth, 30000, 62);
  FitConfig c;
  c.restarts = 1;
  c.seed = 5;

  SUBCASE("observed level and weak dependence on ell") {
    CHECK(observed_max_level(sim.observations, 5) == 2);
    const auto scan = channel_count_scan(sim.observations, {4, 2, 3}, c);
    CHECK(scan.observed_max_level == 2);
    REQUIRE(scan.entries.size() == 3);
    CHECK(scan.entries[0].ell == 2);
    for (const auto& e : scan.entries) REQUIRE(e.fit.has_value());
    const double base = scan.entries[0].fit->log_likelihood;
    for (const auto& e : scan.entries) CHECK(std::abs(e.fit->log_likelihood - base) < 5e-3 * std::abs(base));
  }
  SUBCASE("a single candidate matches a direct fit") {
    const auto scan = channel_count_scan(sim.observations, {2}, c);
    c.ell = 2;
    const auto direct = baum_welch(sim.observations, c);
    REQUIRE(scan.entries.at(0).fit.has_value());
    CHECK(scan.entries[0].fit->log_likelihood == direct.log_likelihood);
  }
  SUBCASE("infeasible candidates are reported, not thrown") {
    const auto scan = channel_count_scan(sim.observations, {1}, c);
    CHECK_FALSE(scan.entries.at(0).fit.has_value());
    CHECK_FALSE(scan.entries[0].error.empty());
  }
}

TEST_CASE("robustness experiment is reproducible") {
  RobustnessScenario sc;
  RobustnessOptions o;
  o.num_samples = 20000;
  o.repetitions = 2;
  o.seed = 9;
  o.fit.restarts = 1;
  o.fit.max_iterations = 30;
  const auto a = robustness_experiment(sc.params(), sc.emission, o);
  const auto b = robustness_experiment(sc.params(), sc.emission, o);
  REQUIRE(a.size() == 2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].repetition == static_cast<int>(i));
    REQUIRE(a[i].ratios.has_value());
    REQUIRE(b[i].ratios.has_value());
    CHECK(a[i].ratios->ratio_lambda == b[i].ratios->ratio_lambda);
    CHECK(a[i].ratios->ratio_eta == b[i].ratios->ratio_eta);
  }
}
