#include <doctest/doctest.h>

#include <cmath>

#include "oracle/oracle.hpp"
#include "sgmil/error.hpp"
#include "sgmil/rng.hpp"
#include "sgmil/survival.hpp"
#include "sgmil/synth.hpp"

using namespace sgmil;

namespace {

std::vector<SurvivalRecord> recs(std::initializer_list<std::tuple<double, bool, int>> rows) {
  std::vector<SurvivalRecord> out;
  for (const auto& [t, e, g] : rows) out.push_back({"", t, e, g ? TmbClass::High : TmbClass::Low});
  return out;
}

}  // namespace

TEST_CASE("kaplan meier textbook cases") {
  const auto none = kaplan_meier(recs({{3, false, 0}, {5, false, 0}}));
  for (const auto& s : none) CHECK(s.survival == 1.0);

  const auto two = kaplan_meier(recs({{1, true, 0}, {2, true, 0}}));
  CHECK(survival_at(two, 0.5) == 1.0);
  CHECK(survival_at(two, 1.0) == 0.5);
  CHECK(survival_at(two, 1.999) == 0.5);
  CHECK(survival_at(two, 2.0) == 0.0);

  // t=1: 4 at risk, 1 death; t=2: censored; t=3: 2 at risk, 1 death
  const auto mixed = kaplan_meier(recs({{1, true, 0}, {2, false, 0}, {3, true, 0}, {4, false, 0}}));
  REQUIRE(mixed.size() == 5);
  CHECK(mixed[1].at_risk == 4);
  CHECK(mixed[1].survival == doctest::Approx(0.75));
  CHECK(mixed[2].censored == 1);
  CHECK(mixed[2].survival == doctest::Approx(0.75));
  CHECK(mixed[3].at_risk == 2);
  CHECK(mixed[3].survival == doctest::Approx(0.375));
  CHECK(mixed[4].survival == doctest::Approx(0.375));
}

TEST_CASE("kaplan meier is non-increasing from one") {
  Rng rng(61);
  for (int c = 0; c < 50; ++c) {
    std::vector<SurvivalRecord> r;
    for (int i = 0; i < 30; ++i) r.push_back({"", static_cast<double>(1 + rng.below(20)), rng.below(2) == 1, TmbClass::Low});
    const auto km = kaplan_meier(r);
    CHECK(km.front().survival == 1.0);
    for (std::size_t i = 1; i < km.size(); ++i) CHECK(km[i].survival <= km[i - 1].survival);
  }
  CHECK_THROWS_AS(kaplan_meier(recs({{-1, true, 0}})), Error);
  const auto at_zero = kaplan_meier(recs({{0, true, 0}, {2, true, 0}}));
  CHECK(at_zero.front().time == 0.0);
  CHECK(at_zero.front().survival == 0.5);
}

TEST_CASE("log-rank observed minus expected table") {
  // times 1..6 alternate between groups; all events
  const auto a = recs({{1, true, 1}, {3, true, 1}, {5, false, 1}});
  const auto b = recs({{2, true, 0}, {4, true, 0}, {6, true, 0}});
  // event times 1,2,3,4,6 with (n, n_a): (6,3) (5,2) (4,2) (3,1) (1,0)
  double o = 0, e = 0, v = 0;
  const std::vector<std::tuple<double, double, double>> table = {{6, 3, 1}, {5, 2, 0}, {4, 2, 1}, {3, 1, 0}, {1, 0, 0}};
  for (const auto& [n, na, da] : table) {
    o += da;
    e += na / n;
    if (n > 1) v += na * (n - na) / (n * n);
  }
  const auto r = log_rank(a, b);
  CHECK(r.observed_a == o);
  CHECK(r.expected_a == doctest::Approx(e).epsilon(1e-14));
  CHECK(r.variance == doctest::Approx(v).epsilon(1e-14));
  CHECK(r.chi_square == doctest::Approx((o - e) * (o - e) / v).epsilon(1e-14));
}

TEST_CASE("log-rank symmetry and degenerate inputs") {
  Rng rng(62);
  for (int c = 0; c < 30; ++c) {
    std::vector<SurvivalRecord> a, b;
    for (int i = 0; i < 12; ++i) a.push_back({"", static_cast<double>(1 + rng.below(10)), rng.below(3) != 0, TmbClass::High});
    for (int i = 0; i < 9; ++i) b.push_back({"", static_cast<double>(1 + rng.below(10)), rng.below(3) != 0, TmbClass::Low});
    a[0].event = true;
    const auto ab = log_rank(a, b), ba = log_rank(b, a);
    CHECK(ab.chi_square >= 0.0);
    CHECK(ab.chi_square == ba.chi_square);
    const auto same = log_rank(a, a);
    CHECK(same.chi_square == 0.0);
    CHECK(same.p_value == 1.0);
  }
  try {
    log_rank(recs({{1, false, 1}}), recs({{2, false, 0}}));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UndefinedMetric);
  }
}

TEST_CASE("cox matches a grid maximisation without ties") {
  Rng rng(63);
  int used = 0;
  while (used < 30) {
    std::vector<SurvivalRecord> r;
    std::vector<double> times = {1, 2, 3, 4, 5, 6, 7, 8};
    rng.shuffle(std::span<double>(times));
    for (int i = 0; i < 8; ++i) r.push_back({"", times[i], rng.uniform() < 0.8, i % 2 ? TmbClass::High : TmbClass::Low});
    const double grid = oracle::cox_grid_argmax(r);
    if (std::abs(grid) > 5.0) continue;
    const auto fit = cox_hr(r);
    CHECK(std::abs(fit.beta - grid) < 1e-6);
    CHECK(std::abs(fit.score) < 1e-8);
    CHECK(fit.hazard_ratio == doctest::Approx(std::exp(fit.beta)));
    CHECK(fit.ci_lo <= fit.hazard_ratio);
    CHECK(fit.hazard_ratio <= fit.ci_hi);
    ++used;
  }
}

TEST_CASE("cox separation is a divergence error") {
  const auto r = recs({{1, true, 1}, {2, true, 1}, {3, true, 0}, {4, true, 0}});
  try {
    cox_hr(r);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Divergence);
  }
}

TEST_CASE("cox under no group effect") {
  SyntheticCohortSpec spec;
  spec.n_patients = 2000;
  spec.hazard_ratio = 1.0;
  spec.seed = 64;
  std::vector<SurvivalRecord> r;
  for (const auto& p : generate_synthetic_cohort(spec).patients) {
    auto s = *p.survival;
    s.group = p.label;
    r.push_back(s);
  }
  const auto fit = cox_hr(r);
  CHECK(fit.hazard_ratio > 0.8);
  CHECK(fit.hazard_ratio < 1.25);
}

TEST_CASE("chi-square tail") {
  CHECK(chi_square_sf_1df(3.841458820694124) == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(chi_square_sf_1df(0.0) == 1.0);
}
