#include <doctest/doctest.h>

#include <algorithm>
#include <cmath>

#include "oracle/oracle.hpp"
#include "sgmil/error.hpp"
#include "sgmil/evaluation.hpp"
#include "sgmil/rng.hpp"

using namespace sgmil;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::InvalidInput;
}

// Percentile bootstrap written out directly from its definition.
std::pair<double, double> bootstrap_by_hand(const std::vector<double>& s, const std::vector<int>& y, int n_boot,
                                            std::uint64_t seed) {
  const std::size_t n = s.size();
  std::vector<double> aucs;
  for (int b = 0; b < n_boot; ++b) {
    Rng rng(seed + static_cast<std::uint64_t>(b));
    std::vector<double> rs;
    std::vector<int> ry;
    int pos = 0;
    do {
      rs.clear();
      ry.clear();
      pos = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto k = rng.below(n);
        rs.push_back(s[k]);
        ry.push_back(y[k]);
        pos += y[k];
      }
    } while (pos == 0 || pos == static_cast<int>(n));
    aucs.push_back(oracle::auc(rs, ry));
  }
  std::sort(aucs.begin(), aucs.end());
  auto q = [&](double p) {
    const double h = (aucs.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(h);
    const auto hi = std::min(lo + 1, aucs.size() - 1);
    return aucs[lo] + (h - lo) * (aucs[hi] - aucs[lo]);
  };
  const double tail = (1.0 - 0.95) / 2.0;
  return {q(tail), q(1.0 - tail)};
}

}  // namespace

TEST_CASE("auc fixtures") {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y = {0, 0, 1, 1};
  CHECK(roc_auc(s, y) == 0.75);
  CHECK(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y) == 1.0);
  CHECK(roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y) == 0.5);
  CHECK(kind_of([] { roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}); }) == ErrorKind::UndefinedMetric);
  CHECK(kind_of([] { roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 2}); }) == ErrorKind::InvalidInput);
}

TEST_CASE("auc equals pair counting and flips with the scores") {
  Rng rng(51);
  for (int c = 0; c < 200; ++c) {
    const std::size_t n = 2 + rng.below(199);
    std::vector<double> s(n), neg(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = c % 2 ? static_cast<double>(rng.below(10)) : rng.uniform();
      y[i] = static_cast<int>(rng.below(2));
      neg[i] = -s[i];
    }
    y[0] = 0;
    y[1] = 1;
    const double a = roc_auc(s, y);
    REQUIRE(a == oracle::auc(s, y));
    if (c % 2 == 0) CHECK(a + roc_auc(neg, y) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("bootstrap matches a direct re-implementation") {
  Rng rng(52);
  for (int c = 0; c < 10; ++c) {
    const std::size_t n = 6 + rng.below(20);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = rng.uniform(), y[i] = static_cast<int>(rng.below(2));
    y[0] = 0;
    y[1] = 1;
    const auto ci = bootstrap_ci(s, y, 10, 0.95, 100 + c);
    const auto [lo, hi] = bootstrap_by_hand(s, y, 10, 100 + c);
    CHECK(ci.lo == std::min(lo, ci.auc));
    CHECK(ci.hi == std::max(hi, ci.auc));
    CHECK(ci.lo <= ci.auc);
    CHECK(ci.auc <= ci.hi);
  }
}

TEST_CASE("bootstrap on wide separation is degenerate at one") {
  const std::vector<double> s = {0.0, 0.01, 0.02, 0.98, 0.99, 1.0};
  const std::vector<int> y = {0, 0, 0, 1, 1, 1};
  const auto ci = bootstrap_ci(s, y, 500, 0.95, 1);
  CHECK(ci.auc == 1.0);
  CHECK(ci.lo == 1.0);
  CHECK(ci.hi == 1.0);
  CHECK(bootstrap_ci(s, y, 50, 0.95, 7).lo == bootstrap_ci(s, y, 50, 0.95, 7).lo);
}

TEST_CASE("operating point fixtures") {
  const std::vector<int> y = {0, 0, 1, 1};
  const auto op = operating_point(std::vector<double>{0.1, 0.4, 0.35, 0.8}, y);
  CHECK(op.youden == 0.5);
  CHECK(op.threshold == 0.35);
  const auto perfect = operating_point(std::vector<double>{0.1, 0.2, 0.7, 0.9}, y);
  CHECK(perfect.sensitivity == 1.0);
  CHECK(perfect.specificity == 1.0);
  CHECK(perfect.threshold == 0.7);
  const auto flat = operating_point(std::vector<double>{0.3, 0.3, 0.3, 0.3}, y);
  CHECK(flat.degenerate);
  CHECK(flat.youden == 0.0);
  CHECK(flat.sensitivity == 1.0);
  CHECK(flat.specificity == 0.0);
}

TEST_CASE("operating point equals an exhaustive threshold scan") {
  Rng rng(53);
  for (int c = 0; c < 200; ++c) {
    const std::size_t n = 2 + rng.below(50);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<double>(rng.below(c % 2 ? 5 : 1000)), y[i] = static_cast<int>(rng.below(2));
    y[0] = 1;
    y[1] = 0;
    const auto op = operating_point(s, y);
    const auto ref = oracle::operating_point(s, y);
    REQUIRE(op.threshold == ref.threshold);
    const double pos = std::count(y.begin(), y.end(), 1), neg = static_cast<double>(n) - pos;
    REQUIRE(op.youden == static_cast<double>(ref.j_scaled) / (pos * neg));
  }
}

TEST_CASE("roc curve runs from the origin to (1, 1)") {
  const auto roc = roc_curve(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1});
  REQUIRE(roc.size() == 5);
  CHECK(roc.front().fpr == 0.0);
  CHECK(roc.front().tpr == 0.0);
  CHECK(std::isinf(roc.front().threshold));
  CHECK(roc.back().fpr == 1.0);
  CHECK(roc.back().tpr == 1.0);
  for (std::size_t i = 1; i < roc.size(); ++i) {
    CHECK(roc[i].fpr >= roc[i - 1].fpr);
    CHECK(roc[i].tpr >= roc[i - 1].tpr);
  }
}

TEST_CASE("pearson fixtures") {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  std::vector<double> y(5), z(5);
  for (int i = 0; i < 5; ++i) y[i] = 2 * x[i] + 1, z[i] = -x[i];
  CHECK(std::abs(pearson_r(x, y) - 1.0) <= 1e-12);
  CHECK(std::abs(pearson_r(x, z) + 1.0) <= 1e-12);
  CHECK(pearson_r(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(kind_of([] { pearson_r(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}); }) == ErrorKind::UndefinedMetric);
}

TEST_CASE("count cutoff transfer") {
  std::vector<double> tmb;
  std::vector<long long> counts;
  for (int i = 1; i <= 300; ++i) {
    tmb.push_back(i / 10.0);
    counts.push_back(28LL * i / 10);
  }
  // proportional counts put the cut exactly at 28 x 10
  CHECK(derive_count_cutoff(tmb, counts, 10.0) == 280);
  CHECK_THROWS_AS(derive_count_cutoff(std::vector<double>{}, std::vector<long long>{}), Error);

  Rng rng(54);
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = 2 + rng.below(100);
    std::vector<double> t(n);
    std::vector<long long> k(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = rng.uniform(0, 25), k[i] = static_cast<long long>(rng.below(600));
    const long long cut = derive_count_cutoff(t, k, 10.0);
    const auto target = std::count_if(t.begin(), t.end(), [](double v) { return v > 10.0; });
    auto gap = [&](long long cc) { return std::llabs(std::count_if(k.begin(), k.end(), [&](long long v) { return v > cc; }) - target); };
    long long best = gap(cut);
    for (long long cc = -1; cc <= 600; ++cc) CHECK(gap(cc) >= best);
    CHECK(static_cast<double>(best) / n < 1.0 / n + 1e-12);
  }
}

TEST_CASE("mann whitney fixtures") {
  const auto r = mann_whitney_u(std::vector<double>{1, 2}, std::vector<double>{3, 4});
  CHECK(r.u == 0.0);
  CHECK(r.exact);
  CHECK(r.p_value == doctest::Approx(1.0 / 3).epsilon(1e-15));
  const auto same = mann_whitney_u(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3});
  CHECK(same.u == 4.5);
  CHECK(same.p_value == 1.0);
  CHECK(mann_whitney_u(std::vector<double>{5, 6, 7}, std::vector<double>{1, 2}).u == 6.0);
}

TEST_CASE("mann whitney exact p equals enumeration") {
  Rng rng(55);
  for (int c = 0; c < 100; ++c) {
    std::vector<double> a(1 + rng.below(7)), b(1 + rng.below(7));
    for (auto* v : {&a, &b})
      for (double& x : *v) x = c % 2 ? static_cast<double>(rng.below(3)) : rng.uniform();
    REQUIRE(mann_whitney_u(a, b).p_value == oracle::mann_whitney_p(a, b));
  }
}

TEST_CASE("mann whitney normal approximation for large samples") {
  Rng rng(56);
  std::vector<double> a(40), b(40);
  for (double& x : a) x = rng.normal();
  for (double& x : b) x = rng.normal() + 3.0;
  const auto r = mann_whitney_u(a, b);
  CHECK_FALSE(r.exact);
  CHECK(r.p_value < 1e-6);
}

TEST_CASE("subgroups") {
  Rng rng(57);
  std::vector<PatientPrediction> recs;
  for (int i = 0; i < 60; ++i) {
    PatientPrediction p;
    p.patient_id = "P" + std::to_string(i);
    p.cancer_type = i % 2 ? CancerType::LUAD : CancerType::COAD;
    p.label = i % 3 == 0;
    p.prob = rng.uniform() + 0.3 * p.label;
    p.metadata["grade"] = i % 4 < 2 ? "G1" : "G2";
    p.metadata["all"] = "x";
    recs.push_back(p);
  }
  const auto whole = subgroup_eval(recs, "all", 100, 3);
  REQUIRE(whole.size() == 1);
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& r : recs) s.push_back(r.prob), y.push_back(r.label);
  CHECK(whole[0].auc->auc == roc_auc(s, y));

  const auto grade = subgroup_eval(recs, "grade", 100, 3);
  REQUIRE(grade.size() == 2);
  CHECK(grade[0].value == "G1");
  CHECK(grade[0].n + grade[1].n == recs.size());
  for (const auto& g : grade) {
    std::vector<double> gs;
    std::vector<int> gy;
    for (const auto& r : recs)
      if (r.metadata.at("grade") == g.value) gs.push_back(r.prob), gy.push_back(r.label);
    CHECK(g.auc->auc == roc_auc(gs, gy));
  }
  CHECK(subgroup_eval(recs, "cancer_type", 100, 3).size() == 2);
  CHECK(kind_of([&] { subgroup_eval(recs, "stage", 100, 3); }) == ErrorKind::InvalidInput);
}

TEST_CASE("p value formatting") {
  CHECK(format_p_value(0.00001) == "<0.0001");
  CHECK(format_p_value(0.04321987) == "0.04322");
  CHECK(format_p_value(0.5) == "0.5");
}
