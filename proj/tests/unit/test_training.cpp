#include <doctest/doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "sgmil/error.hpp"
#include "sgmil/evaluation.hpp"
#include "sgmil/rng.hpp"
#include "sgmil/synth.hpp"
#include "sgmil/training.hpp"
#include "support/fixtures.hpp"

using namespace sgmil;

namespace {

std::vector<PatientLabel> one_stratum(int n) {
  std::vector<PatientLabel> out;
  for (int i = 0; i < n; ++i) out.push_back({"P" + std::to_string(i), CancerType::COAD, 5.0, {}, TmbClass::Low, {}, {}});
  return out;
}

std::vector<std::size_t> fold_sizes(const FoldAssignment& f) {
  std::vector<std::size_t> sizes;
  for (int k = 0; k < f.k; ++k) sizes.push_back(f.members(k).size());
  std::sort(sizes.rbegin(), sizes.rend());
  return sizes;
}

struct SmallCohort {
  SyntheticCohort synth;
  std::vector<SlideGraph> graphs;
  std::vector<TrainingExample> train, val;
};

SmallCohort separable_cohort() {
  SyntheticCohortSpec spec;
  spec.n_patients = 80;
  spec.tmb_h_fraction = 0.4;
  spec.scale_expression = 1.0;
  spec.signal_fraction = 0.3;
  spec.shift = 6.0;
  spec.min_tiles = 12;
  spec.max_tiles = 24;
  spec.feature_dim = 8;
  spec.seed = 4;
  SmallCohort c;
  c.synth = generate_synthetic_cohort(spec);
  for (const auto& sl : c.synth.slides[2]) c.graphs.push_back(build_knn_graph(sl.bag, 8));
  for (std::size_t i = 0; i < c.graphs.size(); ++i) {
    TrainingExample ex{&c.graphs[i], c.synth.patients[i].label};
    (i % 4 == 0 ? c.val : c.train).push_back(ex);
  }
  return c;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.shape = {0, 16, 8, 2};
  cfg.learning_rate = 3e-3;
  cfg.epochs = 8;
  cfg.ema_momentum = 0.9;
  return cfg;
}

}  // namespace

TEST_CASE("labels use a strict cutoff") {
  CHECK(binarize_label(10.0) == TmbClass::Low);
  CHECK(binarize_label(10.1) == TmbClass::High);
  CHECK(binarize_label(3.0, 2.5) == TmbClass::High);
  CHECK_THROWS_AS(binarize_label(-1.0), Error);
}

TEST_CASE("fold sizes") {
  CHECK(fold_sizes(stratified_kfold(one_stratum(10), 5, 1)) == std::vector<std::size_t>{2, 2, 2, 2, 2});
  CHECK(fold_sizes(stratified_kfold(one_stratum(7), 5, 1)) == std::vector<std::size_t>{2, 2, 1, 1, 1});
  const auto small = stratified_kfold(one_stratum(3), 5, 1);
  CHECK_FALSE(small.warnings.empty());
}

TEST_CASE("folds are a seeded stratified partition") {
  Rng rng(41);
  std::vector<PatientLabel> pats;
  for (int i = 0; i < 137; ++i) {
    const double tmb = rng.uniform(0, 30);
    pats.push_back({"P" + std::to_string(i), cancer_type_from_index(static_cast<int>(rng.below(7))), tmb, {},
                    binarize_label(tmb), {}, {}});
  }
  const auto a = stratified_kfold(pats, 5, 9);
  CHECK(a.fold_of == stratified_kfold(pats, 5, 9).fold_of);
  CHECK_FALSE(a.fold_of == stratified_kfold(pats, 5, 10).fold_of);
  std::set<std::size_t> seen;
  for (int f = 0; f < 5; ++f)
    for (auto i : a.members(f)) CHECK(seen.insert(i).second);
  CHECK(seen.size() == pats.size());
  const auto sizes = fold_sizes(a);
  CHECK(sizes.front() - sizes.back() <= 1);
  // every stratum is spread as evenly as possible
  std::map<std::pair<int, int>, std::vector<int>> per;
  for (std::size_t i = 0; i < pats.size(); ++i) {
    auto& v = per[{static_cast<int>(pats[i].cancer_type), static_cast<int>(pats[i].label)}];
    v.resize(5);
    ++v[a.fold_of[i]];
  }
  for (const auto& [key, counts] : per) CHECK(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()) <= 1);
}

TEST_CASE("duplicate patients are rejected") {
  auto pats = one_stratum(6);
  pats[3].patient_id = pats[1].patient_id;
  CHECK_THROWS_AS(stratified_kfold(pats, 5, 1), Error);
}

TEST_CASE("ema update edge cases and scalar arithmetic") {
  Rng rng(42);
  const ModelShape s{3, 4, 2, 1};
  const auto online = fixtures::random_params(rng, s);
  const auto shadow = fixtures::random_params(rng, s);
  CHECK(ema_update(online, shadow, 0.0) == online);
  CHECK(ema_update(online, shadow, 1.0) == shadow);
  auto a = ModelParams::zeros(s), b = ModelParams::zeros(s);
  a.head_bias(0, 0) = 2.0;
  b.head_bias(0, 0) = 1.0;
  CHECK(ema_update(a, b, 0.9).head_bias(0, 0) == doctest::Approx(1.1).epsilon(1e-15));
  CHECK_THROWS_AS(ema_update(online, ModelParams::zeros({3, 5, 2, 1}), 0.5), Error);
}

TEST_CASE("ema closed-form recurrence") {
  Rng rng(43);
  const ModelShape s{3, 4, 2, 1};
  for (double m : {0.0, 0.5, 0.99, 1.0}) {
    const auto v = fixtures::random_params(rng, s);
    const auto s0 = fixtures::random_params(rng, s);
    auto sh = s0;
    for (int t = 1; t <= 200; ++t) ema_update_in_place(v, sh, m);
    const double mt = std::pow(m, 200);
    const auto got = std::as_const(sh).tensors(), vt = v.tensors(), st = s0.tensors();
    for (std::size_t k = 0; k < got.size(); ++k)
      for (std::size_t i = 0; i < got[k].tensor->size(); ++i)
        CHECK(std::abs(got[k].tensor->data()[i] - (mt * st[k].tensor->data()[i] + (1 - mt) * vt[k].tensor->data()[i])) <= 1e-12);
  }
}

TEST_CASE("zero-parameter model has loss ln 2") {
  Rng rng(44);
  const auto g = build_knn_graph(fixtures::random_bag(rng, 9, 5), 4);
  const auto p = ModelParams::zeros({5, 4, 3, 2});
  const auto out = forward_single_scale(g, p);
  CHECK(cross_entropy(out.logits, TmbClass::High) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(validate(c));
  c.learning_rate = -1.0;
  CHECK_THROWS_AS(validate(c), Error);
  c = {};
  c.ema_momentum = 1.5;
  CHECK_THROWS_AS(validate(c), Error);
  c = {};
  c.folds = 1;
  CHECK_THROWS_AS(validate(c), Error);
}

TEST_CASE("training needs both classes") {
  auto c = separable_cohort();
  std::vector<TrainingExample> lows;
  for (const auto& ex : c.train)
    if (ex.label == TmbClass::Low) lows.push_back(ex);
  try {
    train_fold(lows, c.val, small_config(), 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Untrainable);
  }
}

TEST_CASE("learning rate zero leaves parameters unchanged") {
  auto c = separable_cohort();
  auto cfg = small_config();
  cfg.learning_rate = 0.0;
  cfg.epochs = 2;
  const auto r = train_fold(c.train, c.val, cfg, 3);
  CHECK(r.online == r.ema);
  cfg.epochs = 0;
  CHECK(train_fold(c.train, c.val, cfg, 3).online == r.online);
}

TEST_CASE("separable bags: loss falls, validation AUC is high, runs repeat bitwise") {
  auto c = separable_cohort();
  const auto cfg = small_config();
  const auto r = train_fold(c.train, c.val, cfg, 5);
  std::vector<double> train_loss;
  double last_val_auc = 0.0;
  for (const auto& row : r.log) {
    if (row.split == "train") train_loss.push_back(row.loss);
    if (row.split == "val") last_val_auc = row.auc_ema;
  }
  REQUIRE(train_loss.size() == static_cast<std::size_t>(cfg.epochs));
  for (int e = 1; e < 5; ++e) CHECK(train_loss[e] < train_loss[e - 1]);
  CHECK(last_val_auc >= 0.95);

  const auto again = train_fold(c.train, c.val, cfg, 5);
  CHECK(again.online == r.online);
  CHECK(again.ema == r.ema);
}

TEST_CASE("ensemble weights") {
  const std::vector<int> y = {0, 0, 0, 1, 1, 1};
  const std::vector<double> perfect = {0.1, 0.2, 0.3, 0.7, 0.8, 0.9};
  const std::vector<double> noise = {0.9, 0.1, 0.5, 0.4, 0.6, 0.2};
  const std::vector<double> flipped = {0.8, 0.7, 0.9, 0.2, 0.1, 0.3};

  const auto dom = fit_ensemble_weights({noise, perfect, flipped}, y);
  CHECK(dom.auc == 1.0);
  std::vector<double> mix(6);
  for (int i = 0; i < 6; ++i) mix[i] = dom.weights[0] * noise[i] + dom.weights[1] * perfect[i] + dom.weights[2] * flipped[i];
  CHECK(roc_auc(mix, y) == 1.0);

  const auto same = fit_ensemble_weights({perfect, perfect, perfect}, y);
  for (double w : same.weights) CHECK(w == doctest::Approx(1.0 / 3));

  const std::vector<int> one_class(6, 1);
  const auto degenerate = fit_ensemble_weights({perfect, noise, flipped}, one_class);
  CHECK(degenerate.warning.has_value());
  for (double w : degenerate.weights) CHECK(w == doctest::Approx(1.0 / 3));
}

TEST_CASE("ensemble weights reach the grid optimum when only a blend separates") {
  // a and b each misorder one pair; their average orders every pair.
  const std::vector<int> y = {0, 0, 1, 1};
  const std::vector<double> a = {0.1, 0.6, 0.5, 0.9};
  const std::vector<double> b = {0.6, 0.1, 0.9, 0.5};
  const std::vector<double> c = {0.5, 0.5, 0.5, 0.5};
  const auto fit = fit_ensemble_weights({a, b, c}, y);
  double best = 0.0;
  for (int i = 0; i <= 20; ++i) {
    for (int j = 0; i + j <= 20; ++j) {
      const double wa = i / 20.0, wb = j / 20.0, wc = 1.0 - wa - wb;
      std::vector<double> s(4);
      for (int k = 0; k < 4; ++k) s[k] = wa * a[k] + wb * b[k] + wc * c[k];
      best = std::max(best, roc_auc(s, y));
    }
  }
  CHECK(best == 1.0);
  CHECK(fit.auc == best);
  CHECK(roc_auc(a, y) < 1.0);
  CHECK(roc_auc(b, y) < 1.0);
}

TEST_CASE("cross validation is deterministic and predicts every patient once per scale") {
  SyntheticCohortSpec spec;
  spec.n_patients = 30;
  spec.min_tiles = 6;
  spec.max_tiles = 10;
  spec.feature_dim = 6;
  spec.seed = 8;
  const auto syn = generate_synthetic_cohort(spec);
  Cohort cohort;
  cohort.patients = syn.patients;
  for (int s = 0; s < 3; ++s)
    for (const auto& sl : syn.slides[s]) cohort.graphs[s].push_back(build_knn_graph(sl.bag, 4));
  TrainConfig cfg;
  cfg.shape = {0, 8, 4, 1};
  cfg.epochs = 2;
  cfg.seed = 2;
  cfg.folds = 3;
  const auto a = cross_validate(cohort, cfg, {true, false, true});
  const auto b = cross_validate(cohort, cfg, {true, false, true});
  REQUIRE(a.outcomes.size() == 3);
  for (std::size_t f = 0; f < 3; ++f) CHECK(a.outcomes[f].checkpoint == b.outcomes[f].checkpoint);
  std::map<std::string, int> per_scale;
  for (const auto& r : a.predictions) ++per_scale[r.scale];
  CHECK(per_scale["5"] == 30);
  CHECK(per_scale["20"] == 30);
  CHECK(per_scale["ensemble"] == 30);
  CHECK(per_scale.count("10") == 0);
  for (const auto& r : a.predictions) CHECK(a.folds.fold_of[std::stoul(r.patient_id.substr(1)) - 1] == r.fold);
}
