#include <doctest/doctest.h>

#include <cmath>
#include <numeric>
#include <utility>

#include "oracle/oracle.hpp"
#include "sgmil/error.hpp"
#include "sgmil/model.hpp"
#include "sgmil/rng.hpp"
#include "support/fixtures.hpp"

using namespace sgmil;

TEST_CASE("forward matches the scalar oracle") {
  Rng rng(31);
  for (int c = 0; c < 20; ++c) {
    const std::size_t n = 1 + rng.below(25);
    const auto g = build_knn_graph(fixtures::random_bag(rng, n, 1 + rng.below(20), 8), 1 + static_cast<int>(rng.below(8)));
    auto p = fixtures::random_params(rng, {g.bag.dim, 4 + rng.below(12), 2 + rng.below(8), 1 + rng.below(3)});
    const auto lib = forward_single_scale(g, p);
    const auto ref = oracle::forward(g.bag, g.edges, p);
    for (int k = 0; k < 2; ++k) CHECK(lib.logits[k] == doctest::Approx(ref.logits[k]).epsilon(1e-12));
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(lib.attention[i] - ref.alpha[i]) < 1e-12);
  }
}

TEST_CASE("attention is a probability vector and probability matches logits") {
  Rng rng(32);
  for (int c = 0; c < 20; ++c) {
    const auto g = build_knn_graph(fixtures::random_bag(rng, 1 + rng.below(30), 6), 8);
    const auto p = fixtures::random_params(rng, {6, 8, 4, 2});
    const auto out = forward_single_scale(g, p);
    CHECK(std::accumulate(out.attention.begin(), out.attention.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    for (double a : out.attention) CHECK(a >= 0.0);
    CHECK(out.prob_high == doctest::Approx(1.0 / (1.0 + std::exp(out.logits[0] - out.logits[1]))));
  }
}

TEST_CASE("single-node bag pools that node") {
  Rng rng(33);
  const auto g = build_knn_graph(fixtures::random_bag(rng, 1, 5), 8);
  const auto p = fixtures::random_params(rng, {5, 6, 3, 2});
  const auto out = forward_single_scale(g, p);
  CHECK(out.attention == std::vector<double>{1.0});
}

TEST_CASE("node permutation leaves logits unchanged and permutes attention") {
  Rng rng(34);
  for (int c = 0; c < 30; ++c) {
    const std::size_t n = 1 + rng.below(30);
    const auto g = build_knn_graph(fixtures::random_bag(rng, n, 8, 10), 8);
    const auto p = fixtures::random_params(rng, {8, 8, 4, 2});
    const auto perm = fixtures::random_permutation(rng, n);
    const auto a = forward_single_scale(g, p);
    const auto b = forward_single_scale(fixtures::permute_graph(g, perm), p);
    for (int k = 0; k < 2; ++k) CHECK(std::abs(a.logits[k] - b.logits[k]) < 1e-9);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(a.attention[i] - b.attention[perm[i]]) < 1e-12);
  }
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(35);
  for (int c = 0; c < 5; ++c) {
    const auto g = build_knn_graph(fixtures::random_bag(rng, 2 + rng.below(8), 16, 6), 3);
    auto p = fixtures::random_params(rng, {16, 6, 4, 2});
    const auto label = c % 2 ? TmbClass::High : TmbClass::Low;
    const auto grads = backward_single_scale(g, p, label);
    const auto ga = grads.tensors();
    auto tensors = p.tensors();
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      double diff2 = 0.0, norm2 = 0.0;
      for (std::size_t i = 0; i < tensors[k].tensor->size(); ++i) {
        double& v = tensors[k].tensor->data()[i];
        const double keep = v, h = 1e-6;
        v = keep + h;
        const double up = cross_entropy(forward_single_scale(g, p).logits, label);
        v = keep - h;
        const double down = cross_entropy(forward_single_scale(g, p).logits, label);
        v = keep;
        const double num = (up - down) / (2 * h), an = ga[k].tensor->data()[i];
        diff2 += (an - num) * (an - num);
        norm2 += std::max(an * an, num * num);
      }
      INFO(tensors[k].name);
      CHECK(std::sqrt(diff2) / std::max(std::sqrt(norm2), 1e-6) < 1e-4);
    }
  }
}

TEST_CASE("weighted accumulation scales the gradient") {
  Rng rng(36);
  const auto g = build_knn_graph(fixtures::random_bag(rng, 6, 4), 3);
  const auto p = fixtures::random_params(rng, {4, 4, 3, 1});
  const auto unit = backward_single_scale(g, p, TmbClass::High);
  auto acc = ModelParams::zeros(p.shape);
  const auto res = accumulate_gradients(g, p, TmbClass::High, 2.5, acc);
  CHECK(res.loss == doctest::Approx(2.5 * cross_entropy(res.output.logits, TmbClass::High)));
  const auto a = std::as_const(acc).tensors(), u = unit.tensors();
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].tensor->size(); ++i)
      CHECK(a[k].tensor->data()[i] == doctest::Approx(2.5 * u[k].tensor->data()[i]).epsilon(1e-12));
}

TEST_CASE("cross entropy and softmax") {
  const std::array<double, 2> logits = {0.0, std::log(3.0)};
  CHECK(softmax2(logits)[1] == doctest::Approx(0.75));
  CHECK(cross_entropy(logits, TmbClass::High) == doctest::Approx(-std::log(0.75)));
  CHECK(cross_entropy(logits, TmbClass::Low) == doctest::Approx(-std::log(0.25)));
  const std::array<double, 2> big = {0.0, 1000.0};
  CHECK(std::isfinite(cross_entropy(big, TmbClass::Low)));
  CHECK(cross_entropy(big, TmbClass::Low) == doctest::Approx(1000.0));
}

TEST_CASE("class token changes the logits only through the head") {
  Rng rng(37);
  auto bag = fixtures::random_bag(rng, 5, 4);
  const auto p = fixtures::random_params(rng, {4, 4, 3, 1});
  bag.cancer_type = CancerType::COAD;
  const auto a = forward_single_scale(build_knn_graph(bag, 3), p);
  bag.cancer_type = CancerType::UCEC;
  const auto b = forward_single_scale(build_knn_graph(bag, 3), p);
  CHECK(a.attention == b.attention);
  CHECK(a.logits != b.logits);
}

TEST_CASE("tile probabilities are per-node head outputs") {
  Rng rng(38);
  const auto g = build_knn_graph(fixtures::random_bag(rng, 7, 4), 3);
  const auto p = fixtures::random_params(rng, {4, 4, 3, 1});
  const auto t = tile_probabilities(g, p);
  REQUIRE(t.size() == 7);
  for (double v : t) CHECK((v > 0.0 && v < 1.0));
}

TEST_CASE("ensemble is a renormalised convex combination") {
  CHECK(multiscale_ensemble({0.2, 0.4, 0.9}, {1.0 / 3, 1.0 / 3, 1.0 / 3}) == doctest::Approx(0.5));
  CHECK(multiscale_ensemble({0.2, std::nullopt, 0.8}, {0.5, 0.3, 0.2}) == doctest::Approx((0.5 * 0.2 + 0.2 * 0.8) / 0.7));
  CHECK(multiscale_ensemble({std::nullopt, 0.6, std::nullopt}, {1.0, 0.0, 0.0}) == doctest::Approx(0.6));
}

TEST_CASE("shape and dimension errors") {
  CHECK_THROWS_AS(ModelParams::zeros({0, 4, 4, 1}), Error);
  Rng rng(39);
  const auto g = build_knn_graph(fixtures::random_bag(rng, 3, 5), 2);
  const auto p = ModelParams::initialize({4, 4, 3, 1}, 1);
  CHECK_THROWS_AS(forward_single_scale(g, p), Error);
}

TEST_CASE("initialisation is seeded") {
  const ModelShape s{6, 8, 4, 2};
  CHECK(ModelParams::initialize(s, 5) == ModelParams::initialize(s, 5));
  CHECK_FALSE(ModelParams::initialize(s, 5) == ModelParams::initialize(s, 6));
  CHECK(ModelParams::initialize(s, 5).parameter_count() ==
        6 * 8 + 8 + 2 * (8 + 8 + 64 + 8) + 8 * 4 * 2 + 4 + 7 * 8 + 8 + 16 * 2 + 2);
}
