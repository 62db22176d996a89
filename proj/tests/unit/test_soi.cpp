#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dataset.hpp"
#include "errors.hpp"
#include "helpers.hpp"
#include "oracles.hpp"
#include "soi.hpp"

using namespace soiguard;

namespace {

Dataset tiny_set(std::size_t n, std::uint64_t seed) {
  SyntheticOptions so;
  so.classes = 2;
  so.size = 8;
  so.n_train = n;
  return make_synthetic(so, seed, false);
}

double rel(double a, double b) { return std::fabs(a - b) / std::max(std::fabs(b), 1e-300); }

}  // namespace

TEST_CASE("soi of zero weights and of cancelling weights is zero") {
  auto m = build_model({1, 8, 8}, mini_vgg_layers(2), 0, 1);
  auto& w = m.params.at("0.weight").data;
  std::fill(w.begin(), w.end(), 0.0);
  for (double s : compute_soi(m, tiny_set(4, 1).images)) CHECK(s == 0.0);

  auto d = build_model({2}, {DenseSpec{1}}, 0, 0);
  d.params.at("0.weight").data = {1.0, -1.0};
  CHECK(compute_soi(d, Tensor({1, 2}, {1.0, 1.0}))[0] == 0.0);
}

TEST_CASE("soi matches the direct-convolution oracle") {
  for (std::uint64_t s = 0; s < 12; ++s) {
    for (int bits : {0, 8}) {
      const auto m = testutil::random_model(200 + s, bits);
      const auto x = testutil::random_input(m.input_shape, 4, s);
      const auto soi = compute_soi(m, x);
      for (std::size_t i = 0; i < 4; ++i) CHECK(rel(soi[i], oracle::soi(m, x.item(i))) < 1e-12);
    }
  }
}

TEST_CASE("soi is positively homogeneous in the layer-0 weights") {
  for (int bits : {0, 8}) {
    const auto m = build_model({1, 12, 12}, mini_vgg_layers(3), bits, 5);
    const auto x = testutil::random_input({1, 12, 12}, 6, 2);
    const auto base = compute_soi(m, x);
    for (double c : {0.25, 3.0, 17.5}) {
      auto scaled = m;
      for (auto& v : scaled.params.at("0.weight").data) v *= c;
      const auto soi = compute_soi(scaled, x);
      for (std::size_t i = 0; i < soi.size(); ++i) CHECK(rel(soi[i], c * base[i]) < 1e-12);
    }
  }
}

TEST_CASE("soi perturbation bound") {
  const auto m = build_model({1, 12, 12}, mini_vgg_layers(3), 0, 6);
  const auto x = testutil::random_input({1, 12, 12}, 5, 3);
  auto p = testutil::random_input({1, 12, 12}, 5, 4);
  for (auto& v : p.data) v = 0.1 * (v - 0.5);
  Tensor xp = x;
  for (std::size_t i = 0; i < x.numel(); ++i) xp.data[i] += p.data[i];
  const auto a = compute_soi(m, x), b = compute_soi(m, xp);
  const auto wp = first_layer_mac(m, p);
  const std::size_t e = wp.item_size();
  for (std::size_t i = 0; i < 5; ++i) {
    double bound = 0.0;
    for (double v : wp.item(i)) bound += std::fabs(v);
    CHECK(std::fabs(b[i] - a[i]) <= bound / e + 1e-12);
  }
}

TEST_CASE("phase1 loss arithmetic") {
  Phase1Config cfg;
  cfg.beta = 0.0;
  const Tensor logits({1, 2}, {0.3, -0.1});
  const std::vector<int> y{0};
  const std::vector<int> adv{1}, clean{0};
  const std::vector<double> at_target{0.6}, s03{0.3};
  CHECK(phase1_loss(logits, y, at_target, adv, cfg) == 0.0);
  CHECK(phase1_loss(logits, y, s03, clean, cfg) == doctest::Approx(0.04).epsilon(1e-12));

  cfg.beta = 1e-4;
  Rng rng(3);
  Tensor z({6, 3});
  for (auto& v : z.data) v = standard_normal(rng);
  const std::vector<int> labels{0, 1, 2, 2, 1, 0}, flags{0, 1, 0, 1, 1, 0};
  std::vector<double> soi(6);
  for (auto& s : soi) s = uniform01(rng);
  double expected = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const std::vector<double> row(z.item(i).begin(), z.item(i).end());
    const double target = flags[i] ? cfg.lambda_a : cfg.lambda_c;
    expected += cfg.beta * oracle::cross_entropy(row, labels[i]) + (soi[i] - target) * (soi[i] - target);
  }
  CHECK(phase1_loss(z, labels, soi, flags, cfg) == doctest::Approx(expected / 6.0).epsilon(1e-13));
}

TEST_CASE("phase1 config validation") {
  Phase1Config cfg;
  CHECK_NOTHROW(validate_phase1(cfg));
  cfg.beta = 0.0;
  CHECK_THROWS_AS(validate_phase1(cfg), ConfigError);
  cfg.beta = 1e-2;
  CHECK_THROWS_AS(validate_phase1(cfg), ConfigError);
  cfg.beta = 1e-6;
  cfg.lambda_a = 0.05;
  CHECK_THROWS_AS(validate_phase1(cfg), ConfigError);
}

TEST_CASE("zero-epoch phases return the input model") {
  const auto data = tiny_set(32, 2);
  const auto m = build_model({1, 8, 8}, mini_vgg_layers(2), 8, 3);
  Phase1Config p1;
  p1.train.epochs = 0;
  CHECK(train_phase1(m, data, p1) == m);
  Phase2Config p2;
  p2.train.epochs = 0;
  CHECK(train_phase2(m, data, p2).params == m.params);
  CHECK(train_standard(m, data, TrainConfig{0, 0.1, 8, 0}) == m);
}

TEST_CASE("standard training separates a two-class synthetic set") {
  SyntheticOptions so;
  so.size = 8;
  so.n_train = 256;
  so.n_test = 128;
  const auto train = make_synthetic(so, 11, false), test = make_synthetic(so, 11, true);
  auto m = build_model({1, 8, 8}, mini_vgg_layers(2), 8, 4);
  m = train_standard(m, train, TrainConfig{3, 0.1, 16, 5});
  CHECK(classification_accuracy(m, test.images, test.labels) > 0.95);
  CHECK(train_standard(build_model({1, 8, 8}, mini_vgg_layers(2), 8, 4), train, TrainConfig{3, 0.1, 16, 5}) == m);
}

TEST_CASE("phase2 keeps layer 0 bit-identical") {
  const auto data = tiny_set(64, 4);
  auto m = build_model({1, 8, 8}, mini_vgg_layers(2), 8, 5);
  m = train_standard(m, data, TrainConfig{1, 0.1, 16, 1});
  Phase2Config p2;
  p2.train = TrainConfig{2, 0.1, 16, 2};
  p2.attack = make_pgd("4/255", "2/255", 3, 3);
  const auto out = train_phase2(m, data, p2);
  CHECK(out.params.at("0.weight") == m.params.at("0.weight"));
  CHECK(out.params.at("0.bias") == m.params.at("0.bias"));
  CHECK(out.params.at("7.weight") != m.params.at("7.weight"));
}

TEST_CASE("phase1 moves the soi means toward their targets") {
  const auto data = tiny_set(128, 5);
  auto m = build_model({1, 8, 8}, mini_vgg_layers(2), 0, 6);
  m = train_standard(m, data, TrainConfig{2, 0.1, 16, 1});
  Phase1Config p1;
  p1.train = TrainConfig{4, 5.0, 16, 2};
  p1.attack = make_pgd("16/255", "8/255", 3, 4);
  auto gap = [&](const ModelGraph& g) {
    const auto c = soi_distribution(g, data), a = soi_distribution(g, data, p1.attack);
    double mc = 0.0, ma = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) mc += c[i].value, ma += a[i].value;
    return (ma - mc) / static_cast<double>(c.size());
  };
  const double before = gap(m);
  const auto trained = train_phase1(m, data, p1);
  CHECK(gap(trained) > before);
}

TEST_CASE("soi distribution matches a per-sample loop") {
  const auto data = tiny_set(20, 6);
  const auto m = build_model({1, 8, 8}, mini_vgg_layers(2), 8, 7);
  const auto d = soi_distribution(m, data);
  REQUIRE(d.size() == data.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(d[i].sample_id == i);
    CHECK(d[i].value == compute_soi(m, slice_batch(data.images, i, 1))[0]);
  }
}

TEST_CASE("permutation is a seeded shuffle") {
  const auto p = permutation(100, 3);
  auto sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 100; ++i) CHECK(sorted[i] == i);
  CHECK(p == permutation(100, 3));
  CHECK(p != permutation(100, 4));
}
