#include <doctest.h>

#include <cmath>

#include "attacks.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "helpers.hpp"
#include "soi.hpp"

using namespace soiguard;

namespace {

double linf(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

bool in_unit_box(const Tensor& t) {
  for (double v : t.data)
    if (!(v >= 0.0 && v <= 1.0)) return false;
  return true;
}

struct Trained {
  ModelGraph model;
  Dataset data;
};

const Trained& trained_pair() {
  static const Trained t = [] {
    SyntheticOptions so;
    so.classes = 3;
    so.size = 10;
    so.n_train = 300;
    so.n_test = 100;
    const auto train = make_synthetic(so, 3, false);
    auto m = build_model({1, 10, 10}, mini_vgg_layers(3), 0, 1);
    m = train_standard(m, train, TrainConfig{4, 0.1, 32, 2});
    return Trained{m, make_synthetic(so, 3, true)};
  }();
  return t;
}

}  // namespace

TEST_CASE("fraction parsing keeps the written form") {
  const auto r = Ratio::parse("8/255");
  CHECK(r.value == 8.0 / 255.0);
  CHECK(r.text == "8/255");
  CHECK(Ratio::parse("0.5/255").value == 0.5 / 255.0);
  CHECK(Ratio::parse("0.25").value == 0.25);
  CHECK_THROWS_AS(Ratio::parse("8/"), ConfigError);
  CHECK_THROWS_AS(Ratio::parse("x"), ConfigError);
  CHECK_THROWS_AS(Ratio::parse("1/0"), ConfigError);
}

TEST_CASE("attack spec validation and JSON round trip") {
  CHECK_THROWS_AS(validate_attack(make_pgd("4/255", "8/255", 10)), ConfigError);
  CHECK_THROWS_AS(validate_attack(make_pgd("4/255", "2/255", 0)), ConfigError);
  CHECK_THROWS_AS(validate_attack(make_fgsm("0")), ConfigError);
  const auto s = make_pgd("16/255", "8/255", 10, 42);
  const auto j = attack_to_json(s);
  CHECK(j.at("eps") == "16/255");
  CHECK(attack_from_json(j) == s);
  CHECK(attack_label(s) == "pgd[16/255,8/255,10]");
  CHECK_THROWS_AS(attack_from_json({{"family", "pgd"}, {"eps", "8/255"}, {"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(attack_from_json({{"family", "cw"}, {"eps", "8/255"}}), ConfigError);
}

TEST_CASE("fgsm moves each pixel by eps in the gradient sign") {
  // Single input pixel feeding a 2-class dense layer: dCE/dx = w_other - w_label weighted by softmax.
  auto m = build_model({1}, {DenseSpec{2}}, 0, 0);
  m.params.at("0.weight").data = {-1.0, 1.0};
  m.params.at("0.bias").data = {0.0, 0.0};
  const Tensor x({1, 1}, {0.5});
  const std::vector<int> y{0};
  const auto adv = fgsm(m, x, y, 8.0 / 255.0);
  CHECK(adv.data[0] == 0.5 + 8.0 / 255.0);

  auto flat = m;
  flat.params.at("0.weight").data = {0.0, 0.0};
  CHECK(fgsm(flat, x, y, 8.0 / 255.0) == x);
}

TEST_CASE("fgsm and pgd respect the budget and the pixel domain") {
  const auto& t = trained_pair();
  for (const auto& spec : {make_pgd("16/255", "8/255", 5, 1), make_pgd("3/255", "0.5/255", 7, 2),
                           make_pgd("32/255", "32/255", 2, 3)}) {
    const auto adv = pgd(t.model, t.data.images, t.data.labels, spec);
    CHECK(linf(adv, t.data.images) <= spec.eps.value + std::ldexp(1.0, -40));
    CHECK(in_unit_box(adv));
    CHECK(adv == pgd(t.model, t.data.images, t.data.labels, spec));
  }
  const auto f = fgsm(t.model, t.data.images, t.data.labels, 0.1);
  CHECK(linf(f, t.data.images) <= 0.1);
  CHECK(in_unit_box(f));
}

TEST_CASE("pgd with one step, alpha = eps and zero start equals fgsm bit for bit") {
  const auto& t = trained_pair();
  const auto spec = make_pgd("8/255", "8/255", 1);
  const auto p = pgd(t.model, t.data.images, t.data.labels, spec, PgdStart::zero);
  CHECK(p == fgsm(t.model, t.data.images, t.data.labels, spec.eps.value));
}

TEST_CASE("pgd increases the loss on most samples of a trained model") {
  const auto& t = trained_pair();
  const auto adv = pgd(t.model, t.data.images, t.data.labels, make_pgd("8/255", "2/255", 10, 5));
  std::size_t up = 0;
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    const std::vector<int> y{t.data.labels[i]};
    const double before = loss_value(t.model, slice_batch(t.data.images, i, 1), y, LossSpec{});
    const double after = loss_value(t.model, slice_batch(adv, i, 1), y, LossSpec{});
    up += after >= before;
  }
  CHECK(up * 10 >= t.data.size() * 9);
}

TEST_CASE("gaussian patch geometry and locality") {
  const Tensor x({2, 3, 32, 32}, 0.5);
  auto spec = AttackSpec{};
  spec.family = AttackFamily::gaussian_patch;
  spec.sigma_noise = 0.5;
  spec.seed = 9;
  for (double frac : {0.25, 0.5, 1.0}) {
    spec.frac_volume = frac;
    const auto noisy = gaussian_patch(x, spec);
    CHECK(in_unit_box(noisy));
    for (std::size_t i = 0; i < 2; ++i) {
      std::size_t changed = 0;
      for (std::size_t k = 0; k < 3072; ++k) changed += noisy.item(i)[k] != 0.5;
      const double ratio = changed / 3072.0;
      CHECK(ratio >= frac - 0.05);
      CHECK(ratio <= frac + 0.05);
    }
  }
  const auto d = patch_dims({3, 32, 32}, 0.25);
  CHECK(static_cast<double>(d.volume()) / 3072.0 == doctest::Approx(0.25).epsilon(0.2));
  spec.sigma_noise = 0.0;
  CHECK(gaussian_patch(x, spec) == x);
  spec.frac_volume = 1e-6;
  CHECK_THROWS_AS(gaussian_patch(x, spec), ConfigError);
}

TEST_CASE("black-box attacks transfer and reduce to white-box for the same model") {
  const auto& t = trained_pair();
  auto spec = make_pgd("16/255", "4/255", 10, 8);
  CHECK_THROWS_AS(blackbox_attack(nullptr, t.data.images, t.data.labels, spec), ConfigError);
  CHECK(blackbox_attack(&t.model, t.data.images, t.data.labels, spec) ==
        pgd(t.model, t.data.images, t.data.labels, spec));

  SyntheticOptions so;
  so.classes = 3;
  so.size = 10;
  so.n_train = 300;
  auto surrogate = build_model({1, 10, 10}, mini_vgg_layers(3), 0, 77);
  surrogate = train_standard(surrogate, make_synthetic(so, 3, false), TrainConfig{4, 0.1, 32, 78});
  spec.eps = Ratio::parse("64/255");
  spec.alpha = Ratio::parse("16/255");
  spec.surrogate = true;
  const auto adv = run_attack(t.model, &surrogate, t.data.images, t.data.labels, spec);
  CHECK(linf(adv, t.data.images) <= spec.eps.value + std::ldexp(1.0, -40));
  CHECK(classification_accuracy(t.model, adv, t.data.labels) <
        classification_accuracy(t.model, t.data.images, t.data.labels));
}
