#include "soi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "errors.hpp"
#include "rng.hpp"

namespace soiguard {

namespace {

constexpr std::size_t kChunk = 128;

std::vector<int> slice_labels(std::span<const int> labels, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(labels[i]);
  return out;
}

void check_finite_epoch(double loss, const char* phase, int epoch) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string(phase) + " diverged at epoch " + std::to_string(epoch));
  }
}

}  // namespace

std::vector<double> compute_soi(const ModelGraph& model, const Tensor& x) {
  const auto mac = first_layer_mac(model, x);
  std::vector<double> out(x.shape[0]);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (double z : mac.item(i)) s += std::abs(z);
    out[i] = s / static_cast<double>(mac.item_size());
  }
  return out;
}

void validate_train(const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("lr must be > 0");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be > 0");
}

void validate_phase1(const Phase1Config& cfg) {
  validate_train(cfg.train);
  validate_attack(cfg.attack);
  if (!(cfg.lambda_a > cfg.lambda_c && cfg.lambda_c >= 0.0)) {
    throw ConfigError("phase1 needs lambda_a > lambda_c >= 0");
  }
  if (!(cfg.beta > 0.0 && cfg.beta <= 1e-3)) throw ConfigError("phase1 beta must lie in (0, 1e-3]");
}

LossSpec phase1_loss_spec(const Phase1Config& cfg) {
  return {LossKind::phase1, cfg.beta, cfg.lambda_c, cfg.lambda_a, Reduction::mean};
}

double phase1_loss(const Tensor& logits, std::span<const int> labels,
                   std::span<const double> soi, std::span<const int> is_adv,
                   const Phase1Config& cfg) {
  const std::size_t b = logits.shape.at(0);
  if (labels.size() != b || soi.size() != b || is_adv.size() != b || b == 0) {
    throw ConfigError("phase1_loss: batch sizes disagree");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const auto row = logits.item(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double z : row) sum += std::exp(z - mx);
    const double ce = mx + std::log(sum) - row[static_cast<std::size_t>(labels[i])];
    const double y = is_adv[i] ? 1.0 : 0.0;
    total += cfg.beta * ce + y * (soi[i] - cfg.lambda_a) * (soi[i] - cfg.lambda_a) +
             (1.0 - y) * (soi[i] - cfg.lambda_c) * (soi[i] - cfg.lambda_c);
  }
  return total / static_cast<double>(b);
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(p[i - 1], p[std::min(j, i - 1)]);
  }
  return p;
}

ModelGraph train_standard(ModelGraph model, const Dataset& data, const TrainConfig& cfg,
                          const EpochCallback& on_epoch) {
  validate_train(cfg);
  const LossSpec ce{};
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto order = permutation(data.size(), derive_seed(cfg.seed, static_cast<std::uint64_t>(e)));
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + s, std::min(cfg.batch_size, order.size() - s));
      const auto x = gather_batch(data.images, idx);
      const auto y = slice_labels(data.labels, idx);
      const auto g = backward(model, x, y, ce);
      sgd_step(model, g.param_grads, cfg.lr);
      sum += g.loss_value;
      ++batches;
    }
    const double mean = batches ? sum / static_cast<double>(batches) : 0.0;
    check_finite_epoch(mean, "pretrain", e);
    if (on_epoch) on_epoch({e, mean});
  }
  return model;
}

Tensor attack_dataset(const ModelGraph& target, const ModelGraph* surrogate,
                      const Dataset& data, const AttackSpec& spec) {
  Tensor out(data.images.shape);
  for (std::size_t s = 0; s < data.size(); s += kChunk) {
    const auto n = std::min(kChunk, data.size() - s);
    const auto x = slice_batch(data.images, s, n);
    const std::span<const int> y(data.labels.data() + s, n);
    const auto adv = run_attack(target, surrogate, x, y, spec, s);
    std::copy(adv.data.begin(), adv.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(s * data.images.item_size()));
  }
  return out;
}

ModelGraph train_phase1(const ModelGraph& pretrained, const Dataset& data,
                        const Phase1Config& cfg, const EpochCallback& on_epoch) {
  validate_phase1(cfg);
  ModelGraph model = pretrained;
  if (cfg.train.epochs == 0) return model;
  model.frozen.clear();
  const auto adv = attack_dataset(pretrained, nullptr, data, cfg.attack);

  const std::size_t n = data.size();
  const std::size_t item = data.images.item_size();
  Shape shape = data.images.shape;
  shape[0] = 2 * n;
  Tensor mixed(shape);
  std::copy(data.images.data.begin(), data.images.data.end(), mixed.data.begin());
  std::copy(adv.data.begin(), adv.data.end(), mixed.data.begin() + static_cast<std::ptrdiff_t>(n * item));
  std::vector<int> labels(data.labels);
  labels.insert(labels.end(), data.labels.begin(), data.labels.end());
  std::vector<int> flags(2 * n, 0);
  std::fill(flags.begin() + static_cast<std::ptrdiff_t>(n), flags.end(), 1);

  const auto loss = phase1_loss_spec(cfg);
  for (int e = 0; e < cfg.train.epochs; ++e) {
    const auto order = permutation(2 * n, derive_seed(cfg.train.seed, static_cast<std::uint64_t>(e)));
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += cfg.train.batch_size) {
      const std::span<const std::size_t> idx(order.data() + s,
                                             std::min(cfg.train.batch_size, order.size() - s));
      const auto x = gather_batch(mixed, idx);
      const auto y = slice_labels(labels, idx);
      const auto f = slice_labels(flags, idx);
      const auto g = backward(model, x, y, loss, f);
      sgd_step(model, g.param_grads, cfg.train.lr);
      sum += g.loss_value;
      ++batches;
    }
    const double mean = sum / static_cast<double>(batches);
    check_finite_epoch(mean, "phase1", e);
    if (on_epoch) on_epoch({e, mean});
  }
  return model;
}

ModelGraph train_phase2(ModelGraph model, const Dataset& data, const Phase2Config& cfg,
                        const EpochCallback& on_epoch) {
  validate_train(cfg.train);
  validate_attack(cfg.attack);
  model.frozen.insert(0);
  const LossSpec ce{};
  const std::size_t item = data.images.item_size();
  for (int e = 0; e < cfg.train.epochs; ++e) {
    const auto order = permutation(data.size(), derive_seed(cfg.train.seed, static_cast<std::uint64_t>(e)));
    AttackSpec spec = cfg.attack;
    spec.seed = derive_seed(cfg.attack.seed, 0x1000u + static_cast<std::uint64_t>(e));
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += cfg.train.batch_size) {
      const std::span<const std::size_t> idx(order.data() + s,
                                             std::min(cfg.train.batch_size, order.size() - s));
      const auto x = gather_batch(data.images, idx);
      const auto y = slice_labels(data.labels, idx);
      const auto adv = run_attack(model, nullptr, x, y, spec, s);
      Shape shape = x.shape;
      shape[0] *= 2;
      Tensor both(shape);
      std::copy(x.data.begin(), x.data.end(), both.data.begin());
      std::copy(adv.data.begin(), adv.data.end(),
                both.data.begin() + static_cast<std::ptrdiff_t>(idx.size() * item));
      std::vector<int> yy(y);
      yy.insert(yy.end(), y.begin(), y.end());
      const auto g = backward(model, both, yy, ce);
      sgd_step(model, g.param_grads, cfg.train.lr);
      sum += g.loss_value;
      ++batches;
    }
    const double mean = batches ? sum / static_cast<double>(batches) : 0.0;
    check_finite_epoch(mean, "phase2", e);
    if (on_epoch) on_epoch({e, mean});
  }
  return model;
}

std::vector<SoIValue> soi_distribution(const ModelGraph& model, const Dataset& data,
                                       const std::optional<AttackSpec>& attack,
                                       const ModelGraph* surrogate) {
  if (data.size() == 0) throw ConfigError("soi_distribution: empty dataset");
  const Tensor x = attack ? attack_dataset(model, surrogate, data, *attack) : data.images;
  const auto soi = compute_soi(model, x);
  std::vector<SoIValue> out(soi.size());
  for (std::size_t i = 0; i < soi.size(); ++i) out[i] = {soi[i], i};
  return out;
}

double classification_accuracy(const ModelGraph& model, const Tensor& x,
                               std::span<const int> labels) {
  if (labels.empty()) throw ConfigError("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t s = 0; s < labels.size(); s += kChunk) {
    const auto n = std::min(kChunk, labels.size() - s);
    const auto pred = predict(model, slice_batch(x, s, n));
    for (std::size_t i = 0; i < n; ++i) hits += pred[i] == labels[s + i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace soiguard
