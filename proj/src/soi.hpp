#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attacks.hpp"
#include "dataset.hpp"
#include "nn.hpp"

namespace soiguard {

struct SoIValue {
  double value = 0.0;
  std::size_t sample_id = 0;
};

/// Mean |z| over the layer-0 weighted sums of each sample (bias excluded).
std::vector<double> compute_soi(const ModelGraph& model, const Tensor& x);

struct TrainConfig {
  int epochs = 1;
  double lr = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct Phase1Config {
  double lambda_c = 0.1;
  double lambda_a = 0.6;
  double beta = 1e-6;
  TrainConfig train;
  AttackSpec attack = make_pgd("16/255", "8/255", 10);
};

struct Phase2Config {
  TrainConfig train;
  AttackSpec attack = make_pgd("4/255", "2/255", 10);
};

void validate_train(const TrainConfig& cfg);
void validate_phase1(const Phase1Config& cfg);

/// Batch mean of beta*CE + y*(soi - lambda_a)^2 + (1-y)*(soi - lambda_c)^2.
double phase1_loss(const Tensor& logits, std::span<const int> labels,
                   std::span<const double> soi, std::span<const int> is_adv,
                   const Phase1Config& cfg);

LossSpec phase1_loss_spec(const Phase1Config& cfg);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Plain cross-entropy training.
ModelGraph train_standard(ModelGraph model, const Dataset& data, const TrainConfig& cfg,
                          const EpochCallback& on_epoch = {});

/// Adversarial half generated once against `pretrained`; every layer trainable.
ModelGraph train_phase1(const ModelGraph& pretrained, const Dataset& data,
                        const Phase1Config& cfg, const EpochCallback& on_epoch = {});

/// Layer 0 frozen; adversarial examples regenerated per batch against the
/// current model.
ModelGraph train_phase2(ModelGraph model, const Dataset& data, const Phase2Config& cfg,
                        const EpochCallback& on_epoch = {});

/// Per-sample SoI, after applying `attack` when given.
std::vector<SoIValue> soi_distribution(const ModelGraph& model, const Dataset& data,
                                       const std::optional<AttackSpec>& attack = std::nullopt,
                                       const ModelGraph* surrogate = nullptr);

double classification_accuracy(const ModelGraph& model, const Tensor& x,
                               std::span<const int> labels);

/// Attack the whole dataset in chunks; sample seeds follow the global index.
Tensor attack_dataset(const ModelGraph& target, const ModelGraph* surrogate,
                      const Dataset& data, const AttackSpec& spec);

/// Seeded Fisher-Yates permutation of [0, n).
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed);

}  // namespace soiguard
