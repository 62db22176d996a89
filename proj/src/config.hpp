#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "attacks.hpp"
#include "dataset.hpp"
#include "detector.hpp"
#include "energy.hpp"
#include "nn.hpp"
#include "soi.hpp"
#include "xbar.hpp"

namespace soiguard {

struct ModelConfig {
  std::vector<LayerSpec> layers;  // empty selects mini_vgg for the dataset's class count
  int quant_bits = 8;
};

struct LutConfig {
  std::size_t bins = 64;
  double smoothing = 1.0;
  AttackSpec attack = make_pgd("8/255", "4/255", 10);
};

struct EvalConfig {
  std::vector<AttackSpec> attacks;
  std::vector<DetectMode> modes{DetectMode::threshold, DetectMode::stochastic};
  int stochastic_repeats = 16;
  std::size_t calib_samples = 400;  // test-split head used to build the LUT
  std::size_t eval_samples = 400;   // following test samples used for metrics
  std::size_t plot_bins = 32;
};

struct XbarEvalConfig {
  CrossbarConfig crossbar;
  std::vector<AttackSpec> attacks;  // empty reuses eval.attacks
};

struct EnergyConfig {
  ComponentEnergies energies;
  std::optional<std::pair<std::size_t, std::size_t>> out_hw;  // overrides the layer-0 output map
  std::optional<std::size_t> n_x;                              // overrides the observed worst case
};

struct SweepConfig {
  std::string axis;
  std::vector<nlohmann::json> values;
};

struct ExperimentConfig {
  DatasetOptions dataset;
  ModelConfig model;
  std::vector<std::uint64_t> seeds{0};
  TrainConfig pretrain{3, 0.05, 32, 0};
  TrainConfig surrogate{3, 0.05, 32, 0};
  Phase1Config phase1;
  Phase2Config phase2;
  LutConfig lut;
  EvalConfig eval;
  XbarEvalConfig xbar;
  EnergyConfig energy;
  std::optional<SweepConfig> sweep;
  std::filesystem::path output_dir = "runs/default";

  nlohmann::json source;  // the parsed document, defaults filled in
};

/// Parses a config document; relative paths resolve against `base_dir`.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// FNV-1a of the canonical JSON dump, output_dir excluded.
std::string config_hash(const ExperimentConfig& cfg);
std::string json_hash(const nlohmann::json& j);

TrainConfig train_from_json(const nlohmann::json& j, const TrainConfig& defaults);
nlohmann::json train_to_json(const TrainConfig& t);

}  // namespace soiguard
