#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"

namespace soiguard {

/// Error raised by a pipeline stage; what() starts with "stage <name>: ".
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& msg)
      : std::runtime_error("stage " + stage + ": " + msg), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

using Logger = std::function<void(const std::string& stage, const std::string& msg)>;

struct MetricRow {
  std::string attack;
  std::string eps;
  std::string alpha;
  std::string n;
  double roc_auc = 0.0;
  double accuracy = 0.0;
  double error = 0.0;
  DetectMode mode = DetectMode::threshold;
  double soi_auc = 0.0;  // raw SoI as the score, adversarial = larger
  double mean_soi_clean = 0.0;
  double mean_soi_adv = 0.0;
  double adv_accuracy = 0.0;
};

struct XbarReport {
  std::vector<MetricRow> rows;
  double max_rel_error = 0.0;   // max |Z_hw - Z_sw| / max |Z_sw| over evaluated clean samples
  double mean_abs_error = 0.0;  // mean |Z_hw - Z_sw|
  std::size_t cycles_per_soi = 0;
};

enum class Stage { pretrain, surrogate, phase1, phase2 };
std::string stage_name(Stage s);

/// Everything one seed of an experiment needs. Artifacts are cached in memory
/// and, when a run directory is given, on disk.
class RunContext {
 public:
  RunContext(ExperimentConfig cfg, std::uint64_t seed, std::optional<std::filesystem::path> dir,
             Logger log = {});

  const ExperimentConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  const std::optional<std::filesystem::path>& dir() const { return dir_; }

  const DataSplit& data();
  const Dataset& calib_set();
  const Dataset& eval_set();

  /// Trains or loads (with hash check) the model of a stage.
  const ModelGraph& model(Stage s);
  /// Installs a model for a stage, e.g. one shared from another context.
  void adopt(Stage s, ModelGraph m);
  std::string stage_hash(Stage s) const;

  /// Attack seeds are derived from the run seed and the spec's own seed.
  AttackSpec seeded(const AttackSpec& spec) const;

  /// Adversarial version of `data` against the model of stage `target`; cached.
  const Tensor& adversarial(Stage target, const Dataset& data, const std::string& split,
                            const AttackSpec& spec);

  /// LUT from calibration SoIs of `target`, D_a from cfg.lut.attack.
  SoIProbabilityLUT build_lut(Stage target);
  const SoIProbabilityLUT& lut();
  void adopt_lut(SoIProbabilityLUT lut);

  /// Detection metrics for `target` with `lut`; rows = attacks x modes.
  std::vector<MetricRow> evaluate(Stage target, const SoIProbabilityLUT& lut,
                                  const std::vector<AttackSpec>& attacks, bool write_files);
  std::vector<MetricRow> evaluate();

  XbarReport simulate_xbar(const CrossbarConfig& xcfg, const std::vector<AttackSpec>& attacks,
                           bool write_files);
  XbarReport simulate_xbar();

  EnergyReport energy(bool write_files);

  /// Generates every eval attack against the final model; writes attacks.csv
  /// (attack, eps, alpha, n, clean_accuracy, adv_accuracy, max_linf, mean_soi_adv).
  std::string attack_summary(bool write_files);

  /// pretrain -> phase1 -> phase2 -> LUT -> evaluate -> crossbar -> energy.
  std::vector<MetricRow> run_pipeline();

  std::string provenance_line() const;

 private:
  void log(const std::string& stage, const std::string& msg) const;
  ModelGraph train_stage(Stage s);
  void write_text(const std::string& name, const std::string& content) const;

  ExperimentConfig cfg_;
  std::uint64_t seed_;
  std::optional<std::filesystem::path> dir_;
  Logger log_;
  std::string config_hash_;
  std::optional<DataSplit> data_;
  std::optional<Dataset> calib_, eval_;
  std::map<Stage, ModelGraph> models_;
  std::map<std::string, Tensor> adv_cache_;
  std::optional<SoIProbabilityLUT> lut_;
};

/// Runs `fn`, converting any exception into a StageError naming `stage`.
template <class Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

std::string metrics_csv(const std::vector<MetricRow>& rows, const std::string& provenance);

/// Directory of seed `seed`: `out` itself for single-seed configs.
std::filesystem::path seed_dir(const ExperimentConfig& cfg, std::uint64_t seed);

struct SweepRow {
  std::uint64_t seed = 0;
  std::string value;
  MetricRow metrics;
};

const std::vector<std::string>& sweep_axes();

/// One evaluation per axis value and seed; returns the consolidated rows and
/// writes sweep_<axis>.csv under the output directory.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::string& axis,
                                const std::vector<nlohmann::json>& values, Logger log = {});

}  // namespace soiguard
