#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "attacks.hpp"
#include "nn.hpp"
#include "rng.hpp"

namespace soiguard {

struct LutMeta {
  std::size_t bins = 0;
  double range_lo = 0.0;
  double range_hi = 0.0;
  double smoothing = 1.0;
  std::optional<AttackSpec> builder;
};

/// Bin left edges S_0..S_n with P(clean) per bin.
struct SoIProbabilityLUT {
  std::vector<double> samples;
  std::vector<double> probs;
  LutMeta meta;
};

void validate_lut(const SoIProbabilityLUT& lut);

/// Uniform bins over [min, max] of both lists; P = (n_c + s) / (n_c + n_a + 2s).
SoIProbabilityLUT build_lut(std::span<const double> clean, std::span<const double> adv,
                            std::size_t bins = 64, double smoothing = 1.0);

struct LookupResult {
  double prob = 0.0;
  std::size_t index = 0;
  std::size_t probes = 1;  // N_X, at least one access
};

/// Entry with the largest S_k <= soi (S_0 below range); binary search.
LookupResult lookup(const SoIProbabilityLUT& lut, double soi);

/// 1 (clean) iff a uniform draw is below P_k.
int detect(const SoIProbabilityLUT& lut, double soi, Rng& rng);

/// P(clean score > adversarial score) + 0.5 P(tie).
double roc_auc(std::span<const double> clean_scores, std::span<const double> adv_scores);

std::vector<double> lut_scores(const SoIProbabilityLUT& lut, std::span<const double> soi);

enum class DetectMode { threshold, stochastic };

std::string mode_name(DetectMode m);
DetectMode mode_from_name(const std::string& s);

struct MetricOptions {
  DetectMode mode = DetectMode::threshold;
  int stochastic_repeats = 16;
  std::uint64_t seed = 0;
};

/// Mean over samples of P(accept) * [correct == want_correct].
double acceptance_metric(const SoIProbabilityLUT& lut, std::span<const double> soi,
                         std::span<const int> predictions, std::span<const int> labels,
                         bool want_correct, const MetricOptions& opt);

/// Clean inputs accepted and correctly classified.
double accuracy_metric(const ModelGraph& model, const SoIProbabilityLUT& lut, const Tensor& x,
                       std::span<const int> labels, const MetricOptions& opt = {});

/// Adversarial inputs accepted and misclassified.
double error_metric(const ModelGraph& model, const SoIProbabilityLUT& lut, const Tensor& x_adv,
                    std::span<const int> labels, const MetricOptions& opt = {});

nlohmann::json lut_to_json(const SoIProbabilityLUT& lut);
SoIProbabilityLUT lut_from_json(const nlohmann::json& j);

}  // namespace soiguard
