#include "detector.hpp"

#include <algorithm>
#include <cmath>

#include "errors.hpp"
#include "soi.hpp"

namespace soiguard {

void validate_lut(const SoIProbabilityLUT& lut) {
  if (lut.samples.empty()) throw ConfigError("LUT has no entries");
  if (lut.samples.size() != lut.probs.size()) throw ConfigError("LUT samples/probs length differ");
  for (std::size_t k = 0; k < lut.samples.size(); ++k) {
    if (!std::isfinite(lut.samples[k])) throw ConfigError("LUT sample is not finite");
    if (k > 0 && !(lut.samples[k] > lut.samples[k - 1])) {
      throw ConfigError("LUT samples are not strictly increasing at index " + std::to_string(k));
    }
    if (!(lut.probs[k] >= 0.0 && lut.probs[k] <= 1.0)) {
      throw ConfigError("LUT probability outside [0,1] at index " + std::to_string(k));
    }
  }
}

SoIProbabilityLUT build_lut(std::span<const double> clean, std::span<const double> adv,
                            std::size_t bins, double smoothing) {
  if (clean.empty() || adv.empty()) throw ConfigError("build_lut needs non-empty D_c and D_a");
  if (bins < 8) throw ConfigError("build_lut needs at least 8 bins");
  if (!(smoothing >= 0.0)) throw ConfigError("smoothing must be >= 0");
  double lo = clean[0], hi = clean[0];
  for (auto list : {clean, adv}) {
    for (double v : list) {
      if (!std::isfinite(v)) throw NumericError("non-finite SoI in build_lut");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(hi > lo)) throw ConfigError("degenerate SoI range: every value equals " + std::to_string(lo));

  const double width = (hi - lo) / static_cast<double>(bins);
  auto bin_of = [&](double v) {
    const auto k = static_cast<std::size_t>((v - lo) / width);
    return std::min(k, bins - 1);
  };
  std::vector<double> nc(bins, 0.0), na(bins, 0.0);
  for (double v : clean) nc[bin_of(v)] += 1.0;
  for (double v : adv) na[bin_of(v)] += 1.0;

  SoIProbabilityLUT lut;
  lut.meta = {bins, lo, hi, smoothing, std::nullopt};
  lut.samples.resize(bins);
  lut.probs.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    lut.samples[k] = lo + width * static_cast<double>(k);
    const double den = nc[k] + na[k] + 2.0 * smoothing;
    lut.probs[k] = den > 0.0 ? (nc[k] + smoothing) / den : 0.5;
  }
  validate_lut(lut);
  return lut;
}

LookupResult lookup(const SoIProbabilityLUT& lut, double soi) {
  // Count the entries S_1..S_n that are <= soi.
  std::size_t lo = 1, len = lut.samples.size() - 1, probes = 0;
  while (len > 0) {
    const std::size_t half = len / 2;
    ++probes;
    if (lut.samples[lo + half] <= soi) {
      lo += half + 1;
      len -= half + 1;
    } else {
      len = half;
    }
  }
  const std::size_t k = lo - 1;
  return {lut.probs[k], k, std::max<std::size_t>(probes, 1)};
}

int detect(const SoIProbabilityLUT& lut, double soi, Rng& rng) {
  return uniform01(rng) < lookup(lut, soi).prob ? 1 : 0;
}

double roc_auc(std::span<const double> clean_scores, std::span<const double> adv_scores) {
  if (clean_scores.empty() || adv_scores.empty()) throw ConfigError("roc_auc needs two non-empty lists");
  std::vector<double> adv(adv_scores.begin(), adv_scores.end());
  std::sort(adv.begin(), adv.end());
  // Twice the win count plus ties, kept integral.
  unsigned long long twice = 0;
  for (double c : clean_scores) {
    const auto below = std::lower_bound(adv.begin(), adv.end(), c) - adv.begin();
    const auto upto = std::upper_bound(adv.begin(), adv.end(), c) - adv.begin();
    twice += 2ULL * static_cast<unsigned long long>(below) +
             static_cast<unsigned long long>(upto - below);
  }
  return static_cast<double>(twice) /
         (2.0 * static_cast<double>(clean_scores.size()) * static_cast<double>(adv.size()));
}

std::vector<double> lut_scores(const SoIProbabilityLUT& lut, std::span<const double> soi) {
  std::vector<double> out(soi.size());
  for (std::size_t i = 0; i < soi.size(); ++i) out[i] = lookup(lut, soi[i]).prob;
  return out;
}

std::string mode_name(DetectMode m) { return m == DetectMode::threshold ? "threshold" : "stochastic"; }

DetectMode mode_from_name(const std::string& s) {
  if (s == "threshold") return DetectMode::threshold;
  if (s == "stochastic") return DetectMode::stochastic;
  throw ConfigError("unknown detection mode '" + s + "'");
}

double acceptance_metric(const SoIProbabilityLUT& lut, std::span<const double> soi,
                         std::span<const int> predictions, std::span<const int> labels,
                         bool want_correct, const MetricOptions& opt) {
  if (soi.empty()) throw ConfigError("detection metric over an empty set");
  if (predictions.size() != soi.size() || labels.size() != soi.size()) {
    throw ConfigError("detection metric: list sizes disagree");
  }
  if (opt.mode == DetectMode::stochastic && opt.stochastic_repeats < 1) {
    throw ConfigError("stochastic_repeats must be >= 1");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < soi.size(); ++i) {
    if ((predictions[i] == labels[i]) != want_correct) continue;
    const double p = lookup(lut, soi[i]).prob;
    if (opt.mode == DetectMode::threshold) {
      total += p > 0.5 ? 1.0 : 0.0;
    } else {
      Rng rng(opt.seed ^ static_cast<std::uint64_t>(i));
      int accepted = 0;
      for (int r = 0; r < opt.stochastic_repeats; ++r) accepted += uniform01(rng) < p ? 1 : 0;
      total += static_cast<double>(accepted) / opt.stochastic_repeats;
    }
  }
  return total / static_cast<double>(soi.size());
}

double accuracy_metric(const ModelGraph& model, const SoIProbabilityLUT& lut, const Tensor& x,
                       std::span<const int> labels, const MetricOptions& opt) {
  return acceptance_metric(lut, compute_soi(model, x), predict(model, x), labels, true, opt);
}

double error_metric(const ModelGraph& model, const SoIProbabilityLUT& lut, const Tensor& x_adv,
                    std::span<const int> labels, const MetricOptions& opt) {
  return acceptance_metric(lut, compute_soi(model, x_adv), predict(model, x_adv), labels, false,
                           opt);
}

nlohmann::json lut_to_json(const SoIProbabilityLUT& lut) {
  nlohmann::json meta{{"bins", lut.meta.bins},
                      {"range", {lut.meta.range_lo, lut.meta.range_hi}},
                      {"smoothing", lut.meta.smoothing}};
  if (lut.meta.builder) meta["builder"] = attack_to_json(*lut.meta.builder);
  return {{"version", 1}, {"samples", lut.samples}, {"probs", lut.probs}, {"meta", meta}};
}

SoIProbabilityLUT lut_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw FormatError("unsupported LUT version");
    SoIProbabilityLUT lut;
    lut.samples = j.at("samples").get<std::vector<double>>();
    lut.probs = j.at("probs").get<std::vector<double>>();
    const auto& m = j.at("meta");
    lut.meta.bins = m.value("bins", lut.samples.size());
    if (m.contains("range")) {
      lut.meta.range_lo = m["range"].at(0).get<double>();
      lut.meta.range_hi = m["range"].at(1).get<double>();
    }
    lut.meta.smoothing = m.value("smoothing", 1.0);
    if (m.contains("builder")) lut.meta.builder = attack_from_json(m["builder"]);
    validate_lut(lut);
    return lut;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed LUT JSON: ") + e.what());
  }
}

}  // namespace soiguard
