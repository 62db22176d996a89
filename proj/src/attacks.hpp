#pragma once

#include <cstdint>
#include <span>
#include <string>

#include <json.hpp>

#include "nn.hpp"

namespace soiguard {

/// A real parameter that remembers how it was written ("8/255").
struct Ratio {
  double value = 0.0;
  std::string text;

  static Ratio parse(const std::string& text);
  static Ratio of(double v);
  bool operator==(const Ratio& o) const { return value == o.value; }
};

enum class AttackFamily { fgsm, pgd, gaussian_patch };

std::string family_name(AttackFamily f);

struct AttackSpec {
  AttackFamily family = AttackFamily::pgd;
  Ratio eps;
  Ratio alpha;            // pgd only
  int n = 1;              // pgd only
  double sigma_noise = 0.5;
  double frac_volume = 1.0;
  std::uint64_t seed = 0;
  bool surrogate = false;  // attack a surrogate model instead of the target

  bool operator==(const AttackSpec&) const = default;
};

void validate_attack(const AttackSpec& spec);

nlohmann::json attack_to_json(const AttackSpec& spec);
AttackSpec attack_from_json(const nlohmann::json& j);

/// Short label, e.g. "pgd[8/255,4/255,10]" or "gauss[0.25]".
std::string attack_label(const AttackSpec& spec);

AttackSpec make_pgd(const std::string& eps, const std::string& alpha, int n,
                    std::uint64_t seed = 0);
AttackSpec make_fgsm(const std::string& eps, std::uint64_t seed = 0);

/// clip_[0,1](x + eps * sign(grad CE)), with sign(0) = 0.
Tensor fgsm(const ModelGraph& model, const Tensor& x, std::span<const int> labels, double eps);

enum class PgdStart { random, zero };

// Attacks that draw random numbers seed sample i with spec.seed ^ (first_index + i).

Tensor pgd(const ModelGraph& model, const Tensor& x, std::span<const int> labels,
           const AttackSpec& spec, PgdStart start = PgdStart::random,
           std::uint64_t first_index = 0);

struct PatchDims {
  std::size_t c = 0, h = 0, w = 0;
  std::size_t volume() const { return c * h * w; }
};

/// Block dimensions whose volume is closest to frac * C*H*W.
PatchDims patch_dims(const Shape& item_shape, double frac_volume);

Tensor gaussian_patch(const Tensor& x, const AttackSpec& spec, std::uint64_t first_index = 0);

/// Gradient attack computed on `surrogate` (throws ConfigError when null).
Tensor blackbox_attack(const ModelGraph* surrogate, const Tensor& x,
                       std::span<const int> labels, const AttackSpec& spec,
                       std::uint64_t first_index = 0);

/// Dispatch on family and surrogate flag.
Tensor run_attack(const ModelGraph& target, const ModelGraph* surrogate, const Tensor& x,
                  std::span<const int> labels, const AttackSpec& spec,
                  std::uint64_t first_index = 0);

}  // namespace soiguard
