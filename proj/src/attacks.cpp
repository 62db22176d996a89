#include "attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <set>

#include "errors.hpp"
#include "rng.hpp"

namespace soiguard {

namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Project onto the eps-ball around x0 and the pixel box, then nudge by ulps
// so the computed difference itself never exceeds eps.
double project(double v, double x0, double eps) {
  v = std::min(std::max(v, x0 - eps), x0 + eps);
  v = std::clamp(v, 0.0, 1.0);
  while (v - x0 > eps) v = std::nextafter(v, -std::numeric_limits<double>::infinity());
  while (x0 - v > eps) v = std::nextafter(v, std::numeric_limits<double>::infinity());
  return v;
}

const LossSpec kAttackLoss{LossKind::cross_entropy, 1.0, 0.1, 0.6, Reduction::sum};

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest representation that round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char tmp[32];
    std::snprintf(tmp, sizeof tmp, "%.*g", prec, v);
    if (std::strtod(tmp, nullptr) == v) return tmp;
  }
  return buf;
}

}  // namespace

Ratio Ratio::parse(const std::string& text) {
  const auto slash = text.find('/');
  char* end = nullptr;
  if (slash == std::string::npos) {
    const double v = std::strtod(text.c_str(), &end);
    if (end == text.c_str() || *end != '\0') throw ConfigError("bad real '" + text + "'");
    return {v, text};
  }
  const auto num_s = text.substr(0, slash);
  const auto den_s = text.substr(slash + 1);
  const double num = std::strtod(num_s.c_str(), &end);
  if (end == num_s.c_str() || *end != '\0') throw ConfigError("bad fraction '" + text + "'");
  const double den = std::strtod(den_s.c_str(), &end);
  if (end == den_s.c_str() || *end != '\0' || den == 0.0) {
    throw ConfigError("bad fraction '" + text + "'");
  }
  return {num / den, text};
}

Ratio Ratio::of(double v) { return {v, format_real(v)}; }

std::string family_name(AttackFamily f) {
  switch (f) {
    case AttackFamily::fgsm:
      return "fgsm";
    case AttackFamily::pgd:
      return "pgd";
    case AttackFamily::gaussian_patch:
      return "gaussian_patch";
  }
  return "?";
}

void validate_attack(const AttackSpec& spec) {
  if (spec.family != AttackFamily::gaussian_patch) {
    if (!(spec.eps.value > 0.0 && spec.eps.value <= 1.0)) {
      throw ConfigError("attack eps must lie in (0,1]");
    }
  }
  if (spec.family == AttackFamily::pgd) {
    if (!(spec.alpha.value > 0.0 && spec.alpha.value <= 1.0)) {
      throw ConfigError("pgd alpha must lie in (0,1]");
    }
    if (spec.alpha.value > spec.eps.value) throw ConfigError("pgd needs alpha <= eps");
    if (spec.n < 1) throw ConfigError("pgd needs n >= 1");
  }
  if (spec.family == AttackFamily::gaussian_patch) {
    if (!(spec.frac_volume > 0.0 && spec.frac_volume <= 1.0)) {
      throw ConfigError("frac_volume must lie in (0,1]");
    }
    if (!(spec.sigma_noise >= 0.0) || !std::isfinite(spec.sigma_noise)) {
      throw ConfigError("sigma_noise must be finite and non-negative");
    }
  }
}

nlohmann::json attack_to_json(const AttackSpec& spec) {
  return {{"family", family_name(spec.family)},
          {"eps", spec.eps.text},
          {"alpha", spec.alpha.text},
          {"n", spec.n},
          {"sigma_noise", spec.sigma_noise},
          {"frac_volume", spec.frac_volume},
          {"seed", spec.seed},
          {"surrogate", spec.surrogate}};
}

namespace {

Ratio ratio_field(const nlohmann::json& j, const char* key, const std::string& fallback) {
  if (!j.contains(key)) return Ratio::parse(fallback);
  const auto& v = j.at(key);
  if (v.is_string()) return Ratio::parse(v.get<std::string>());
  if (v.is_number()) return Ratio::of(v.get<double>());
  throw ConfigError(std::string("attack field '") + key + "' must be a number or fraction string");
}

}  // namespace

AttackSpec attack_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"family", "eps",  "alpha", "n",
                                           "sigma_noise", "frac_volume", "seed", "surrogate"};
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ConfigError("unknown attack field '" + k + "'");
  }
  AttackSpec s;
  const auto fam = j.at("family").get<std::string>();
  if (fam == "fgsm") {
    s.family = AttackFamily::fgsm;
  } else if (fam == "pgd") {
    s.family = AttackFamily::pgd;
  } else if (fam == "gaussian_patch" || fam == "gaussian") {
    s.family = AttackFamily::gaussian_patch;
  } else {
    throw ConfigError("unknown attack family '" + fam + "'");
  }
  s.eps = ratio_field(j, "eps", "0");
  s.alpha = ratio_field(j, "alpha", s.eps.text);
  s.n = j.value("n", 1);
  s.sigma_noise = j.value("sigma_noise", 0.5);
  s.frac_volume = j.value("frac_volume", 1.0);
  s.seed = j.value("seed", std::uint64_t{0});
  s.surrogate = j.value("surrogate", false);
  validate_attack(s);
  return s;
}

std::string attack_label(const AttackSpec& spec) {
  std::string l;
  switch (spec.family) {
    case AttackFamily::fgsm:
      l = "fgsm[" + spec.eps.text + "]";
      break;
    case AttackFamily::pgd:
      l = "pgd[" + spec.eps.text + "," + spec.alpha.text + "," + std::to_string(spec.n) + "]";
      break;
    case AttackFamily::gaussian_patch:
      l = "gauss[" + format_real(spec.frac_volume) + "]";
      break;
  }
  return spec.surrogate ? "bb_" + l : l;
}

AttackSpec make_pgd(const std::string& eps, const std::string& alpha, int n, std::uint64_t seed) {
  AttackSpec s;
  s.family = AttackFamily::pgd;
  s.eps = Ratio::parse(eps);
  s.alpha = Ratio::parse(alpha);
  s.n = n;
  s.seed = seed;
  validate_attack(s);
  return s;
}

AttackSpec make_fgsm(const std::string& eps, std::uint64_t seed) {
  AttackSpec s;
  s.family = AttackFamily::fgsm;
  s.eps = Ratio::parse(eps);
  s.alpha = s.eps;
  s.seed = seed;
  validate_attack(s);
  return s;
}

Tensor fgsm(const ModelGraph& model, const Tensor& x, std::span<const int> labels, double eps) {
  if (!(eps > 0.0 && eps <= 1.0)) throw ConfigError("attack eps must lie in (0,1]");
  const auto g = input_gradient(model, x, labels, kAttackLoss);
  Tensor out = x;
  for (std::size_t k = 0; k < out.data.size(); ++k) {
    out.data[k] = project(x.data[k] + eps * sign_of(g.data[k]), x.data[k], eps);
  }
  return out;
}

Tensor pgd(const ModelGraph& model, const Tensor& x, std::span<const int> labels,
           const AttackSpec& spec, PgdStart start, std::uint64_t first_index) {
  if (spec.family != AttackFamily::pgd) throw ConfigError("pgd called with a non-pgd spec");
  validate_attack(spec);
  const double eps = spec.eps.value;
  const double alpha = spec.alpha.value;
  Tensor cur = x;
  if (start == PgdStart::random) {
    for (std::size_t i = 0; i < x.shape[0]; ++i) {
      Rng rng(spec.seed ^ (first_index + i));
      auto src = x.item(i);
      auto dst = cur.item(i);
      for (std::size_t k = 0; k < src.size(); ++k) {
        dst[k] = project(src[k] + uniform(rng, -eps, eps), src[k], eps);
      }
    }
  }
  for (int step = 0; step < spec.n; ++step) {
    const auto g = input_gradient(model, cur, labels, kAttackLoss);
    for (std::size_t k = 0; k < cur.data.size(); ++k) {
      cur.data[k] = project(cur.data[k] + alpha * sign_of(g.data[k]), x.data[k], eps);
    }
  }
  return cur;
}

PatchDims patch_dims(const Shape& item_shape, double frac_volume) {
  if (item_shape.size() != 3) throw ConfigError("gaussian patch needs [C,H,W] samples");
  if (!(frac_volume > 0.0 && frac_volume <= 1.0)) {
    throw ConfigError("frac_volume must lie in (0,1]");
  }
  const double total = static_cast<double>(shape_numel(item_shape));
  const double target = frac_volume * total;
  if (target < 0.5) {
    throw ConfigError("frac_volume " + format_real(frac_volume) + " gives an empty patch");
  }
  int free_dims = 0;
  for (auto d : item_shape) free_dims += d > 1 ? 1 : 0;
  const double ideal = free_dims ? std::log(frac_volume) / free_dims : 0.0;

  PatchDims best;
  double best_err = std::numeric_limits<double>::infinity();
  double best_shape = std::numeric_limits<double>::infinity();
  for (std::size_t c = 1; c <= item_shape[0]; ++c) {
    for (std::size_t h = 1; h <= item_shape[1]; ++h) {
      for (std::size_t w = 1; w <= item_shape[2]; ++w) {
        const double err = std::abs(static_cast<double>(c * h * w) - target);
        double shape_cost = 0.0;
        const std::size_t dims[3] = {c, h, w};
        for (int a = 0; a < 3; ++a) {
          if (item_shape[a] <= 1) continue;
          const double d =
              std::log(static_cast<double>(dims[a]) / static_cast<double>(item_shape[a])) - ideal;
          shape_cost += d * d;
        }
        if (err < best_err - 1e-9 || (std::abs(err - best_err) <= 1e-9 && shape_cost < best_shape)) {
          best = {c, h, w};
          best_err = err;
          best_shape = shape_cost;
        }
      }
    }
  }
  return best;
}

Tensor gaussian_patch(const Tensor& x, const AttackSpec& spec, std::uint64_t first_index) {
  validate_attack(spec);
  const Shape item(x.shape.begin() + 1, x.shape.end());
  const auto dims = patch_dims(item, spec.frac_volume);
  Tensor out = x;
  for (std::size_t i = 0; i < x.shape[0]; ++i) {
    Rng rng(spec.seed ^ (first_index + i));
    const auto c0 = static_cast<std::size_t>(rng() % (item[0] - dims.c + 1));
    const auto h0 = static_cast<std::size_t>(rng() % (item[1] - dims.h + 1));
    const auto w0 = static_cast<std::size_t>(rng() % (item[2] - dims.w + 1));
    auto dst = out.item(i);
    for (std::size_t c = c0; c < c0 + dims.c; ++c) {
      for (std::size_t h = h0; h < h0 + dims.h; ++h) {
        for (std::size_t w = w0; w < w0 + dims.w; ++w) {
          const auto k = (c * item[1] + h) * item[2] + w;
          const double noise = spec.sigma_noise * standard_normal(rng);
          if (noise != 0.0) dst[k] = std::clamp(dst[k] + noise, 0.0, 1.0);
        }
      }
    }
  }
  return out;
}

Tensor blackbox_attack(const ModelGraph* surrogate, const Tensor& x, std::span<const int> labels,
                       const AttackSpec& spec, std::uint64_t first_index) {
  if (!surrogate) throw ConfigError("black-box attack needs a surrogate model");
  switch (spec.family) {
    case AttackFamily::fgsm:
      return fgsm(*surrogate, x, labels, spec.eps.value);
    case AttackFamily::pgd:
      return pgd(*surrogate, x, labels, spec, PgdStart::random, first_index);
    case AttackFamily::gaussian_patch:
      return gaussian_patch(x, spec, first_index);
  }
  return x;
}

Tensor run_attack(const ModelGraph& target, const ModelGraph* surrogate, const Tensor& x,
                  std::span<const int> labels, const AttackSpec& spec,
                  std::uint64_t first_index) {
  validate_attack(spec);
  if (spec.surrogate) return blackbox_attack(surrogate, x, labels, spec, first_index);
  switch (spec.family) {
    case AttackFamily::fgsm:
      return fgsm(target, x, labels, spec.eps.value);
    case AttackFamily::pgd:
      return pgd(target, x, labels, spec, PgdStart::random, first_index);
    case AttackFamily::gaussian_patch:
      return gaussian_patch(x, spec, first_index);
  }
  return x;
}

}  // namespace soiguard
