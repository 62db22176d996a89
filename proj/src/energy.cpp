#include "energy.hpp"

#include <cmath>
#include <cstdio>

#include "errors.hpp"

namespace soiguard {

void validate_energies(const ComponentEnergies& ce) {
  for (double v : {ce.adder, ce.reg, ce.rng, ce.lut_access}) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("component energies must be > 0");
  }
}

nlohmann::json energies_to_json(const ComponentEnergies& ce) {
  return {{"adder_j", ce.adder}, {"register_j", ce.reg}, {"rng_j", ce.rng}, {"lut_access_j", ce.lut_access}};
}

ComponentEnergies energies_from_json(const nlohmann::json& j) {
  ComponentEnergies ce;
  ce.adder = j.value("adder_j", ce.adder);
  ce.reg = j.value("register_j", ce.reg);
  ce.rng = j.value("rng_j", ce.rng);
  ce.lut_access = j.value("lut_access_j", ce.lut_access);
  validate_energies(ce);
  return ce;
}

EnergyCounts derive_counts(const CrossbarConfig& cfg, std::size_t out_h, std::size_t out_w) {
  if (cfg.mux_ratio == 0 || cfg.cols % cfg.mux_ratio != 0) throw ConfigError("mux_ratio must divide cols");
  const std::size_t l1 = cfg.cols / cfg.mux_ratio;
  if ((l1 & (l1 - 1)) != 0) {
    throw ConfigError("ADC count cols/mux_ratio = " + std::to_string(l1) + " is not a power of two");
  }
  std::size_t l2 = 0;
  for (std::size_t w = l1; w >= 1; w /= 2) l2 += w;
  return {l1, l2, l1, out_h * out_w * cfg.mux_ratio};
}

double static_energy(const EnergyCounts& c, const ComponentEnergies& ce) {
  return static_cast<double>(c.n_c) *
             (static_cast<double>(c.n_l1) * ce.adder + static_cast<double>(c.n_r) * ce.reg) +
         static_cast<double>(c.n_l2) * ce.adder + ce.rng;
}

SoIEnergy soi_energy(const EnergyCounts& counts, const ComponentEnergies& ce, std::size_t n_x) {
  if (n_x < 1) throw ConfigError("N_X must be >= 1");
  const double e_lut = static_cast<double>(n_x) * ce.lut_access;
  return {e_lut, static_energy(counts, ce) + e_lut};
}

std::map<std::size_t, std::size_t> nx_histogram(const SoIProbabilityLUT& lut,
                                                std::span<const double> soi) {
  std::map<std::size_t, std::size_t> hist;
  for (double s : soi) ++hist[lookup(lut, s).probes];
  return hist;
}

EnergyReport energy_report(const EnergyCounts& counts, const ComponentEnergies& ce,
                           std::size_t n_x, std::map<std::size_t, std::size_t> hist) {
  const auto e = soi_energy(counts, ce, n_x);
  return {counts, n_x, static_energy(counts, ce), e.e_lut, e.e_soi, std::move(hist)};
}

nlohmann::json report_to_json(const EnergyReport& r) {
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [k, v] : r.nx_hist) hist[std::to_string(k)] = v;
  return {{"N_L1", r.counts.n_l1},
          {"N_L2", r.counts.n_l2},
          {"N_R", r.counts.n_r},
          {"N_C", r.counts.n_c},
          {"N_X", r.n_x},
          {"E_STATIC_j", r.e_static},
          {"E_LUT_j", r.e_lut},
          {"E_SoI_j", r.e_soi},
          {"E_STATIC", pretty_energy(r.e_static)},
          {"E_LUT", pretty_energy(r.e_lut)},
          {"E_SoI", pretty_energy(r.e_soi)},
          {"N_X_histogram", hist}};
}

std::string report_csv_header() { return "N_L1,N_L2,N_R,N_C,N_X,E_STATIC_j,E_LUT_j,E_SoI_j"; }

std::string report_csv_row(const EnergyReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%zu,%zu,%.17g,%.17g,%.17g", r.counts.n_l1, r.counts.n_l2,
                r.counts.n_r, r.counts.n_c, r.n_x, r.e_static, r.e_lut, r.e_soi);
  return buf;
}

std::string pretty_energy(double joules) {
  static constexpr struct {
    double scale;
    const char* unit;
  } kUnits[] = {{1e-15, "fJ"}, {1e-12, "pJ"}, {1e-9, "nJ"}, {1e-6, "uJ"}, {1e-3, "mJ"}, {1.0, "J"}};
  const double mag = std::abs(joules);
  const auto* u = &kUnits[0];
  // Largest unit that still leaves at least two integer digits.
  for (const auto& cand : kUnits) {
    if (mag >= 10.0 * cand.scale) u = &cand;
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f %s", joules / u->scale, u->unit);
  return buf;
}

}  // namespace soiguard
