#pragma once

#include <map>
#include <span>
#include <string>

#include <json.hpp>

#include "detector.hpp"
#include "xbar.hpp"

namespace soiguard {

/// Joules per operation.
struct ComponentEnergies {
  double adder = 19.2e-15;
  double reg = 1.2e-15;
  double rng = 236.0e-15;
  double lut_access = 5.0e-12 / 9.0;
};

void validate_energies(const ComponentEnergies& ce);
nlohmann::json energies_to_json(const ComponentEnergies& ce);
ComponentEnergies energies_from_json(const nlohmann::json& j);

struct EnergyCounts {
  std::size_t n_l1 = 0;
  std::size_t n_l2 = 0;
  std::size_t n_r = 0;
  std::size_t n_c = 0;
};

/// Counts for an output feature map of out_h x out_w.
EnergyCounts derive_counts(const CrossbarConfig& cfg, std::size_t out_h, std::size_t out_w);

double static_energy(const EnergyCounts& counts, const ComponentEnergies& ce);

struct SoIEnergy {
  double e_lut = 0.0;
  double e_soi = 0.0;
};

SoIEnergy soi_energy(const EnergyCounts& counts, const ComponentEnergies& ce, std::size_t n_x);

/// N_X -> occurrences over a stream of SoI values.
std::map<std::size_t, std::size_t> nx_histogram(const SoIProbabilityLUT& lut,
                                                std::span<const double> soi);

struct EnergyReport {
  EnergyCounts counts;
  std::size_t n_x = 0;
  double e_static = 0.0;
  double e_lut = 0.0;
  double e_soi = 0.0;
  std::map<std::size_t, std::size_t> nx_hist;
};

EnergyReport energy_report(const EnergyCounts& counts, const ComponentEnergies& ce,
                           std::size_t n_x, std::map<std::size_t, std::size_t> hist = {});

nlohmann::json report_to_json(const EnergyReport& r);
std::string report_csv_header();
std::string report_csv_row(const EnergyReport& r);

/// "2674.7 pJ", "19.2 fJ", ...
std::string pretty_energy(double joules);

}  // namespace soiguard
