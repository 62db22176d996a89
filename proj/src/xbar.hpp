#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "nn.hpp"

namespace soiguard {

struct CrossbarConfig {
  std::size_t rows = 128;
  std::size_t cols = 128;
  int device_bits = 2;
  int devices_per_weight = 4;
  double on_off_ratio = 10.0;
  double g_min = 1e-6;  // siemens
  double v_read = 1.0;  // volts at input value 1
  double variation_sigma = 0.0;
  std::size_t mux_ratio = 8;
  int adc_bits = 8;
  std::string device_preset = "custom";  // sram | rram | fefet | custom
  std::uint64_t chip_seed = 0;           // selects the device-variation draw

  double g_max() const { return g_min * on_off_ratio; }
  int weight_bits() const { return device_bits * devices_per_weight; }
};

/// Variation sigma for a named device preset.
double preset_sigma(const std::string& preset);

/// Applies a preset's sigma unless the preset is "custom".
CrossbarConfig with_preset(CrossbarConfig cfg, const std::string& preset);

void validate_crossbar(const CrossbarConfig& cfg);
nlohmann::json crossbar_to_json(const CrossbarConfig& cfg);
CrossbarConfig crossbar_from_json(const nlohmann::json& j);

/// One physical array: kernel position `kpos`, input rows [row_begin, row_begin + row_count).
/// Conductances are stored [row][out][slice] for each side of the differential pair.
struct CrossbarTile {
  std::size_t kpos = 0;
  std::size_t row_begin = 0;
  std::size_t row_count = 0;
  std::vector<double> g_pos;
  std::vector<double> g_neg;
};

struct MappedLayer {
  CrossbarConfig cfg;
  LayerSpec layer;
  Shape input_shape;         // per sample
  Shape output_shape;        // per sample
  Shape weight_shape;
  std::size_t outputs = 0;   // output channels or features
  std::size_t in_rows = 0;   // input channels (conv) or features (dense)
  std::size_t kernel_positions = 1;
  std::size_t column_tiles = 1;  // arrays needed side by side for outputs * slices columns
  double weight_scale = 0.0;     // weight = code * weight_scale
  std::vector<CrossbarTile> tiles;

  std::size_t slices() const { return static_cast<std::size_t>(cfg.devices_per_weight); }
  double g_step() const;
  /// Full-scale differential current of a tile's ADC.
  double adc_range(const CrossbarTile& t) const;
  double adc_step(const CrossbarTile& t) const;
  /// Worst-case |error| one tile adds to a MAC output, in weight units.
  double partial_sum_bound(const CrossbarTile& t) const;
  std::size_t physical_arrays() const { return tiles.size() * column_tiles; }
};

/// Maps layer `layer_index` of the model (conv2d or dense) onto crossbar tiles.
MappedLayer map_layer(const ModelGraph& model, std::size_t layer_index, const CrossbarConfig& cfg);

/// Same mapping from a raw weight tensor; the tensor is quantized to the
/// configured weight precision first.
MappedLayer map_weights(const Tensor& weights, const LayerSpec& layer, const Shape& input_shape,
                        const CrossbarConfig& cfg);

/// Weights recovered from conductances (exact for unvaried arrays).
Tensor unmap(const MappedLayer& m);

/// Multiplicative lognormal device variation, clamped to [g_min, g_max].
MappedLayer apply_variation(const MappedLayer& m, std::uint64_t seed);

/// Digital MAC outputs [B, ...output_shape] after ADC and partial-sum accumulation.
Tensor crossbar_forward(const MappedLayer& m, const Tensor& x, int input_bits = 8);

struct HardwareSoI {
  double soi = 0.0;          // normalized: register total / element count
  double register_total = 0.0;
  std::size_t cycles = 0;
  std::vector<double> registers;
};

struct DatapathGeometry {
  std::size_t adders_l1 = 0;
  std::size_t adders_l2 = 0;
  std::size_t registers = 0;
  std::size_t cycles = 0;
};

DatapathGeometry datapath_geometry(const MappedLayer& m);

/// Emulates the abs-accumulate datapath on the final MAC outputs of one sample.
HardwareSoI hardware_soi_from_macs(const MappedLayer& m, std::span<const double> macs);

/// Per-sample hardware SoI for a batch.
std::vector<HardwareSoI> hardware_soi(const MappedLayer& m, const Tensor& x, int input_bits = 8);

/// CSV: tile,kpos,row,out,slice,g_pos,g_neg
std::string conductance_csv(const MappedLayer& m);

}  // namespace soiguard
