#include "xbar.hpp"

#include <set>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "errors.hpp"
#include "rng.hpp"

namespace soiguard {

namespace {

bool is_pow2(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

}  // namespace

double preset_sigma(const std::string& preset) {
  if (preset == "sram") return 0.0;
  if (preset == "rram") return 0.1;
  if (preset == "fefet") return 0.15;
  throw ConfigError("unknown device preset '" + preset + "'");
}

CrossbarConfig with_preset(CrossbarConfig cfg, const std::string& preset) {
  cfg.device_preset = preset;
  if (preset != "custom") cfg.variation_sigma = preset_sigma(preset);
  return cfg;
}

void validate_crossbar(const CrossbarConfig& cfg) {
  if (cfg.rows == 0 || cfg.cols == 0) throw ConfigError("crossbar rows/cols must be > 0");
  if (cfg.device_bits < 1 || cfg.devices_per_weight < 1) {
    throw ConfigError("device_bits and devices_per_weight must be >= 1");
  }
  if (cfg.weight_bits() != 8) {
    throw ConfigError("device_bits * devices_per_weight must equal 8, got " +
                      std::to_string(cfg.weight_bits()));
  }
  if (!(cfg.on_off_ratio > 1.0)) throw ConfigError("on_off_ratio must be > 1");
  if (!(cfg.g_min > 0.0)) throw ConfigError("g_min must be > 0");
  if (!(cfg.v_read > 0.0)) throw ConfigError("v_read must be > 0");
  if (!(cfg.variation_sigma >= 0.0)) throw ConfigError("variation_sigma must be >= 0");
  if (cfg.mux_ratio == 0 || cfg.cols % cfg.mux_ratio != 0) {
    throw ConfigError("mux_ratio must divide cols");
  }
  if (cfg.adc_bits < 1 || cfg.adc_bits > 24) throw ConfigError("adc_bits must be in [1,24]");
}

nlohmann::json crossbar_to_json(const CrossbarConfig& cfg) {
  nlohmann::json j{{"rows", cfg.rows},
          {"cols", cfg.cols},
          {"device_bits", cfg.device_bits},
          {"devices_per_weight", cfg.devices_per_weight},
          {"on_off_ratio", cfg.on_off_ratio},
          {"g_min", cfg.g_min},
          {"v_read", cfg.v_read},
          {"variation_sigma", cfg.variation_sigma},
          {"mux_ratio", cfg.mux_ratio},
          {"adc_bits", cfg.adc_bits},
          {"device_preset", cfg.device_preset},
          {"chip_seed", cfg.chip_seed}};
  // A preset implies its sigma.
  if (cfg.device_preset != "custom") j.erase("variation_sigma");
  return j;
}

CrossbarConfig crossbar_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"rows",     "cols",       "device_bits",     "devices_per_weight",
                                           "on_off_ratio", "g_min",  "v_read",          "variation_sigma",
                                           "mux_ratio", "adc_bits",  "device_preset",   "chip_seed"};
  if (!j.is_object()) throw ConfigError("crossbar must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ConfigError("unknown key '" + k + "' in crossbar");
  }
  CrossbarConfig c;
  c.rows = j.value("rows", c.rows);
  c.cols = j.value("cols", c.cols);
  c.device_bits = j.value("device_bits", c.device_bits);
  c.devices_per_weight = j.value("devices_per_weight", c.devices_per_weight);
  c.on_off_ratio = j.value("on_off_ratio", c.on_off_ratio);
  c.g_min = j.value("g_min", c.g_min);
  c.v_read = j.value("v_read", c.v_read);
  c.variation_sigma = j.value("variation_sigma", c.variation_sigma);
  c.mux_ratio = j.value("mux_ratio", c.mux_ratio);
  c.adc_bits = j.value("adc_bits", c.adc_bits);
  c.chip_seed = j.value("chip_seed", c.chip_seed);
  const auto preset = j.value("device_preset", std::string("custom"));
  if (preset != "custom") {
    if (j.contains("variation_sigma")) {
      throw ConfigError("crossbar: give either device_preset or variation_sigma, not both");
    }
    c = with_preset(c, preset);
  }
  validate_crossbar(c);
  return c;
}

double MappedLayer::g_step() const {
  return (cfg.g_max() - cfg.g_min) / static_cast<double>((1 << cfg.device_bits) - 1);
}

double MappedLayer::adc_range(const CrossbarTile& t) const {
  return static_cast<double>(t.row_count) * cfg.v_read * (cfg.g_max() - cfg.g_min);
}

double MappedLayer::adc_step(const CrossbarTile& t) const {
  return adc_range(t) / std::ldexp(1.0, cfg.adc_bits - 1);
}

double MappedLayer::partial_sum_bound(const CrossbarTile& t) const {
  double place = 0.0;
  for (std::size_t s = 0; s < slices(); ++s) place += std::ldexp(1.0, cfg.device_bits * static_cast<int>(s));
  return place * adc_step(t) / (g_step() * cfg.v_read) * weight_scale;
}

MappedLayer map_weights(const Tensor& weights, const LayerSpec& layer, const Shape& input_shape,
                        const CrossbarConfig& cfg) {
  validate_crossbar(cfg);
  MappedLayer m;
  m.cfg = cfg;
  m.layer = layer;
  m.input_shape = input_shape;
  m.weight_shape = weights.shape;
  if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
    if (input_shape.size() != 3) throw ConfigError("conv crossbar mapping needs [C,H,W] input");
    const std::size_t oh = (input_shape[1] + 2 * c->pad - c->kernel) / c->stride + 1;
    const std::size_t ow = (input_shape[2] + 2 * c->pad - c->kernel) / c->stride + 1;
    m.output_shape = {c->out_channels, oh, ow};
    m.outputs = c->out_channels;
    m.in_rows = input_shape[0];
    m.kernel_positions = c->kernel * c->kernel;
    if (weights.shape != Shape{c->out_channels, input_shape[0], c->kernel, c->kernel}) {
      throw ConfigError("conv weight shape " + shape_to_string(weights.shape) + " does not match layer");
    }
  } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
    m.outputs = d->out;
    m.in_rows = shape_numel(input_shape);
    m.output_shape = {d->out};
    if (weights.shape != Shape{d->out, m.in_rows}) {
      throw ConfigError("dense weight shape " + shape_to_string(weights.shape) + " does not match layer");
    }
  } else {
    throw ConfigError("only conv2d and dense layers map onto crossbars");
  }

  const auto q = quantize_codes(weights.data, cfg.weight_bits());
  m.weight_scale = q.scale;
  const std::size_t slices = m.slices();
  const std::size_t cols_needed = m.outputs * slices;
  m.column_tiles = (cols_needed + cfg.cols - 1) / cfg.cols;
  const int digit_mask = (1 << cfg.device_bits) - 1;
  const double step = m.g_step();

  auto code_at = [&](std::size_t o, std::size_t r, std::size_t kpos) {
    return m.kernel_positions == 1 && std::holds_alternative<DenseSpec>(layer)
               ? q.codes[o * m.in_rows + r]
               : q.codes[(o * m.in_rows + r) * m.kernel_positions + kpos];
  };

  for (std::size_t kpos = 0; kpos < m.kernel_positions; ++kpos) {
    for (std::size_t r0 = 0; r0 < m.in_rows; r0 += cfg.rows) {
      CrossbarTile t;
      t.kpos = kpos;
      t.row_begin = r0;
      t.row_count = std::min(cfg.rows, m.in_rows - r0);
      t.g_pos.assign(t.row_count * cols_needed, cfg.g_min);
      t.g_neg.assign(t.row_count * cols_needed, cfg.g_min);
      for (std::size_t r = 0; r < t.row_count; ++r) {
        for (std::size_t o = 0; o < m.outputs; ++o) {
          const int code = code_at(o, r0 + r, kpos);
          int mag = std::abs(code);
          auto& side = code >= 0 ? t.g_pos : t.g_neg;
          for (std::size_t s = 0; s < slices; ++s) {
            const int digit = mag & digit_mask;
            mag >>= cfg.device_bits;
            side[(r * m.outputs + o) * slices + s] = cfg.g_min + digit * step;
          }
        }
      }
      m.tiles.push_back(std::move(t));
    }
  }
  return m;
}

MappedLayer map_layer(const ModelGraph& model, std::size_t layer_index, const CrossbarConfig& cfg) {
  if (layer_index >= model.layers.size() || !has_params(model.layers[layer_index])) {
    throw ConfigError("layer " + std::to_string(layer_index) + " has no weights to map");
  }
  Shape in = model.input_shape;
  if (layer_index > 0) in = layer_output_shapes(model)[layer_index - 1];
  return map_weights(model.params.at(weight_name(layer_index)), model.layers[layer_index], in, cfg);
}

Tensor unmap(const MappedLayer& m) {
  Tensor w(m.weight_shape);
  const std::size_t slices = m.slices();
  const double step = m.g_step();
  const bool dense = std::holds_alternative<DenseSpec>(m.layer);
  for (const auto& t : m.tiles) {
    for (std::size_t r = 0; r < t.row_count; ++r) {
      for (std::size_t o = 0; o < m.outputs; ++o) {
        long code = 0;
        for (std::size_t s = slices; s-- > 0;) {
          const std::size_t k = (r * m.outputs + o) * slices + s;
          code = (code << m.cfg.device_bits) + std::lround((t.g_pos[k] - t.g_neg[k]) / step);
        }
        const std::size_t row = t.row_begin + r;
        const std::size_t idx = dense ? o * m.in_rows + row
                                      : (o * m.in_rows + row) * m.kernel_positions + t.kpos;
        w.data[idx] = static_cast<double>(code) * m.weight_scale;
      }
    }
  }
  return w;
}

MappedLayer apply_variation(const MappedLayer& m, std::uint64_t seed) {
  MappedLayer out = m;
  const double sigma = m.cfg.variation_sigma;
  if (sigma == 0.0) return out;
  Rng rng(seed);
  const double lo = m.cfg.g_min, hi = m.cfg.g_max();
  for (auto& t : out.tiles) {
    for (auto* side : {&t.g_pos, &t.g_neg}) {
      for (auto& g : *side) g = std::clamp(g * std::exp(sigma * standard_normal(rng)), lo, hi);
    }
  }
  return out;
}

Tensor crossbar_forward(const MappedLayer& m, const Tensor& x, int input_bits) {
  if (x.shape.size() != m.input_shape.size() + 1 ||
      !std::equal(m.input_shape.begin(), m.input_shape.end(), x.shape.begin() + 1)) {
    throw ConfigError("crossbar input shape " + shape_to_string(x.shape) + " does not match mapped layer");
  }
  const std::size_t batch = x.shape[0];
  Shape oshape{batch};
  oshape.insert(oshape.end(), m.output_shape.begin(), m.output_shape.end());
  Tensor out(oshape);

  const std::size_t slices = m.slices();
  const double g_unit = m.g_step() * m.cfg.v_read;
  std::vector<double> place(slices);
  for (std::size_t s = 0; s < slices; ++s) place[s] = std::ldexp(1.0, m.cfg.device_bits * static_cast<int>(s));
  const double adc_max_code = std::ldexp(1.0, m.cfg.adc_bits - 1) - 1.0;

  const auto* conv = std::get_if<Conv2dSpec>(&m.layer);
  const std::size_t positions = conv ? m.output_shape[1] * m.output_shape[2] : 1;
  std::vector<double> v(m.in_rows);
  std::vector<double> ip(m.outputs * slices), in_(m.outputs * slices);

  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<double> xin(x.item(b).begin(), x.item(b).end());
    if (input_bits > 0) quantize_inplace(xin, input_bits);
    auto dst = out.item(b);
    for (std::size_t p = 0; p < positions; ++p) {
      for (const auto& t : m.tiles) {
        // Word-line voltages for this tile's rows.
        for (std::size_t r = 0; r < t.row_count; ++r) {
          const std::size_t row = t.row_begin + r;
          double val = 0.0;
          if (conv) {
            const std::size_t ky = t.kpos / conv->kernel, kx = t.kpos % conv->kernel;
            const std::size_t oy = p / m.output_shape[2], ox = p % m.output_shape[2];
            const long iy = static_cast<long>(oy * conv->stride + ky) - static_cast<long>(conv->pad);
            const long ix = static_cast<long>(ox * conv->stride + kx) - static_cast<long>(conv->pad);
            if (iy >= 0 && ix >= 0 && iy < static_cast<long>(m.input_shape[1]) &&
                ix < static_cast<long>(m.input_shape[2])) {
              val = xin[(row * m.input_shape[1] + static_cast<std::size_t>(iy)) * m.input_shape[2] +
                        static_cast<std::size_t>(ix)];
            }
          } else {
            val = xin[row];
          }
          v[r] = val * m.cfg.v_read;
        }
        std::fill(ip.begin(), ip.end(), 0.0);
        std::fill(in_.begin(), in_.end(), 0.0);
        for (std::size_t r = 0; r < t.row_count; ++r) {
          if (v[r] == 0.0) continue;
          const double* gp = t.g_pos.data() + r * m.outputs * slices;
          const double* gn = t.g_neg.data() + r * m.outputs * slices;
          for (std::size_t k = 0; k < ip.size(); ++k) {
            ip[k] += v[r] * gp[k];
            in_[k] += v[r] * gn[k];
          }
        }
        const double step = m.adc_step(t);
        for (std::size_t o = 0; o < m.outputs; ++o) {
          double acc = 0.0;
          for (std::size_t s = 0; s < slices; ++s) {
            const double diff = ip[o * slices + s] - in_[o * slices + s];
            const double code = std::clamp(std::nearbyint(diff / step), -adc_max_code - 1.0, adc_max_code);
            acc += place[s] * code * step / g_unit;
          }
          dst[o * positions + p] += acc * m.weight_scale;
        }
      }
    }
  }
  return out;
}

DatapathGeometry datapath_geometry(const MappedLayer& m) {
  const auto& c = m.cfg;
  const std::size_t l1 = c.cols / c.mux_ratio;
  if (!is_pow2(l1)) throw ConfigError("cols / mux_ratio must be a power of two");
  const std::size_t positions = std::holds_alternative<Conv2dSpec>(m.layer)
                                    ? m.output_shape[1] * m.output_shape[2]
                                    : 1;
  const std::size_t passes = (m.outputs + c.cols - 1) / c.cols;
  return {l1, 2 * l1 - 1, l1, positions * c.mux_ratio * passes};
}

HardwareSoI hardware_soi_from_macs(const MappedLayer& m, std::span<const double> macs) {
  const auto geo = datapath_geometry(m);
  const std::size_t mux = m.cfg.mux_ratio;
  const std::size_t positions = macs.size() / m.outputs;
  HardwareSoI h;
  h.registers.assign(geo.registers, 0.0);
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t base = 0; base < m.outputs; base += m.cfg.cols) {
      for (std::size_t sel = 0; sel < mux; ++sel) {
        ++h.cycles;
        for (std::size_t a = 0; a < geo.adders_l1; ++a) {
          const std::size_t col = base + a * mux + sel;
          if (col >= m.outputs) continue;
          const double z = macs[col * positions + p];
          // MSB set: subtract, otherwise add.
          h.registers[a] += std::signbit(z) ? -z : z;
        }
      }
    }
  }
  std::vector<double> level = h.registers;
  while (level.size() > 1) {
    std::vector<double> next((level.size() + 1) / 2, 0.0);
    for (std::size_t i = 0; i < level.size(); ++i) next[i / 2] += level[i];
    level = std::move(next);
  }
  h.register_total = level.empty() ? 0.0 : level[0];
  h.soi = h.register_total / static_cast<double>(macs.size());
  return h;
}

std::vector<HardwareSoI> hardware_soi(const MappedLayer& m, const Tensor& x, int input_bits) {
  const auto z = crossbar_forward(m, x, input_bits);
  std::vector<HardwareSoI> out;
  out.reserve(x.shape[0]);
  for (std::size_t b = 0; b < x.shape[0]; ++b) out.push_back(hardware_soi_from_macs(m, z.item(b)));
  return out;
}

std::string conductance_csv(const MappedLayer& m) {
  std::ostringstream os;
  os.precision(17);
  os << "tile,kpos,row,out,slice,g_pos,g_neg\n";
  const std::size_t slices = m.slices();
  for (std::size_t ti = 0; ti < m.tiles.size(); ++ti) {
    const auto& t = m.tiles[ti];
    for (std::size_t r = 0; r < t.row_count; ++r) {
      for (std::size_t o = 0; o < m.outputs; ++o) {
        for (std::size_t s = 0; s < slices; ++s) {
          const std::size_t k = (r * m.outputs + o) * slices + s;
          os << ti << ',' << t.kpos << ',' << t.row_begin + r << ',' << o << ',' << s << ','
             << t.g_pos[k] << ',' << t.g_neg[k] << '\n';
        }
      }
    }
  }
  return os.str();
}

}  // namespace soiguard
