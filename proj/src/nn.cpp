#include "nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "errors.hpp"
#include "io.hpp"
#include "nn_json.hpp"
#include "rng.hpp"

namespace soiguard {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

struct ConvGeom {
  std::size_t in_c, in_h, in_w;
  std::size_t out_c, out_h, out_w;
  std::size_t k, stride, pad;
};

ConvGeom conv_geom(const Shape& in, const Conv2dSpec& spec) {
  if (in.size() != 3) {
    throw ConfigError("conv2d expects a [C,H,W] input, got " + shape_to_string(in));
  }
  if (spec.kernel == 0 || spec.stride == 0 || spec.out_channels == 0) {
    throw ConfigError("conv2d kernel, stride and out_channels must be positive");
  }
  const auto h = in[1] + 2 * spec.pad;
  const auto w = in[2] + 2 * spec.pad;
  if (h < spec.kernel || w < spec.kernel) {
    throw ConfigError("conv2d kernel larger than padded input " + shape_to_string(in));
  }
  return {in[0],
          in[1],
          in[2],
          spec.out_channels,
          (h - spec.kernel) / spec.stride + 1,
          (w - spec.kernel) / spec.stride + 1,
          spec.kernel,
          spec.stride,
          spec.pad};
}

void conv_forward(const ConvGeom& g, const double* in, const double* w, double* out) {
  std::fill(out, out + g.out_c * g.out_h * g.out_w, 0.0);
  for (std::size_t o = 0; o < g.out_c; ++o) {
    double* out_o = out + o * g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.in_c; ++c) {
      const double* in_c = in + c * g.in_h * g.in_w;
      for (std::size_t kh = 0; kh < g.k; ++kh) {
        for (std::size_t kw = 0; kw < g.k; ++kw) {
          const double wv = w[((o * g.in_c + c) * g.k + kh) * g.k + kw];
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            const double* row = in_c + ih * static_cast<std::ptrdiff_t>(g.in_w);
            double* orow = out_o + oh * g.out_w;
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) -
                              static_cast<std::ptrdiff_t>(g.pad);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
              orow[ow] += wv * row[iw];
            }
          }
        }
      }
    }
  }
}

// Accumulates into gw (if non-null) and gin (if non-null).
void conv_backward(const ConvGeom& g, const double* in, const double* w,
                   const double* gout, double* gw, double* gin) {
  for (std::size_t o = 0; o < g.out_c; ++o) {
    const double* gout_o = gout + o * g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.in_c; ++c) {
      const double* in_c = in + c * g.in_h * g.in_w;
      double* gin_c = gin ? gin + c * g.in_h * g.in_w : nullptr;
      for (std::size_t kh = 0; kh < g.k; ++kh) {
        for (std::size_t kw = 0; kw < g.k; ++kw) {
          const std::size_t widx = ((o * g.in_c + c) * g.k + kh) * g.k + kw;
          const double wv = w[widx];
          double acc = 0.0;
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            const auto row_off = ih * static_cast<std::ptrdiff_t>(g.in_w);
            const double* grow = gout_o + oh * g.out_w;
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) -
                              static_cast<std::ptrdiff_t>(g.pad);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
              acc += grow[ow] * in_c[row_off + iw];
              if (gin_c) gin_c[row_off + iw] += wv * grow[ow];
            }
          }
          if (gw) gw[widx] += acc;
        }
      }
    }
  }
}

void dense_forward(std::size_t in_n, std::size_t out_n, const double* in,
                   const double* w, double* out) {
  for (std::size_t o = 0; o < out_n; ++o) {
    const double* wr = w + o * in_n;
    double acc = 0.0;
    for (std::size_t i = 0; i < in_n; ++i) acc += wr[i] * in[i];
    out[o] = acc;
  }
}

void dense_backward(std::size_t in_n, std::size_t out_n, const double* in,
                    const double* w, const double* gout, double* gw, double* gin) {
  for (std::size_t o = 0; o < out_n; ++o) {
    const double go = gout[o];
    const double* wr = w + o * in_n;
    if (gw) {
      double* gwr = gw + o * in_n;
      for (std::size_t i = 0; i < in_n; ++i) gwr[i] += go * in[i];
    }
    if (gin) {
      for (std::size_t i = 0; i < in_n; ++i) gin[i] += wr[i] * go;
    }
  }
}

// Weights as used by the forward pass (quantized when quant_bits > 0).
struct Prepared {
  std::vector<Shape> in_shapes;
  std::vector<Shape> out_shapes;
  std::vector<std::vector<double>> weights;
};

Prepared prepare(const ModelGraph& model) {
  Prepared p;
  p.out_shapes = layer_output_shapes(model);
  p.in_shapes.reserve(model.layers.size());
  Shape cur = model.input_shape;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    p.in_shapes.push_back(cur);
    cur = p.out_shapes[l];
  }
  p.weights.resize(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (!has_params(model.layers[l])) continue;
    p.weights[l] = model.params.at(weight_name(l)).data;
    if (model.quant_bits > 0) quantize_inplace(p.weights[l], model.quant_bits);
  }
  return p;
}

struct SampleTrace {
  std::vector<std::vector<double>> inputs;  // what each layer consumed
  std::vector<double> mac0;                 // layer 0 weighted sums, no bias
  std::vector<double> logits;
};

SampleTrace run_sample(const ModelGraph& model, const Prepared& p,
                       std::span<const double> x) {
  SampleTrace t;
  t.inputs.resize(model.layers.size());
  std::vector<double> cur(x.begin(), x.end());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    if (has_params(layer) && model.quant_bits > 0) quantize_inplace(cur, model.quant_bits);
    std::vector<double> out(shape_numel(p.out_shapes[l]));
    std::visit(
        overloaded{
            [&](const Conv2dSpec& s) {
              const auto g = conv_geom(p.in_shapes[l], s);
              conv_forward(g, cur.data(), p.weights[l].data(), out.data());
              if (l == 0) t.mac0 = out;
              const auto& b = model.params.at(bias_name(l)).data;
              const auto plane = g.out_h * g.out_w;
              for (std::size_t o = 0; o < g.out_c; ++o)
                for (std::size_t k = 0; k < plane; ++k) out[o * plane + k] += b[o];
            },
            [&](const DenseSpec& s) {
              dense_forward(cur.size(), s.out, cur.data(), p.weights[l].data(), out.data());
              if (l == 0) t.mac0 = out;
              const auto& b = model.params.at(bias_name(l)).data;
              for (std::size_t o = 0; o < s.out; ++o) out[o] += b[o];
            },
            [&](const ReluSpec&) {
              for (std::size_t i = 0; i < cur.size(); ++i) out[i] = cur[i] > 0.0 ? cur[i] : 0.0;
            },
            [&](const FlattenSpec&) { out = cur; },
        },
        layer);
    for (double v : out) {
      if (!std::isfinite(v)) {
        throw NumericError("non-finite output at layer " + std::to_string(l));
      }
    }
    t.inputs[l] = std::move(cur);
    cur = std::move(out);
  }
  t.logits = std::move(cur);
  return t;
}

void check_batch(const ModelGraph& model, const Tensor& x) {
  if (x.shape.size() != model.input_shape.size() + 1 ||
      !std::equal(model.input_shape.begin(), model.input_shape.end(), x.shape.begin() + 1)) {
    throw ConfigError("input shape " + shape_to_string(x.shape) +
                      " does not match model input [B," +
                      shape_to_string(model.input_shape).substr(1));
  }
}

struct CeTerms {
  double loss;
  std::vector<double> probs;
};

CeTerms cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw ConfigError("label " + std::to_string(label) + " out of range");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double lse = mx + std::log(sum);
  CeTerms out{lse - logits[static_cast<std::size_t>(label)], {}};
  out.probs.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out.probs[k] = std::exp(logits[k] - lse);
  return out;
}

double mean_abs(std::span<const double> v) {
  double s = 0.0;
  for (double z : v) s += std::abs(z);
  return s / static_cast<double>(v.size());
}

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double soi_target(const LossSpec& loss, int adv) { return adv ? loss.lambda_a : loss.lambda_c; }

void check_labels(const Tensor& x, std::span<const int> labels, const LossSpec& loss,
                  std::span<const int> is_adv) {
  if (labels.size() != x.shape[0]) throw ConfigError("label count does not match batch");
  if (loss.kind == LossKind::phase1 && is_adv.size() != x.shape[0]) {
    throw ConfigError("phase1 loss needs one is_adv flag per sample");
  }
}

}  // namespace

bool has_params(const LayerSpec& layer) {
  return std::holds_alternative<Conv2dSpec>(layer) || std::holds_alternative<DenseSpec>(layer);
}

std::string layer_kind(const LayerSpec& layer) {
  return std::visit(overloaded{[](const Conv2dSpec&) { return std::string("conv2d"); },
                               [](const DenseSpec&) { return std::string("dense"); },
                               [](const ReluSpec&) { return std::string("relu"); },
                               [](const FlattenSpec&) { return std::string("flatten"); }},
                    layer);
}

std::string weight_name(std::size_t layer) { return std::to_string(layer) + ".weight"; }
std::string bias_name(std::size_t layer) { return std::to_string(layer) + ".bias"; }

std::vector<Shape> layer_output_shapes(const ModelGraph& model) {
  std::vector<Shape> out;
  Shape cur = model.input_shape;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    cur = std::visit(overloaded{[&](const Conv2dSpec& s) {
                                  const auto g = conv_geom(cur, s);
                                  return Shape{g.out_c, g.out_h, g.out_w};
                                },
                                [&](const DenseSpec& s) {
                                  if (cur.size() != 1) {
                                    throw ConfigError("dense layer " + std::to_string(l) +
                                                      " needs a flat input, got " +
                                                      shape_to_string(cur));
                                  }
                                  if (s.out == 0) throw ConfigError("dense out must be positive");
                                  return Shape{s.out};
                                },
                                [&](const ReluSpec&) { return cur; },
                                [&](const FlattenSpec&) { return Shape{shape_numel(cur)}; }},
                     model.layers[l]);
    out.push_back(cur);
  }
  return out;
}

void validate_model(const ModelGraph& model) {
  if (model.layers.empty() || !has_params(model.layers.front())) {
    throw ConfigError("layer 0 must be conv2d or dense");
  }
  if (model.input_shape.empty() || shape_numel(model.input_shape) == 0) {
    throw ConfigError("model input shape must be non-empty");
  }
  if (model.quant_bits != 0 && (model.quant_bits < 2 || model.quant_bits > 16)) {
    throw ConfigError("quant_bits must be 0 or in [2,16]");
  }
  const auto shapes = layer_output_shapes(model);
  if (shapes.back().size() != 1) throw ConfigError("model must end with a flat logits layer");
  Shape in = model.input_shape;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (has_params(model.layers[l])) {
      Shape wshape;
      if (const auto* c = std::get_if<Conv2dSpec>(&model.layers[l])) {
        wshape = {c->out_channels, in[0], c->kernel, c->kernel};
      } else {
        wshape = {shapes[l][0], in[0]};
      }
      const auto w = model.params.find(weight_name(l));
      const auto b = model.params.find(bias_name(l));
      if (w == model.params.end() || b == model.params.end()) {
        throw ConfigError("missing parameters for layer " + std::to_string(l));
      }
      if (w->second.shape != wshape || b->second.shape != Shape{wshape[0]}) {
        throw ConfigError("parameter shape mismatch at layer " + std::to_string(l));
      }
      if (!w->second.all_finite() || !b->second.all_finite()) {
        throw NumericError("non-finite parameters at layer " + std::to_string(l));
      }
    }
    in = shapes[l];
  }
  for (auto f : model.frozen) {
    if (f >= model.layers.size()) throw ConfigError("frozen index out of range");
  }
}

std::size_t num_classes(const ModelGraph& model) { return layer_output_shapes(model).back()[0]; }

ModelGraph build_model(Shape input_shape, std::vector<LayerSpec> layers, int quant_bits,
                       std::uint64_t seed) {
  ModelGraph m;
  m.input_shape = std::move(input_shape);
  m.layers = std::move(layers);
  m.quant_bits = quant_bits;
  const auto shapes = layer_output_shapes(m);
  Rng rng(seed);
  Shape in = m.input_shape;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    if (has_params(m.layers[l])) {
      Shape wshape;
      std::size_t fan_in = 0;
      if (const auto* c = std::get_if<Conv2dSpec>(&m.layers[l])) {
        wshape = {c->out_channels, in[0], c->kernel, c->kernel};
        fan_in = in[0] * c->kernel * c->kernel;
      } else {
        wshape = {shapes[l][0], in[0]};
        fan_in = in[0];
      }
      Tensor w(wshape);
      const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (auto& v : w.data) v = std * standard_normal(rng);
      m.params[weight_name(l)] = std::move(w);
      m.params[bias_name(l)] = Tensor(Shape{wshape[0]});
    }
    in = shapes[l];
  }
  validate_model(m);
  return m;
}

std::vector<LayerSpec> mini_vgg_layers(std::size_t classes) {
  return {Conv2dSpec{8, 3, 2, 1}, ReluSpec{},       Conv2dSpec{16, 3, 2, 1}, ReluSpec{},
          FlattenSpec{},          DenseSpec{32},    ReluSpec{},              DenseSpec{classes}};
}

void validate_loss(const LossSpec& loss) {
  if (loss.kind == LossKind::phase1) {
    if (!(loss.beta >= 0.0) || !std::isfinite(loss.beta)) {
      throw ConfigError("phase1 beta must be finite and non-negative");
    }
    if (!(loss.lambda_c >= 0.0 && loss.lambda_a > loss.lambda_c)) {
      throw ConfigError("phase1 targets need lambda_a > lambda_c >= 0");
    }
  }
}

ForwardResult forward(const ModelGraph& model, const Tensor& x) {
  check_batch(model, x);
  const auto p = prepare(model);
  const auto batch = x.shape[0];
  Shape lshape{batch, p.out_shapes.back()[0]};
  Shape mshape{batch};
  mshape.insert(mshape.end(), p.out_shapes[0].begin(), p.out_shapes[0].end());
  ForwardResult r{Tensor(lshape), Tensor(mshape)};
  for (std::size_t i = 0; i < batch; ++i) {
    const auto t = run_sample(model, p, x.item(i));
    std::copy(t.logits.begin(), t.logits.end(), r.logits.item(i).begin());
    std::copy(t.mac0.begin(), t.mac0.end(), r.first_layer_mac.item(i).begin());
  }
  return r;
}

Tensor first_layer_mac(const ModelGraph& model, const Tensor& x) {
  check_batch(model, x);
  const auto shapes = layer_output_shapes(model);
  std::vector<double> w = model.params.at(weight_name(0)).data;
  if (model.quant_bits > 0) quantize_inplace(w, model.quant_bits);
  Shape oshape{x.shape[0]};
  oshape.insert(oshape.end(), shapes[0].begin(), shapes[0].end());
  Tensor out(oshape);
  std::vector<double> in;
  for (std::size_t i = 0; i < x.shape[0]; ++i) {
    const auto src = x.item(i);
    in.assign(src.begin(), src.end());
    if (model.quant_bits > 0) quantize_inplace(in, model.quant_bits);
    auto dst = out.item(i);
    if (const auto* c = std::get_if<Conv2dSpec>(&model.layers[0])) {
      conv_forward(conv_geom(model.input_shape, *c), in.data(), w.data(), dst.data());
    } else {
      dense_forward(in.size(), dst.size(), in.data(), w.data(), dst.data());
    }
  }
  return out;
}

std::vector<int> predict(const ModelGraph& model, const Tensor& x) {
  const auto r = forward(model, x);
  std::vector<int> out(x.shape[0]);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = r.logits.item(i);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double loss_value(const ModelGraph& model, const Tensor& x, std::span<const int> labels,
                  const LossSpec& loss, std::span<const int> is_adv) {
  validate_loss(loss);
  check_batch(model, x);
  check_labels(x, labels, loss, is_adv);
  const auto p = prepare(model);
  const auto batch = x.shape[0];
  const double coef = loss.reduction == Reduction::mean ? 1.0 / static_cast<double>(batch) : 1.0;
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const auto t = run_sample(model, p, x.item(i));
    const double ce = cross_entropy(t.logits, labels[i]).loss;
    if (loss.kind == LossKind::cross_entropy) {
      total += coef * ce;
    } else {
      const double d = mean_abs(t.mac0) - soi_target(loss, is_adv[i]);
      total += coef * (loss.beta * ce + d * d);
    }
  }
  if (!std::isfinite(total)) throw NumericError("non-finite loss");
  return total;
}

namespace {

BackwardResult backward_impl(const ModelGraph& model, const Tensor& x,
                             std::span<const int> labels, const LossSpec& loss,
                             std::span<const int> is_adv, bool with_params) {
  validate_loss(loss);
  check_batch(model, x);
  check_labels(x, labels, loss, is_adv);
  const auto p = prepare(model);
  const auto batch = x.shape[0];
  const double coef = loss.reduction == Reduction::mean ? 1.0 / static_cast<double>(batch) : 1.0;

  BackwardResult r;
  r.input_grad = Tensor(x.shape);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (!with_params || !has_params(model.layers[l]) || model.frozen.contains(l)) continue;
    r.param_grads[weight_name(l)] = Tensor(model.params.at(weight_name(l)).shape);
    r.param_grads[bias_name(l)] = Tensor(model.params.at(bias_name(l)).shape);
  }

  for (std::size_t i = 0; i < batch; ++i) {
    const auto t = run_sample(model, p, x.item(i));
    const auto ce = cross_entropy(t.logits, labels[i]);
    const double ce_weight = loss.kind == LossKind::cross_entropy ? 1.0 : loss.beta;
    double soi_grad = 0.0;
    if (loss.kind == LossKind::cross_entropy) {
      r.loss_value += coef * ce.loss;
    } else {
      const double d = mean_abs(t.mac0) - soi_target(loss, is_adv[i]);
      r.loss_value += coef * (loss.beta * ce.loss + d * d);
      soi_grad = coef * 2.0 * d / static_cast<double>(t.mac0.size());
    }

    std::vector<double> g(ce.probs.size());
    for (std::size_t k = 0; k < g.size(); ++k) {
      g[k] = coef * ce_weight * (ce.probs[k] - (static_cast<int>(k) == labels[i] ? 1.0 : 0.0));
    }

    for (std::size_t l = model.layers.size(); l-- > 0;) {
      const auto& in = t.inputs[l];
      std::vector<double> gin(in.size(), 0.0);
      const bool trainable =
          with_params && has_params(model.layers[l]) && !model.frozen.contains(l);
      double* gw = trainable ? r.param_grads[weight_name(l)].data.data() : nullptr;
      double* gb = trainable ? r.param_grads[bias_name(l)].data.data() : nullptr;
      std::visit(
          overloaded{
              [&](const Conv2dSpec& s) {
                const auto geo = conv_geom(p.in_shapes[l], s);
                const auto plane = geo.out_h * geo.out_w;
                if (gb) {
                  for (std::size_t o = 0; o < geo.out_c; ++o) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < plane; ++k) acc += g[o * plane + k];
                    gb[o] += acc;
                  }
                }
                if (l == 0 && soi_grad != 0.0) {
                  for (std::size_t k = 0; k < g.size(); ++k) g[k] += soi_grad * sign_of(t.mac0[k]);
                }
                conv_backward(geo, in.data(), p.weights[l].data(), g.data(), gw, gin.data());
              },
              [&](const DenseSpec& s) {
                if (gb) {
                  for (std::size_t o = 0; o < s.out; ++o) gb[o] += g[o];
                }
                if (l == 0 && soi_grad != 0.0) {
                  for (std::size_t k = 0; k < g.size(); ++k) g[k] += soi_grad * sign_of(t.mac0[k]);
                }
                dense_backward(in.size(), s.out, in.data(), p.weights[l].data(), g.data(), gw,
                               gin.data());
              },
              [&](const ReluSpec&) {
                for (std::size_t k = 0; k < in.size(); ++k) gin[k] = in[k] > 0.0 ? g[k] : 0.0;
              },
              [&](const FlattenSpec&) { gin = g; },
          },
          model.layers[l]);
      g = std::move(gin);
    }
    std::copy(g.begin(), g.end(), r.input_grad.item(i).begin());
  }

  if (!std::isfinite(r.loss_value)) throw NumericError("non-finite loss");
  if (!r.input_grad.all_finite()) throw NumericError("non-finite input gradient");
  return r;
}

}  // namespace

BackwardResult backward(const ModelGraph& model, const Tensor& x, std::span<const int> labels,
                        const LossSpec& loss, std::span<const int> is_adv) {
  return backward_impl(model, x, labels, loss, is_adv, true);
}

Tensor input_gradient(const ModelGraph& model, const Tensor& x, std::span<const int> labels,
                      const LossSpec& loss) {
  return backward_impl(model, x, labels, loss, {}, false).input_grad;
}

void sgd_step(ModelGraph& model, const ParamGrads& grads, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (!has_params(model.layers[l]) || model.frozen.contains(l)) continue;
    for (const auto& name : {weight_name(l), bias_name(l)}) {
      const auto it = grads.find(name);
      if (it == grads.end()) throw ConfigError("missing gradient for " + name);
      auto& p = model.params.at(name);
      if (it->second.data.size() != p.data.size()) {
        throw ConfigError("gradient shape mismatch for " + name);
      }
      for (std::size_t k = 0; k < p.data.size(); ++k) p.data[k] -= lr * it->second.data[k];
    }
  }
}

QuantizedCodes quantize_codes(std::span<const double> values, int bits) {
  if (bits < 2 || bits > 16) throw ConfigError("quantization bits must be in [2,16]");
  QuantizedCodes q;
  q.codes.resize(values.size(), 0);
  double range = 0.0;
  for (double v : values) range = std::max(range, std::abs(v));
  if (range == 0.0) return q;
  const int steps = (1 << bits) - 1;
  q.scale = range / steps;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double pos = (values[i] / range * steps + steps) / 2.0;
    // Midpoints, up to 1e-9 of a step, round up.
    const int level = std::clamp(static_cast<int>(std::floor(pos + 0.5 + 1e-9)), 0, steps);
    q.codes[i] = 2 * level - steps;
  }
  return q;
}

void quantize_inplace(std::span<double> values, int bits) {
  const auto q = quantize_codes(values, bits);
  if (q.scale == 0.0) return;
  const int steps = (1 << bits) - 1;
  double range = 0.0;
  for (double v : values) range = std::max(range, std::abs(v));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int c = q.codes[i];
    // End codes map to the exact range so re-quantizing sees the same range.
    if (c == steps) {
      values[i] = range;
    } else if (c == -steps) {
      values[i] = -range;
    } else {
      values[i] = c * range / steps;
    }
  }
}

Tensor quantize(const Tensor& t, int bits) {
  Tensor out = t;
  quantize_inplace(out.data, bits);
  return out;
}

void save_checkpoint(const ModelGraph& model, const std::filesystem::path& manifest,
                     const std::map<std::string, std::string>& extra) {
  validate_model(model);
  nlohmann::json j;
  j["format"] = "soiguard-checkpoint";
  j["version"] = 1;
  j["input_shape"] = model.input_shape;
  j["quant_bits"] = model.quant_bits;
  j["frozen"] = model.frozen;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : model.layers) j["layers"].push_back(layer_to_json(l));

  std::string blob;
  j["params"] = nlohmann::json::array();
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (!has_params(model.layers[l])) continue;
    for (const auto& name : {weight_name(l), bias_name(l)}) {
      const auto& t = model.params.at(name);
      j["params"].push_back({{"name", name},
                             {"shape", t.shape},
                             {"offset", blob.size() / sizeof(double)},
                             {"count", t.data.size()}});
      for (double v : t.data) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        char buf[8];
        std::memcpy(buf, &bits, 8);
        blob.append(buf, 8);
      }
    }
  }
  auto blob_path = manifest;
  blob_path.replace_extension(".bin");
  if (blob_path == manifest) blob_path += ".bin";
  j["blob"] = blob_path.filename().string();
  j["blob_sha1"] = git_blob_sha1(blob);
  j["extra"] = extra;
  write_file_atomic(blob_path, blob);
  write_file_atomic(manifest, j.dump(2) + "\n");
}

ModelGraph load_checkpoint(const std::filesystem::path& manifest,
                           std::map<std::string, std::string>* extra) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_text(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
  try {
    if (j.at("format") != "soiguard-checkpoint") {
      throw FormatError(manifest.string() + ": not a soiguard checkpoint");
    }
    ModelGraph m;
    m.input_shape = j.at("input_shape").get<Shape>();
    m.quant_bits = j.at("quant_bits").get<int>();
    m.frozen = j.at("frozen").get<std::set<std::size_t>>();
    for (const auto& l : j.at("layers")) m.layers.push_back(layer_from_json(l));
    const auto blob_path = manifest.parent_path() / j.at("blob").get<std::string>();
    const auto bytes = read_file_bytes(blob_path);
    const std::string_view blob(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    if (git_blob_sha1(blob) != j.at("blob_sha1").get<std::string>()) {
      throw FormatError(blob_path.string() + ": content hash mismatch");
    }
    for (const auto& p : j.at("params")) {
      const auto offset = p.at("offset").get<std::size_t>();
      const auto count = p.at("count").get<std::size_t>();
      if ((offset + count) * 8 > bytes.size()) {
        throw FormatError(blob_path.string() + ": truncated parameter blob");
      }
      std::vector<double> vals(count);
      for (std::size_t k = 0; k < count; ++k) {
        std::uint64_t bits;
        std::memcpy(&bits, bytes.data() + (offset + k) * 8, 8);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        vals[k] = std::bit_cast<double>(bits);
      }
      m.params[p.at("name").get<std::string>()] =
          Tensor(p.at("shape").get<Shape>(), std::move(vals));
    }
    if (extra && j.contains("extra")) *extra = j["extra"].get<std::map<std::string, std::string>>();
    validate_model(m);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
}

}  // namespace soiguard
