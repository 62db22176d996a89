#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tensor.hpp"

namespace soiguard {

struct Conv2dSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool operator==(const Conv2dSpec&) const = default;
};

struct DenseSpec {
  std::size_t out = 0;
  bool operator==(const DenseSpec&) const = default;
};

struct ReluSpec {
  bool operator==(const ReluSpec&) const = default;
};
struct FlattenSpec {
  bool operator==(const FlattenSpec&) const = default;
};

using LayerSpec = std::variant<Conv2dSpec, DenseSpec, ReluSpec, FlattenSpec>;

bool has_params(const LayerSpec& layer);
std::string layer_kind(const LayerSpec& layer);

/// Ordered layer list plus named parameters. Layer 0 is the SoI layer and
/// must be a conv2d or dense layer.
struct ModelGraph {
  Shape input_shape;  // per sample, e.g. {1, 28, 28}
  std::vector<LayerSpec> layers;
  std::map<std::string, Tensor> params;
  std::set<std::size_t> frozen;
  int quant_bits = 0;  // 0 disables quantization

  bool operator==(const ModelGraph&) const = default;
};

std::string weight_name(std::size_t layer);
std::string bias_name(std::size_t layer);

/// He-normal weights, zero biases.
ModelGraph build_model(Shape input_shape, std::vector<LayerSpec> layers,
                       int quant_bits, std::uint64_t seed);

/// The 2-conv + 2-dense network used at desk scale.
std::vector<LayerSpec> mini_vgg_layers(std::size_t classes);

/// Per-sample output shape of every layer. Throws ConfigError on
/// inconsistent geometry.
std::vector<Shape> layer_output_shapes(const ModelGraph& model);

void validate_model(const ModelGraph& model);
std::size_t num_classes(const ModelGraph& model);

enum class LossKind { cross_entropy, phase1 };
enum class Reduction { mean, sum };

struct LossSpec {
  LossKind kind = LossKind::cross_entropy;
  double beta = 1.0;
  double lambda_c = 0.1;
  double lambda_a = 0.6;
  Reduction reduction = Reduction::mean;
};

void validate_loss(const LossSpec& loss);

struct ForwardResult {
  Tensor logits;           // [B, classes]
  Tensor first_layer_mac;  // [B, ...layer0 out], weighted sums without bias
};

/// x has shape [B, ...input_shape].
ForwardResult forward(const ModelGraph& model, const Tensor& x);

using ParamGrads = std::map<std::string, Tensor>;

struct BackwardResult {
  double loss_value = 0.0;
  ParamGrads param_grads;  // unfrozen parameters only
  Tensor input_grad;
};

/// Gradient of the scalar loss. `is_adv` is required for phase1 losses and
/// selects the SoI target per sample.
BackwardResult backward(const ModelGraph& model, const Tensor& x,
                        std::span<const int> labels, const LossSpec& loss,
                        std::span<const int> is_adv = {});

/// Gradient with respect to the input only.
Tensor input_gradient(const ModelGraph& model, const Tensor& x, std::span<const int> labels,
                      const LossSpec& loss);

/// Loss value only (no gradient bookkeeping).
double loss_value(const ModelGraph& model, const Tensor& x,
                  std::span<const int> labels, const LossSpec& loss,
                  std::span<const int> is_adv = {});

void sgd_step(ModelGraph& model, const ParamGrads& grads, double lr);

std::vector<int> predict(const ModelGraph& model, const Tensor& x);

/// Layer-0 weighted sums (bias excluded) without running the rest of the net.
Tensor first_layer_mac(const ModelGraph& model, const Tensor& x);

/// Symmetric uniform quantizer over [-max|t|, max|t|] with 2^bits levels
/// (2^bits - 1 steps). Level codes are odd integers in [-(2^bits-1), 2^bits-1].
Tensor quantize(const Tensor& t, int bits);
void quantize_inplace(std::span<double> values, int bits);

struct QuantizedCodes {
  std::vector<int> codes;
  double scale = 0.0;  // value = code * scale
};
QuantizedCodes quantize_codes(std::span<const double> values, int bits);

/// Manifest JSON next to a little-endian float64 blob. Extra string fields
/// (e.g. config_hash) are stored verbatim in the manifest.
void save_checkpoint(const ModelGraph& model,
                     const std::filesystem::path& manifest,
                     const std::map<std::string, std::string>& extra = {});
ModelGraph load_checkpoint(const std::filesystem::path& manifest,
                           std::map<std::string, std::string>* extra = nullptr);

}  // namespace soiguard
