#include "nn_json.hpp"

#include "errors.hpp"

namespace soiguard {

nlohmann::json layer_to_json(const LayerSpec& layer) {
  if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
    return {{"type", "conv2d"},
            {"out_channels", c->out_channels},
            {"kernel", c->kernel},
            {"stride", c->stride},
            {"pad", c->pad}};
  }
  if (const auto* d = std::get_if<DenseSpec>(&layer)) {
    return {{"type", "dense"}, {"out", d->out}};
  }
  return {{"type", layer_kind(layer)}};
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "conv2d") {
    return Conv2dSpec{j.at("out_channels").get<std::size_t>(), j.at("kernel").get<std::size_t>(),
                      j.value("stride", std::size_t{1}), j.value("pad", std::size_t{0})};
  }
  if (type == "dense") return DenseSpec{j.at("out").get<std::size_t>()};
  if (type == "relu") return ReluSpec{};
  if (type == "flatten") return FlattenSpec{};
  throw ConfigError("unknown layer type '" + type + "'");
}

}  // namespace soiguard
