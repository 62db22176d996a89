#pragma once

#include <json.hpp>

#include "nn.hpp"

namespace soiguard {

nlohmann::json layer_to_json(const LayerSpec& layer);
LayerSpec layer_from_json(const nlohmann::json& j);

}  // namespace soiguard
