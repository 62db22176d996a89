#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "nn.hpp"
#include "rng.hpp"

namespace testutil {

/// Small random network; architecture varies with the seed.
inline soiguard::ModelGraph random_model(std::uint64_t seed, int quant_bits = 0) {
  using namespace soiguard;
  Rng rng(seed);
  const std::size_t c = 1 + rng() % 2, hw = 5 + rng() % 3;
  const std::size_t k = 1 + 2 * (rng() % 2), stride = 1 + rng() % 2, pad = rng() % 2;
  const std::size_t oc = 2 + rng() % 3, hidden = 3 + rng() % 4, classes = 2 + rng() % 3;
  std::vector<LayerSpec> layers;
  if (rng() % 4 == 0) {
    layers = {DenseSpec{hidden}, ReluSpec{}, DenseSpec{classes}};
    auto m = build_model({c * hw * hw}, layers, quant_bits, seed);
    for (auto& [name, t] : m.params)
      if (name.ends_with(".bias"))
        for (auto& v : t.data) v = 0.1 * standard_normal(rng);
    return m;
  }
  layers = {Conv2dSpec{oc, k, stride, pad}, ReluSpec{}, FlattenSpec{}, DenseSpec{hidden}, ReluSpec{},
            DenseSpec{classes}};
  auto m = build_model({c, hw, hw}, layers, quant_bits, seed);
  // Non-zero biases so their gradients are exercised too.
  for (auto& [name, t] : m.params)
    if (name.ends_with(".bias"))
      for (auto& v : t.data) v = 0.1 * standard_normal(rng);
  return m;
}

inline soiguard::Tensor random_input(const soiguard::Shape& item, std::size_t batch, std::uint64_t seed) {
  soiguard::Shape s{batch};
  s.insert(s.end(), item.begin(), item.end());
  soiguard::Tensor t(s);
  soiguard::Rng rng(seed);
  for (auto& v : t.data) v = soiguard::uniform01(rng);
  return t;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("soiguard_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
