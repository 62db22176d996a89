#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace soiguard {

struct Dataset {
  Tensor images;  // [N, C, H, W], values in [0,1]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset head(std::size_t n) const;
};

struct DataSplit {
  Dataset train;
  Dataset test;
};

struct SyntheticOptions {
  std::size_t classes = 2;
  std::size_t channels = 1;
  std::size_t size = 16;
  std::size_t n_train = 512;
  std::size_t n_test = 256;
  double noise = 0.05;
};

struct DatasetOptions {
  std::string name = "mnist";  // mnist | fashion_mnist | synthetic | cifar10_subset
  std::filesystem::path dir;
  std::size_t n_train = 0;  // 0 keeps every sample
  std::size_t n_test = 0;
  std::vector<int> classes;  // cifar10_subset class filter; empty keeps all
  std::uint64_t seed = 0;    // synthetic only
  SyntheticOptions synthetic;
};

/// IDX image file (magic 0x00000803) scaled to [0,1], shape [N,1,H,W].
Tensor read_idx_images(const std::filesystem::path& path);
/// IDX label file (magic 0x00000801).
std::vector<int> read_idx_labels(const std::filesystem::path& path);

/// CIFAR-10 binary batch: records of 1 label byte + 3072 CHW pixel bytes.
Dataset read_cifar_batch(const std::filesystem::path& path);

Dataset make_synthetic(const SyntheticOptions& opt, std::uint64_t seed, bool test_split);

DataSplit load_dataset(const DatasetOptions& opt);

}  // namespace soiguard
