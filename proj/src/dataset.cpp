#include "dataset.hpp"

#include <algorithm>
#include <cmath>

#include "errors.hpp"
#include "io.hpp"
#include "rng.hpp"

namespace soiguard {

namespace {

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

Dataset limit(Dataset d, std::size_t n) { return n == 0 || n >= d.size() ? d : d.head(n); }

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset d;
  d.images = gather_batch(images, indices);
  d.labels.reserve(indices.size());
  for (auto i : indices) d.labels.push_back(labels.at(i));
  return d;
}

Dataset Dataset::head(std::size_t n) const {
  n = std::min(n, size());
  return {slice_batch(images, 0, n), std::vector<int>(labels.begin(), labels.begin() + n)};
}

Tensor read_idx_images(const std::filesystem::path& path) {
  const auto b = read_file_bytes(path);
  if (b.size() < 16) throw FormatError(path.string() + ": truncated IDX header");
  const auto magic = be32(b, 0);
  if (magic != 0x00000803) {
    throw FormatError(path.string() + ": bad IDX image magic " + hex32(magic));
  }
  const std::size_t n = be32(b, 4), rows = be32(b, 8), cols = be32(b, 12);
  if (b.size() < 16 + n * rows * cols) {
    throw FormatError(path.string() + ": truncated IDX image data");
  }
  Tensor t(Shape{n, 1, rows, cols});
  for (std::size_t k = 0; k < t.data.size(); ++k) t.data[k] = b[16 + k] / 255.0;
  return t;
}

std::vector<int> read_idx_labels(const std::filesystem::path& path) {
  const auto b = read_file_bytes(path);
  if (b.size() < 8) throw FormatError(path.string() + ": truncated IDX header");
  const auto magic = be32(b, 0);
  if (magic != 0x00000801) {
    throw FormatError(path.string() + ": bad IDX label magic " + hex32(magic));
  }
  const std::size_t n = be32(b, 4);
  if (b.size() < 8 + n) throw FormatError(path.string() + ": truncated IDX label data");
  return std::vector<int>(b.begin() + 8, b.begin() + 8 + static_cast<std::ptrdiff_t>(n));
}

Dataset read_cifar_batch(const std::filesystem::path& path) {
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  const auto b = read_file_bytes(path);
  if (b.empty() || b.size() % kRecord != 0) {
    throw FormatError(path.string() + ": size is not a multiple of the CIFAR record size");
  }
  const std::size_t n = b.size() / kRecord;
  Dataset d{Tensor(Shape{n, 3, 32, 32}), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto* rec = b.data() + i * kRecord;
    if (rec[0] > 9) throw FormatError(path.string() + ": label out of range");
    d.labels[i] = rec[0];
    auto dst = d.images.item(i);
    for (std::size_t k = 0; k < kRecord - 1; ++k) dst[k] = rec[1 + k] / 255.0;
  }
  return d;
}

Dataset make_synthetic(const SyntheticOptions& opt, std::uint64_t seed, bool test_split) {
  if (opt.classes < 2 || opt.size < 4 || opt.channels == 0) {
    throw ConfigError("synthetic dataset needs >= 2 classes and size >= 4");
  }
  // Class prototypes depend on the seed only; samples differ per split.
  Rng proto_rng(derive_seed(seed, 0x70726f746fULL));
  const std::size_t c = opt.channels, s = opt.size;
  std::vector<std::vector<double>> protos(opt.classes, std::vector<double>(c * s * s, 0.0));
  for (auto& p : protos) {
    for (int blob = 0; blob < 3; ++blob) {
      const double cy = uniform(proto_rng, 0.2, 0.8) * s;
      const double cx = uniform(proto_rng, 0.2, 0.8) * s;
      const double rad = uniform(proto_rng, 0.08, 0.2) * s;
      const auto ch = static_cast<std::size_t>(proto_rng() % c);
      for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          p[(ch * s + y) * s + x] += std::exp(-d2 / (2 * rad * rad));
        }
      }
    }
    for (auto& v : p) v = std::min(v, 1.0);
  }
  const std::size_t n = test_split ? opt.n_test : opt.n_train;
  Rng rng(derive_seed(seed, test_split ? 2 : 1));
  Dataset d{Tensor(Shape{n, c, s, s}), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<int>(i % opt.classes);
    d.labels[i] = label;
    const double gain = uniform(rng, 0.7, 1.0);
    auto dst = d.images.item(i);
    for (std::size_t k = 0; k < dst.size(); ++k) {
      dst[k] = std::clamp(gain * protos[label][k] + opt.noise * standard_normal(rng), 0.0, 1.0);
    }
  }
  return d;
}

DataSplit load_dataset(const DatasetOptions& opt) {
  if (opt.name == "synthetic") {
    return {make_synthetic(opt.synthetic, opt.seed, false),
            make_synthetic(opt.synthetic, opt.seed, true)};
  }
  if (opt.name == "mnist" || opt.name == "fashion_mnist") {
    auto load = [&](const char* img, const char* lbl) {
      Dataset d{read_idx_images(opt.dir / img), read_idx_labels(opt.dir / lbl)};
      if (d.images.shape[0] != d.labels.size()) {
        throw FormatError((opt.dir / img).string() + ": image/label count mismatch (" +
                          std::to_string(d.images.shape[0]) + " vs " +
                          std::to_string(d.labels.size()) + ")");
      }
      return d;
    };
    return {limit(load("train-images-idx3-ubyte", "train-labels-idx1-ubyte"), opt.n_train),
            limit(load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"), opt.n_test)};
  }
  if (opt.name == "cifar10_subset") {
    auto filter = [&](const Dataset& d, std::size_t n) {
      std::vector<std::size_t> keep;
      std::vector<int> relabel;
      for (std::size_t i = 0; i < d.size() && (n == 0 || keep.size() < n); ++i) {
        if (opt.classes.empty()) {
          keep.push_back(i);
          relabel.push_back(d.labels[i]);
          continue;
        }
        const auto it = std::find(opt.classes.begin(), opt.classes.end(), d.labels[i]);
        if (it == opt.classes.end()) continue;
        keep.push_back(i);
        relabel.push_back(static_cast<int>(it - opt.classes.begin()));
      }
      auto out = d.subset(keep);
      out.labels = relabel;
      return out;
    };
    Dataset train;
    std::vector<Dataset> parts;
    for (int b = 1; b <= 5; ++b) {
      const auto p = opt.dir / ("data_batch_" + std::to_string(b) + ".bin");
      if (std::filesystem::exists(p)) parts.push_back(read_cifar_batch(p));
    }
    if (parts.empty()) throw IoError(opt.dir.string() + ": no data_batch_*.bin files");
    std::size_t total = 0;
    for (const auto& p : parts) total += p.size();
    train.images = Tensor(Shape{total, 3, 32, 32});
    std::size_t off = 0;
    for (const auto& p : parts) {
      std::copy(p.images.data.begin(), p.images.data.end(),
                train.images.data.begin() + static_cast<std::ptrdiff_t>(off * 3072));
      train.labels.insert(train.labels.end(), p.labels.begin(), p.labels.end());
      off += p.size();
    }
    return {filter(train, opt.n_train), filter(read_cifar_batch(opt.dir / "test_batch.bin"), opt.n_test)};
  }
  throw ConfigError("unknown dataset '" + opt.name + "'");
}

}  // namespace soiguard
