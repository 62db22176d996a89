#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "errors.hpp"

namespace soiguard {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape s, double fill)
    : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values)
    : shape(std::move(s)), data(std::move(values)) {
  if (shape_numel(shape) != data.size()) {
    throw ConfigError("tensor shape " + shape_to_string(shape) +
                      " does not match " + std::to_string(data.size()) +
                      " values");
  }
}

std::size_t Tensor::item_size() const {
  if (shape.empty() || shape[0] == 0) return 0;
  return data.size() / shape[0];
}

std::span<const double> Tensor::item(std::size_t i) const {
  const auto n = item_size();
  return std::span<const double>(data).subspan(i * n, n);
}

std::span<double> Tensor::item(std::size_t i) {
  const auto n = item_size();
  return std::span<double>(data).subspan(i * n, n);
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor slice_batch(const Tensor& t, std::size_t first, std::size_t count) {
  if (t.shape.empty() || first + count > t.shape[0]) {
    throw ConfigError("batch slice out of range");
  }
  Shape s = t.shape;
  s[0] = count;
  const auto n = t.item_size();
  std::vector<double> d(t.data.begin() + static_cast<std::ptrdiff_t>(first * n),
                        t.data.begin() +
                            static_cast<std::ptrdiff_t>((first + count) * n));
  return Tensor(std::move(s), std::move(d));
}

Tensor gather_batch(const Tensor& t, std::span<const std::size_t> indices) {
  Shape s = t.shape;
  s[0] = indices.size();
  Tensor out(s);
  const auto n = t.item_size();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    auto src = t.item(indices[k]);
    std::copy(src.begin(), src.end(), out.data.begin() + static_cast<std::ptrdiff_t>(k * n));
  }
  return out;
}

}  // namespace soiguard
