#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace soiguard {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major array of doubles.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  std::size_t numel() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  /// Elements of batch item `i` (leading dimension).
  std::span<const double> item(std::size_t i) const;
  std::span<double> item(std::size_t i);
  std::size_t item_size() const;

  bool all_finite() const;

  bool operator==(const Tensor&) const = default;
};

/// Copy batch items [first, first + count) into a new tensor.
Tensor slice_batch(const Tensor& t, std::size_t first, std::size_t count);

/// Gather batch items by index.
Tensor gather_batch(const Tensor& t, std::span<const std::size_t> indices);

}  // namespace soiguard
