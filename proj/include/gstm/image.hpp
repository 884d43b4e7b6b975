#pragma once

#include "common.hpp"

#include <algorithm>

namespace gstm {

/// Square complex image, row-major: values[y * size + x]. Pixel (y, x) sits at the
/// spatial offset (x - size/2, y - size/2) from the grid centre.
template <typename T>
struct ComplexImage
{
  Index size = 0;
  std::vector<Cx<T>> values;

  ComplexImage() = default;
  explicit ComplexImage(Index n, Cx<T> fill = Cx<T>(0))
    : size(n)
    , values(static_cast<size_t>(n * n), fill)
  {
    if (n < 1) {
      throw ShapeError("ComplexImage size must be positive");
    }
  }

  Cx<T> &operator()(Index y, Index x) { return values[static_cast<size_t>(y * size + x)]; }
  Cx<T> operator()(Index y, Index x) const { return values[static_cast<size_t>(y * size + x)]; }
  Index pixels() const { return size * size; }
  std::span<Cx<T> const> span() const { return values; }

  template <typename U>
  ComplexImage<U> cast() const
  {
    ComplexImage<U> o(size);
    std::transform(values.begin(), values.end(), o.values.begin(), [](Cx<T> v) { return Cx<U>(v); });
    return o;
  }
};

/// Time series of frames; the columns of the Casoratti matrix.
template <typename T>
using ImageSeries = std::vector<ComplexImage<T>>;

template <typename T>
void check_same_shape(ImageSeries<T> const &a, ImageSeries<T> const &b, char const *what)
{
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError(std::string(what) + ": series lengths differ or are empty");
  }
  for (size_t i = 0; i < a.size(); i++) {
    if (a[i].size != b[i].size) {
      throw ShapeError(std::string(what) + ": frame sizes differ");
    }
  }
}

} // namespace gstm
