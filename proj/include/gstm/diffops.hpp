#pragma once

// Differentiable primitives for the generator: transposed convolution,
// leaky ReLU and tanh, each with a forward map and a vector-Jacobian product.
// The generator is a fixed feed-forward chain, so backpropagation is a
// hand-written reverse sweep over these; there is no tape or graph.

#include "common.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <sstream>

namespace gstm {

/// A single activation volume laid out channel-major: data[(c * height + y) * width + x].
template <typename T>
struct FeatureMap
{
  Index channels = 0;
  Index height = 0;
  Index width = 0;
  std::vector<T> data;

  FeatureMap() = default;
  FeatureMap(Index c, Index h, Index w, T fill = T(0))
    : channels(c)
    , height(h)
    , width(w)
    , data(static_cast<size_t>(c * h * w), fill)
  {
    if (c < 1 || h < 1 || w < 1) {
      throw ShapeError("FeatureMap dimensions must be positive");
    }
  }

  Index size() const { return channels * height * width; }
  T &operator()(Index c, Index y, Index x) { return data[static_cast<size_t>((c * height + y) * width + x)]; }
  T const &operator()(Index c, Index y, Index x) const
  {
    return data[static_cast<size_t>((c * height + y) * width + x)];
  }
  std::span<T const> span() const { return data; }
  bool same_shape(FeatureMap const &o) const
  {
    return channels == o.channels && height == o.height && width == o.width;
  }
  std::string shape_str() const
  {
    std::ostringstream s;
    s << channels << "x" << height << "x" << width;
    return s.str();
  }
};

/// Transposed-convolution weights. kernel is laid out (in_channels, out_channels, k, k).
template <typename T>
struct LayerWeights
{
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel_size = 0;
  Index stride = 1;
  Index padding = 0;
  std::vector<T> kernel;
  std::vector<T> bias;

  LayerWeights() = default;
  LayerWeights(Index cin, Index cout, Index k, Index s, Index p)
    : in_channels(cin)
    , out_channels(cout)
    , kernel_size(k)
    , stride(s)
    , padding(p)
    , kernel(static_cast<size_t>(cin * cout * k * k), T(0))
    , bias(static_cast<size_t>(cout), T(0))
  {
    if (cin < 1 || cout < 1 || k < 1 || s < 1 || p < 0) {
      throw ShapeError("invalid transposed-convolution geometry");
    }
  }

  Index output_extent(Index in) const { return (in - 1) * stride - 2 * padding + kernel_size; }
  Index param_count() const { return Index(kernel.size() + bias.size()); }

  T &at(Index ci, Index co, Index ky, Index kx)
  {
    return kernel[static_cast<size_t>(((ci * out_channels + co) * kernel_size + ky) * kernel_size + kx)];
  }
  T at(Index ci, Index co, Index ky, Index kx) const
  {
    return kernel[static_cast<size_t>(((ci * out_channels + co) * kernel_size + ky) * kernel_size + kx)];
  }

  template <typename U>
  LayerWeights<U> cast() const
  {
    LayerWeights<U> o(in_channels, out_channels, kernel_size, stride, padding);
    std::transform(kernel.begin(), kernel.end(), o.kernel.begin(), [](T v) { return U(v); });
    std::transform(bias.begin(), bias.end(), o.bias.begin(), [](T v) { return U(v); });
    return o;
  }
};

/// Gradients of a scalar with respect to one layer's kernel and bias.
template <typename T>
struct LayerGrads
{
  std::vector<T> kernel;
  std::vector<T> bias;

  LayerGrads() = default;
  explicit LayerGrads(LayerWeights<T> const &w)
    : kernel(w.kernel.size(), T(0))
    , bias(w.bias.size(), T(0))
  {
  }
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void check_finite(FeatureMap<T> const &x, char const *what)
{
  if (!all_finite(std::span<T const>(x.data))) {
    throw NonFiniteError(std::string(what) + ": non-finite input");
  }
}

template <typename T>
void check_input(FeatureMap<T> const &x, LayerWeights<T> const &w)
{
  if (x.channels != w.in_channels) {
    throw ShapeError(
      "conv_transpose2d: input has " + std::to_string(x.channels) + " channels, layer expects " +
      std::to_string(w.in_channels));
  }
  if (w.output_extent(x.height) < 1 || w.output_extent(x.width) < 1) {
    throw ShapeError("conv_transpose2d: layer geometry yields an empty output for input " + x.shape_str());
  }
}

// Input indices [first, last) whose tap kx lands inside the output row.
inline std::pair<Index, Index> valid_range(Index W, Index Wo, Index s, Index p, Index kx)
{
  Index const first = std::max<Index>(0, (p - kx + s - 1) / s);
  Index const last = std::min<Index>(W, (Wo - 1 + p - kx) / s + 1);
  return {first, std::max(first, last)};
}

} // namespace detail

/// out[co, iy*s - p + ky, ix*s - p + kx] += in[ci, iy, ix] * kernel[ci, co, ky, kx], plus bias[co].
template <typename T>
FeatureMap<T> conv_transpose2d(FeatureMap<T> const &input, LayerWeights<T> const &w)
{
  detail::check_input(input, w);
  detail::check_finite(input, "conv_transpose2d");
  using Mat = detail::RowMat<T>;
  Index const H = input.height, W = input.width, k = w.kernel_size, s = w.stride, p = w.padding;
  Index const Ho = w.output_extent(H), Wo = w.output_extent(W);
  Index const taps = w.out_channels * k * k;

  Eigen::Map<Mat const> X(input.data.data(), w.in_channels, H * W);
  Eigen::Map<Mat const> K(w.kernel.data(), w.in_channels, taps);
  Mat cols = K.transpose() * X;

  FeatureMap<T> out(w.out_channels, Ho, Wo);
  for (Index co = 0; co < w.out_channels; co++) {
    std::fill_n(out.data.begin() + co * Ho * Wo, Ho * Wo, w.bias[static_cast<size_t>(co)]);
    for (Index ky = 0; ky < k; ky++) {
      for (Index kx = 0; kx < k; kx++) {
        T const *row = cols.data() + ((co * k + ky) * k + kx) * H * W;
        for (Index iy = 0; iy < H; iy++) {
          Index const oy = iy * s - p + ky;
          if (oy < 0 || oy >= Ho) {
            continue;
          }
          auto const [x0, x1] = detail::valid_range(W, Wo, s, p, kx);
          T *orow = &out(co, oy, 0) + (kx - p);
          T const *crow = row + iy * W;
          for (Index ix = x0; ix < x1; ix++) {
            orow[ix * s] += crow[ix];
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
struct ConvTransposeGrads
{
  FeatureMap<T> input;
  LayerGrads<T> weights;
};

/// Gradients of <cotangent, conv_transpose2d(input, w)> with respect to input, kernel and bias.
/// When `need_input` is false the input gradient is left empty (first layer of a chain).
template <typename T>
ConvTransposeGrads<T> conv_transpose2d_vjp(
  FeatureMap<T> const &input, LayerWeights<T> const &w, FeatureMap<T> const &cotangent, bool need_input = true)
{
  detail::check_input(input, w);
  Index const H = input.height, W = input.width, k = w.kernel_size, s = w.stride, p = w.padding;
  Index const Ho = w.output_extent(H), Wo = w.output_extent(W);
  if (cotangent.channels != w.out_channels || cotangent.height != Ho || cotangent.width != Wo) {
    throw ShapeError(
      "conv_transpose2d_vjp: cotangent " + cotangent.shape_str() + " does not match output " +
      std::to_string(w.out_channels) + "x" + std::to_string(Ho) + "x" + std::to_string(Wo));
  }
  using Mat = detail::RowMat<T>;
  Index const taps = w.out_channels * k * k;

  // Gather the cotangent into the column layout used by the forward pass.
  Mat dcols = Mat::Zero(taps, H * W);
  for (Index co = 0; co < w.out_channels; co++) {
    for (Index ky = 0; ky < k; ky++) {
      for (Index kx = 0; kx < k; kx++) {
        T *row = dcols.data() + ((co * k + ky) * k + kx) * H * W;
        for (Index iy = 0; iy < H; iy++) {
          Index const oy = iy * s - p + ky;
          if (oy < 0 || oy >= Ho) {
            continue;
          }
          auto const [x0, x1] = detail::valid_range(W, Wo, s, p, kx);
          T const *grow = &cotangent(co, oy, 0) + (kx - p);
          T *drow = row + iy * W;
          for (Index ix = x0; ix < x1; ix++) {
            drow[ix] = grow[ix * s];
          }
        }
      }
    }
  }

  ConvTransposeGrads<T> g;
  g.weights = LayerGrads<T>(w);
  Eigen::Map<Mat const> X(input.data.data(), w.in_channels, H * W);
  Eigen::Map<Mat const> K(w.kernel.data(), w.in_channels, taps);
  Eigen::Map<Mat> dK(g.weights.kernel.data(), w.in_channels, taps);
  dK.noalias() = X * dcols.transpose();
  if (need_input) {
    g.input = FeatureMap<T>(w.in_channels, H, W);
    Eigen::Map<Mat> dX(g.input.data.data(), w.in_channels, H * W);
    dX.noalias() = K * dcols;
  }
  for (Index co = 0; co < w.out_channels; co++) {
    double acc = 0.0;
    for (Index i = 0; i < Ho * Wo; i++) {
      acc += cotangent.data[static_cast<size_t>(co * Ho * Wo + i)];
    }
    g.weights.bias[static_cast<size_t>(co)] = T(acc);
  }
  return g;
}

/// y = x for x >= 0, slope * x otherwise.
template <typename T>
FeatureMap<T> leaky_relu(FeatureMap<T> x, T slope)
{
  if (!(slope > T(0) && slope < T(1))) {
    throw ConfigError("leaky_relu: slope must lie in (0, 1)");
  }
  detail::check_finite(x, "leaky_relu");
  for (auto &v : x.data) {
    v = v >= T(0) ? v : slope * v;
  }
  return x;
}

/// Cotangent times the elementwise derivative. `activation` may be either the
/// pre- or post-activation value: both share a sign, and the subgradient at 0 is 1.
template <typename T>
FeatureMap<T> leaky_relu_vjp(FeatureMap<T> const &activation, FeatureMap<T> cotangent, T slope)
{
  if (!activation.same_shape(cotangent)) {
    throw ShapeError("leaky_relu_vjp: shape mismatch");
  }
  for (size_t i = 0; i < cotangent.data.size(); i++) {
    if (activation.data[i] < T(0)) {
      cotangent.data[i] *= slope;
    }
  }
  return cotangent;
}

template <typename T>
FeatureMap<T> tanh_act(FeatureMap<T> x)
{
  detail::check_finite(x, "tanh_act");
  for (auto &v : x.data) {
    v = std::tanh(v);
  }
  return x;
}

/// Uses the forward output y: d tanh = 1 - y^2.
template <typename T>
FeatureMap<T> tanh_vjp(FeatureMap<T> const &output, FeatureMap<T> cotangent)
{
  if (!output.same_shape(cotangent)) {
    throw ShapeError("tanh_vjp: shape mismatch");
  }
  for (size_t i = 0; i < cotangent.data.size(); i++) {
    T const y = output.data[i];
    cotangent.data[i] *= T(1) - y * y;
  }
  return cotangent;
}

} // namespace gstm
