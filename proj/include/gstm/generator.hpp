#pragma once

// Convolutional generator mapping a latent vector to a two-channel (real,
// imaginary) image, plus the Jacobian and curve-length quantities built on it.

#include "diffops.hpp"
#include "image.hpp"

#include <random>

namespace gstm {

enum class Activation
{
  LeakyRelu,
  Tanh,
  Identity
};

struct LayerSpec
{
  Index out_channels;
  Index kernel_size;
  Index stride;
  Index padding;
};

/// Layer plan (excluding the latent input width) for a preset at width multiplier d.
/// paper340 is the full-size 340x340 network; desk64 keeps the same channel decay
/// and reaches 64x64 with four stride-2 doublings.
inline std::vector<LayerSpec> preset_layers(std::string const &preset, Index d)
{
  if (d < 1) {
    throw ConfigError("generator width multiplier d must be >= 1");
  }
  if (preset == "paper340") {
    return {
      {100, 1, 1, 0},   // 1 -> 1
      {8 * d, 3, 1, 0}, // 1 -> 3
      {8 * d, 3, 1, 0}, // 3 -> 5
      {4 * d, 4, 2, 1}, // 5 -> 10
      {4 * d, 4, 2, 1}, // 10 -> 20
      {4 * d, 3, 2, 0}, // 20 -> 41
      {2 * d, 5, 2, 0}, // 41 -> 85; a padding of 1 would give 83
      {d, 4, 2, 1},     // 85 -> 170
      {d, 4, 2, 1},     // 170 -> 340
      {2, 3, 1, 1},     // 340 -> 340; stride 2 would not preserve the size
    };
  }
  if (preset == "desk64") {
    return {
      {100, 1, 1, 0},   // 1 -> 1
      {8 * d, 4, 1, 0}, // 1 -> 4
      {8 * d, 4, 2, 1}, // 4 -> 8
      {4 * d, 4, 2, 1}, // 8 -> 16
      {2 * d, 4, 2, 1}, // 16 -> 32
      {d, 4, 2, 1},     // 32 -> 64
      {2, 3, 1, 1},     // 64 -> 64
    };
  }
  throw ConfigError("unknown generator preset '" + preset + "' (expected paper340 or desk64)");
}

template <typename T>
struct GeneratorParams
{
  std::string preset;
  Index d = 0;
  Index latent_dim = 0;
  T leaky_slope = T(0.1);
  std::vector<LayerWeights<T>> layers;
  std::vector<Activation> activations;

  Index param_count() const
  {
    Index n = 0;
    for (auto const &l : layers) {
      n += l.param_count();
    }
    return n;
  }

  /// Spatial size of the generated image; also validates the layer chain.
  Index output_size() const
  {
    if (layers.empty() || layers.size() != activations.size()) {
      throw ShapeError("generator has no layers or mismatched activation plan");
    }
    if (layers.front().in_channels != latent_dim) {
      throw ShapeError("first layer does not consume the latent vector");
    }
    if (layers.back().out_channels != 2) {
      throw ShapeError("last layer must emit two channels (real, imaginary)");
    }
    Index extent = 1;
    for (size_t i = 0; i < layers.size(); i++) {
      if (i > 0 && layers[i].in_channels != layers[i - 1].out_channels) {
        throw ShapeError("layer " + std::to_string(i) + " input channels do not chain");
      }
      extent = layers[i].output_extent(extent);
      if (extent < 1) {
        throw ShapeError("layer " + std::to_string(i) + " collapses the spatial extent");
      }
    }
    return extent;
  }

  template <typename U>
  GeneratorParams<U> cast() const
  {
    GeneratorParams<U> o;
    o.preset = preset;
    o.d = d;
    o.latent_dim = latent_dim;
    o.leaky_slope = U(leaky_slope);
    o.activations = activations;
    for (auto const &l : layers) {
      o.layers.push_back(l.template cast<U>());
    }
    return o;
  }
};

/// Uniform fan-in initialisation in [-a, a], a = sqrt(1 / (C_in * k^2)); biases likewise.
template <typename T>
GeneratorParams<T>
build_generator(std::string const &preset, Index d, Index latent_dim, uint64_t seed, double leaky_slope = 0.1)
{
  if (latent_dim < 1) {
    throw ConfigError("latent dimension must be >= 1");
  }
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
    throw ConfigError("leaky ReLU slope must lie in (0, 1)");
  }
  auto const plan = preset_layers(preset, d);
  GeneratorParams<T> g;
  g.preset = preset;
  g.d = d;
  g.latent_dim = latent_dim;
  g.leaky_slope = T(leaky_slope);
  std::mt19937_64 rng(seed);
  Index cin = latent_dim;
  for (size_t i = 0; i < plan.size(); i++) {
    auto const &s = plan[i];
    LayerWeights<T> w(cin, s.out_channels, s.kernel_size, s.stride, s.padding);
    double const a = std::sqrt(1.0 / double(cin * s.kernel_size * s.kernel_size));
    std::uniform_real_distribution<double> u(-a, a);
    for (auto &v : w.kernel) {
      v = T(u(rng));
    }
    for (auto &v : w.bias) {
      v = T(u(rng));
    }
    g.layers.push_back(std::move(w));
    g.activations.push_back(i + 1 == plan.size() ? Activation::Tanh : Activation::LeakyRelu);
    cin = s.out_channels;
  }
  g.output_size();
  return g;
}

/// One-layer generator G(z) = W z + b with no activation. The kernel spans the whole
/// output, so W is a dense (2 * size^2) x latent_dim matrix. Used to check the
/// Jacobian and curve-length machinery against closed forms.
template <typename T>
GeneratorParams<T> linear_generator(Index latent_dim, Index size, uint64_t seed)
{
  GeneratorParams<T> g;
  g.preset = "linear";
  g.d = 1;
  g.latent_dim = latent_dim;
  LayerWeights<T> w(latent_dim, 2, size, 1, 0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto &v : w.kernel) {
    v = T(n(rng));
  }
  for (auto &v : w.bias) {
    v = T(n(rng));
  }
  g.layers.push_back(std::move(w));
  g.activations.push_back(Activation::Identity);
  g.output_size();
  return g;
}

/// Per-layer gradients with the same layout as the parameters.
template <typename T>
struct GeneratorGrads
{
  std::vector<LayerGrads<T>> layers;

  GeneratorGrads() = default;
  explicit GeneratorGrads(GeneratorParams<T> const &p)
  {
    for (auto const &l : p.layers) {
      layers.emplace_back(l);
    }
  }

  void add(GeneratorGrads const &o, T scale = T(1))
  {
    for (size_t i = 0; i < layers.size(); i++) {
      for (size_t j = 0; j < layers[i].kernel.size(); j++) {
        layers[i].kernel[j] += scale * o.layers[i].kernel[j];
      }
      for (size_t j = 0; j < layers[i].bias.size(); j++) {
        layers[i].bias[j] += scale * o.layers[i].bias[j];
      }
    }
  }

  void scale(T s)
  {
    for (auto &l : layers) {
      for (auto &v : l.kernel) {
        v *= s;
      }
      for (auto &v : l.bias) {
        v *= s;
      }
    }
  }
};

/// Activations of one forward pass; acts[0] is the latent input and acts[i + 1]
/// the post-activation output of layer i.
template <typename T>
struct ForwardTrace
{
  std::vector<FeatureMap<T>> acts;
  FeatureMap<T> const &output() const { return acts.back(); }
};

template <typename T>
ForwardTrace<T> forward_trace(GeneratorParams<T> const &params, std::span<T const> z)
{
  if (Index(z.size()) != params.latent_dim) {
    throw ShapeError(
      "latent vector has length " + std::to_string(z.size()) + ", generator expects " +
      std::to_string(params.latent_dim));
  }
  ForwardTrace<T> tr;
  tr.acts.reserve(params.layers.size() + 1);
  FeatureMap<T> x(params.latent_dim, 1, 1);
  std::copy(z.begin(), z.end(), x.data.begin());
  tr.acts.push_back(std::move(x));
  for (size_t i = 0; i < params.layers.size(); i++) {
    auto y = conv_transpose2d(tr.acts.back(), params.layers[i]);
    switch (params.activations[i]) {
    case Activation::LeakyRelu: y = leaky_relu(std::move(y), params.leaky_slope); break;
    case Activation::Tanh: y = tanh_act(std::move(y)); break;
    case Activation::Identity: break;
    }
    tr.acts.push_back(std::move(y));
  }
  return tr;
}

/// Reverse sweep: accumulates d<cotangent, G(z)>/d(theta) into `grads` and, when
/// non-empty, d/dz into `dz`.
template <typename T>
void backward(
  GeneratorParams<T> const &params,
  ForwardTrace<T> const &trace,
  FeatureMap<T> cotangent,
  GeneratorGrads<T> &grads,
  std::span<T> dz = {})
{
  if (!cotangent.same_shape(trace.output())) {
    throw ShapeError("generator backward: cotangent shape " + cotangent.shape_str() + " != output shape");
  }
  for (size_t ii = params.layers.size(); ii-- > 0;) {
    auto const &y = trace.acts[ii + 1];
    switch (params.activations[ii]) {
    case Activation::LeakyRelu: cotangent = leaky_relu_vjp(y, std::move(cotangent), params.leaky_slope); break;
    case Activation::Tanh: cotangent = tanh_vjp(y, std::move(cotangent)); break;
    case Activation::Identity: break;
    }
    bool const need_input = ii > 0 || !dz.empty();
    auto g = conv_transpose2d_vjp(trace.acts[ii], params.layers[ii], cotangent, need_input);
    auto &acc = grads.layers[ii];
    for (size_t j = 0; j < acc.kernel.size(); j++) {
      acc.kernel[j] += g.weights.kernel[j];
    }
    for (size_t j = 0; j < acc.bias.size(); j++) {
      acc.bias[j] += g.weights.bias[j];
    }
    if (ii == 0) {
      if (!dz.empty()) {
        for (size_t j = 0; j < dz.size(); j++) {
          dz[j] += g.input.data[j];
        }
      }
    } else {
      cotangent = std::move(g.input);
    }
  }
}

/// Channel 0 is the real part, channel 1 the imaginary part.
template <typename T>
ComplexImage<T> to_complex(FeatureMap<T> const &out)
{
  if (out.channels != 2 || out.height != out.width) {
    throw ShapeError("generator output must be 2 x N x N, got " + out.shape_str());
  }
  ComplexImage<T> img(out.height);
  Index const P = out.height * out.width;
  for (Index i = 0; i < P; i++) {
    img.values[static_cast<size_t>(i)] = Cx<T>(out.data[static_cast<size_t>(i)], out.data[static_cast<size_t>(P + i)]);
  }
  return img;
}

/// Inverse of to_complex for cotangents: d/d(re) into channel 0, d/d(im) into channel 1.
template <typename T>
FeatureMap<T> from_complex(ComplexImage<T> const &img)
{
  FeatureMap<T> out(2, img.size, img.size);
  Index const P = img.pixels();
  for (Index i = 0; i < P; i++) {
    out.data[static_cast<size_t>(i)] = img.values[static_cast<size_t>(i)].real();
    out.data[static_cast<size_t>(P + i)] = img.values[static_cast<size_t>(i)].imag();
  }
  return out;
}

template <typename T>
ComplexImage<T> generate_frame(GeneratorParams<T> const &params, std::span<T const> z)
{
  return to_complex(forward_trace(params, z).output());
}

template <typename T>
ImageSeries<T> generate_batch(GeneratorParams<T> const &params, std::vector<std::vector<T>> const &zs)
{
  if (zs.empty()) {
    throw ShapeError("generate_batch: empty batch");
  }
  ImageSeries<T> out;
  out.reserve(zs.size());
  for (auto const &z : zs) {
    out.push_back(generate_frame(params, std::span<T const>(z)));
  }
  return out;
}

namespace detail {

template <typename T>
double sq_dist(FeatureMap<T> const &a, FeatureMap<T> const &b)
{
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); i++) {
    double const d = double(a.data[i]) - double(b.data[i]);
    s += d * d;
  }
  return s;
}

} // namespace detail

/// Central-difference surrogate of ||J_z G||_F^2:
///   sum_j ||G(z + h e_j) - G(z - h e_j)||^2 / (2h)^2
/// over both real and imaginary channels.
template <typename T>
double jacobian_frobenius_sq(GeneratorParams<T> const &params, std::span<T const> z, double h)
{
  if (!(h > 0.0)) {
    throw ConfigError("jacobian_frobenius_sq: step must be positive");
  }
  std::vector<T> zp(z.begin(), z.end()), zm(z.begin(), z.end());
  double total = 0.0;
  for (size_t j = 0; j < z.size(); j++) {
    zp[j] = T(double(z[j]) + h);
    zm[j] = T(double(z[j]) - h);
    auto const gp = forward_trace(params, std::span<T const>(zp));
    auto const gm = forward_trace(params, std::span<T const>(zm));
    total += detail::sq_dist(gp.output(), gm.output());
    zp[j] = z[j];
    zm[j] = z[j];
  }
  return total / (4.0 * h * h);
}

/// Value of jacobian_frobenius_sq plus its gradient (scaled by `weight`) accumulated
/// into `grads` and, when non-empty, `dz`.
template <typename T>
double jacobian_frobenius_sq_vjp(
  GeneratorParams<T> const &params,
  std::span<T const> z,
  double h,
  double weight,
  GeneratorGrads<T> &grads,
  std::span<T> dz = {})
{
  if (!(h > 0.0)) {
    throw ConfigError("jacobian_frobenius_sq: step must be positive");
  }
  std::vector<T> zp(z.begin(), z.end()), zm(z.begin(), z.end());
  double total = 0.0;
  double const c = 1.0 / (4.0 * h * h);
  for (size_t j = 0; j < z.size(); j++) {
    zp[j] = T(double(z[j]) + h);
    zm[j] = T(double(z[j]) - h);
    auto const gp = forward_trace(params, std::span<T const>(zp));
    auto const gm = forward_trace(params, std::span<T const>(zm));
    total += detail::sq_dist(gp.output(), gm.output());
    // d/dG+ of c*||G+ - G-||^2 = 2c (G+ - G-), and the negative of that for G-.
    FeatureMap<T> cot(gp.output().channels, gp.output().height, gp.output().width);
    for (size_t i = 0; i < cot.data.size(); i++) {
      cot.data[i] = T(2.0 * c * weight * (double(gp.output().data[i]) - double(gm.output().data[i])));
    }
    backward(params, gp, cot, grads, dz);
    for (auto &v : cot.data) {
      v = -v;
    }
    backward(params, gm, std::move(cot), grads, dz);
    zp[j] = z[j];
    zm[j] = z[j];
  }
  return total * c;
}

/// Polygonal length of G along the straight latent segment z1 -> z2 using
/// `n_steps` equal sub-intervals.
template <typename T>
double path_length(GeneratorParams<T> const &params, std::span<T const> z1, std::span<T const> z2, Index n_steps)
{
  if (n_steps < 2) {
    throw ConfigError("path_length: n_steps must be >= 2");
  }
  if (z1.size() != z2.size()) {
    throw ShapeError("path_length: latent lengths differ");
  }
  std::vector<T> z(z1.size());
  auto at = [&](Index k) {
    double const s = double(k) / double(n_steps);
    for (size_t j = 0; j < z.size(); j++) {
      z[j] = T((1.0 - s) * double(z1[j]) + s * double(z2[j]));
    }
    return forward_trace(params, std::span<T const>(z));
  };
  auto prev = at(0);
  double len = 0.0;
  for (Index k = 1; k <= n_steps; k++) {
    auto cur = at(k);
    len += std::sqrt(detail::sq_dist(prev.output(), cur.output()));
    prev = std::move(cur);
  }
  return len;
}

} // namespace gstm
