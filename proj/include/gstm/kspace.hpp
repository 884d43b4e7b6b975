#pragma once

// Multicoil non-uniform Fourier sampling: exact NDFT forward/adjoint, radial
// density compensation, gridding reconstructions and the Toeplitz-embedded
// normal operator A^H W A.

#include "fft.hpp"
#include "image.hpp"
#include "lazy.hpp"

#include <Eigen/Core>

#include <array>
#include <numbers>

namespace gstm {

/// k-space sample locations in cycles/sample, each component in [-0.5, 0.5).
/// samples_per_spoke > 0 marks a radial layout of consecutive spokes through the origin.
struct Trajectory
{
  std::vector<std::array<double, 2>> coords; // (kx, ky)
  Index samples_per_spoke = 0;

  Index size() const { return Index(coords.size()); }

  void validate() const
  {
    if (coords.empty()) {
      throw ShapeError("trajectory has no samples");
    }
    for (auto const &k : coords) {
      for (double const c : k) {
        if (!std::isfinite(c) || c < -0.5 || c >= 0.5) {
          throw ShapeError("trajectory coordinate outside [-0.5, 0.5)");
        }
      }
    }
  }
};

/// Complex receive sensitivities, layout (coil, y, x).
template <typename T>
struct CoilMaps
{
  Index n_coils = 0;
  Index size = 0;
  std::vector<Cx<T>> maps;

  CoilMaps() = default;
  CoilMaps(Index c, Index n)
    : n_coils(c)
    , size(n)
    , maps(static_cast<size_t>(c * n * n), Cx<T>(0))
  {
    if (c < 1 || n < 1) {
      throw ShapeError("CoilMaps dimensions must be positive");
    }
  }

  static CoilMaps unit(Index n)
  {
    CoilMaps m(1, n);
    std::fill(m.maps.begin(), m.maps.end(), Cx<T>(1));
    return m;
  }

  Cx<T> const *coil(Index c) const { return maps.data() + c * size * size; }
  Cx<T> *coil(Index c) { return maps.data() + c * size * size; }

  template <typename U>
  CoilMaps<U> cast() const
  {
    CoilMaps<U> o(n_coils, size);
    std::transform(maps.begin(), maps.end(), o.maps.begin(), [](Cx<T> v) { return Cx<U>(v); });
    return o;
  }
};

namespace detail {

template <typename T>
using CxMat = Eigen::Matrix<Cx<T>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Pixel offset of grid index i from the grid centre.
inline double centred(Index i, Index n) { return double(i - n / 2); }

} // namespace detail

/// Separable factors of exp(-i 2 pi k.r) for one trajectory on an N x N grid:
/// ex(s, x) = exp(-i 2 pi kx_s (x - N/2)), ey(s, y) likewise.
template <typename T>
struct NdftFactors
{
  Index size = 0;
  detail::CxMat<T> ex;
  detail::CxMat<T> ey;

  NdftFactors(Trajectory const &traj, Index n)
    : size(n)
    , ex(traj.size(), n)
    , ey(traj.size(), n)
  {
    traj.validate();
    double const two_pi = 2.0 * std::numbers::pi;
    for (Index s = 0; s < traj.size(); s++) {
      auto const [kx, ky] = traj.coords[static_cast<size_t>(s)];
      for (Index i = 0; i < n; i++) {
        double const r = detail::centred(i, n);
        ex(s, i) = Cx<T>(std::polar(1.0, -two_pi * kx * r));
        ey(s, i) = Cx<T>(std::polar(1.0, -two_pi * ky * r));
      }
    }
  }
};

namespace detail {

template <typename T>
void check_coils(ComplexImage<T> const &image, CoilMaps<T> const &coils)
{
  if (image.size != coils.size) {
    throw ShapeError(
      "image grid " + std::to_string(image.size) + " does not match coil maps grid " + std::to_string(coils.size));
  }
}

} // namespace detail

/// samples[c * S + s] = sum_r coil_c(r) image(r) exp(-i 2 pi k_s . r)
template <typename T>
std::vector<Cx<T>>
ndft_forward(ComplexImage<T> const &image, CoilMaps<T> const &coils, NdftFactors<T> const &f)
{
  detail::check_coils(image, coils);
  if (f.size != image.size) {
    throw ShapeError("ndft_forward: factors built for a different grid");
  }
  using Mat = detail::CxMat<T>;
  Index const N = image.size, C = coils.n_coils, S = f.ex.rows();
  Mat weighted(C * N, N);
  for (Index c = 0; c < C; c++) {
    Cx<T> const *m = coils.coil(c);
    for (Index i = 0; i < N * N; i++) {
      weighted(c * N + i / N, i % N) = m[i] * image.values[static_cast<size_t>(i)];
    }
  }
  Mat const partial = weighted * f.ex.transpose(); // (C*N) x S, summed over x
  std::vector<Cx<T>> out(static_cast<size_t>(C * S));
  for (Index c = 0; c < C; c++) {
    for (Index s = 0; s < S; s++) {
      Cx<T> acc(0);
      for (Index y = 0; y < N; y++) {
        acc += f.ey(s, y) * partial(c * N + y, s);
      }
      out[static_cast<size_t>(c * S + s)] = acc;
    }
  }
  return out;
}

template <typename T>
std::vector<Cx<T>> ndft_forward(ComplexImage<T> const &image, CoilMaps<T> const &coils, Trajectory const &traj)
{
  return ndft_forward(image, coils, NdftFactors<T>(traj, image.size));
}

/// x(r) = sum_c conj(coil_c(r)) sum_s samples[c * S + s] exp(+i 2 pi k_s . r)
template <typename T>
ComplexImage<T>
ndft_adjoint(std::span<Cx<T> const> samples, CoilMaps<T> const &coils, NdftFactors<T> const &f)
{
  using Mat = detail::CxMat<T>;
  Index const N = coils.size, C = coils.n_coils, S = f.ex.rows();
  if (f.size != N) {
    throw ShapeError("ndft_adjoint: factors built for a different grid");
  }
  if (Index(samples.size()) != C * S) {
    throw ShapeError(
      "ndft_adjoint: expected " + std::to_string(C * S) + " samples, got " + std::to_string(samples.size()));
  }
  // u(c*N + y, s) = conj(ey(s, y)) * samples[c, s]
  Mat u(C * N, S);
  for (Index c = 0; c < C; c++) {
    for (Index y = 0; y < N; y++) {
      for (Index s = 0; s < S; s++) {
        u(c * N + y, s) = std::conj(f.ey(s, y)) * samples[static_cast<size_t>(c * S + s)];
      }
    }
  }
  Mat const per_coil = u * f.ex.conjugate(); // (C*N) x N
  ComplexImage<T> out(N);
  for (Index c = 0; c < C; c++) {
    Cx<T> const *m = coils.coil(c);
    for (Index i = 0; i < N * N; i++) {
      out.values[static_cast<size_t>(i)] += std::conj(m[i]) * per_coil(c * N + i / N, i % N);
    }
  }
  return out;
}

template <typename T>
ComplexImage<T> ndft_adjoint(std::span<Cx<T> const> samples, CoilMaps<T> const &coils, Trajectory const &traj)
{
  return ndft_adjoint(samples, coils, NdftFactors<T>(traj, coils.size));
}

/// Radial ramp density compensation: w = |k| with a floor of 1 / (4 * samples_per_spoke)
/// for |k| < 1 / (2 * samples_per_spoke), normalised to unit mean.
inline std::vector<double> density_weights(Trajectory const &traj, std::string const &kind = "radial_ramp")
{
  if (kind != "radial_ramp") {
    throw ConfigError("unknown density compensation '" + kind + "'");
  }
  traj.validate();
  Index const sps = traj.samples_per_spoke;
  if (sps < 2 || traj.size() % sps != 0) {
    throw ShapeError("radial_ramp density compensation requires a radial trajectory layout");
  }
  // Each spoke must lie on a line through the origin.
  for (Index sp = 0; sp < traj.size() / sps; sp++) {
    auto const &a = traj.coords[static_cast<size_t>(sp * sps)];
    auto const &b = traj.coords[static_cast<size_t>(sp * sps + sps - 1)];
    double const dx = b[0] - a[0], dy = b[1] - a[1];
    double const len = std::hypot(dx, dy);
    if (len == 0.0) {
      throw ShapeError("radial_ramp: degenerate spoke");
    }
    for (Index j = 0; j < sps; j++) {
      auto const &p = traj.coords[static_cast<size_t>(sp * sps + j)];
      if (std::abs(p[0] * dy - p[1] * dx) / len > 1e-6) {
        throw ShapeError("radial_ramp: spoke " + std::to_string(sp) + " does not pass through the origin");
      }
    }
  }
  double const dc = 1.0 / (2.0 * double(sps));
  double const floor = 1.0 / (4.0 * double(sps));
  std::vector<double> w(traj.coords.size());
  double sum = 0.0;
  for (size_t i = 0; i < w.size(); i++) {
    double const r = std::hypot(traj.coords[i][0], traj.coords[i][1]);
    w[i] = r < dc ? floor : r;
    sum += w[i];
  }
  double const scale = double(w.size()) / sum;
  for (auto &v : w) {
    v *= scale;
  }
  return w;
}

/// Scale that gives the density-weighted adjoint unit gain on smooth images:
/// the weights integrate to the k-space disk area pi/4 after scaling.
template <typename T>
double gridding_gain(std::span<T const> weights)
{
  double sum = 0.0;
  for (auto const w : weights) {
    sum += double(w);
  }
  return sum > 0.0 ? std::numbers::pi / (4.0 * sum) : 0.0;
}

/// Spectrum of A^H W A on the 2N zero-padded grid, already divided by (2N)^2.
template <typename T>
struct ToeplitzKernel
{
  Index size = 0; // image grid N
  std::vector<Cx<T>> spectrum;
};

/// Builds the convolution kernel t(m) = sum_s w_s exp(+i 2 pi k_s . m) for
/// m in [-N+1, N-1]^2, embeds it circularly in 2N x 2N and transforms it.
template <typename T>
ToeplitzKernel<T> toeplitz_kernel(Trajectory const &traj, std::span<T const> weights, Index n)
{
  traj.validate();
  if (Index(weights.size()) != traj.size()) {
    throw ShapeError("toeplitz_kernel: weight count does not match trajectory");
  }
  using Mat = detail::CxMat<double>;
  Index const S = traj.size(), M = 2 * n;
  double const two_pi = 2.0 * std::numbers::pi;
  // Row/column index j of the padded grid holds lag m = j for j < N, j - 2N otherwise.
  auto lag = [&](Index j) { return double(j < n ? j : j - M); };
  Mat vy(M, S), vx(S, M);
  for (Index s = 0; s < S; s++) {
    auto const [kx, ky] = traj.coords[static_cast<size_t>(s)];
    double const w = double(weights[static_cast<size_t>(s)]);
    for (Index j = 0; j < M; j++) {
      vy(j, s) = w * std::polar(1.0, two_pi * ky * lag(j));
      vx(s, j) = std::polar(1.0, two_pi * kx * lag(j));
    }
  }
  Mat t = vy * vx;
  // Lag -N is never reached by differences of in-grid pixels; zeroing it keeps the
  // embedded sequence Hermitian so the spectrum is real.
  t.row(n).setZero();
  t.col(n).setZero();
  std::vector<Cx<double>> buf(t.data(), t.data() + M * M);
  fft::forward<double>(buf, M);
  ToeplitzKernel<T> k;
  k.size = n;
  k.spectrum.resize(buf.size());
  double const norm = 1.0 / double(M * M);
  for (size_t i = 0; i < buf.size(); i++) {
    k.spectrum[i] = Cx<T>(buf[i] * norm);
  }
  return k;
}

/// A^H W A x evaluated as a circular convolution on the 2N grid, per coil.
template <typename T>
ComplexImage<T> toeplitz_apply(ToeplitzKernel<T> const &kernel, CoilMaps<T> const &coils, ComplexImage<T> const &image)
{
  detail::check_coils(image, coils);
  Index const N = image.size, M = 2 * N;
  if (kernel.size != N || Index(kernel.spectrum.size()) != M * M) {
    throw ShapeError("toeplitz_apply: kernel built for a different grid size");
  }
  ComplexImage<T> out(N);
  std::vector<Cx<T>> buf(static_cast<size_t>(M * M));
  for (Index c = 0; c < coils.n_coils; c++) {
    std::fill(buf.begin(), buf.end(), Cx<T>(0));
    Cx<T> const *m = coils.coil(c);
    for (Index y = 0; y < N; y++) {
      for (Index x = 0; x < N; x++) {
        buf[static_cast<size_t>(y * M + x)] = m[y * N + x] * image.values[static_cast<size_t>(y * N + x)];
      }
    }
    fft::forward<T>(buf, M);
    for (size_t i = 0; i < buf.size(); i++) {
      buf[i] *= kernel.spectrum[i];
    }
    fft::inverse<T>(buf, M);
    for (Index y = 0; y < N; y++) {
      for (Index x = 0; x < N; x++) {
        out.values[static_cast<size_t>(y * N + x)] += std::conj(m[y * N + x]) * buf[static_cast<size_t>(y * M + x)];
      }
    }
  }
  return out;
}

/// One time frame of measurements: b_i, its trajectory and density weights, with
/// the gridding reconstruction, Toeplitz kernel and NDFT factors cached on first use.
template <typename T>
struct KSpaceFrame
{
  Trajectory trajectory;
  Index n_coils = 0;
  std::vector<Cx<T>> samples; // (coil, sample)
  std::vector<T> weights;

  Index n_samples() const { return trajectory.size(); }

  void validate() const
  {
    trajectory.validate();
    if (Index(samples.size()) != n_coils * n_samples()) {
      throw ShapeError("KSpaceFrame: sample array does not match (coils, samples)");
    }
    if (Index(weights.size()) != n_samples()) {
      throw ShapeError("KSpaceFrame: weight count does not match samples");
    }
    for (auto const w : weights) {
      if (!(w > T(0))) {
        throw ShapeError("KSpaceFrame: density weights must be positive");
      }
    }
  }

  /// Recompute density weights from the trajectory (and drop dependent caches).
  void compute_weights()
  {
    auto const w = density_weights(trajectory);
    weights.assign(w.begin(), w.end());
    gridded_.reset();
    kernel_.reset();
  }

  NdftFactors<T> const &factors(Index n) const
  {
    auto const &f = factors_.get([&] { return NdftFactors<T>(trajectory, n); });
    if (f.size != n) {
      throw ShapeError("KSpaceFrame: cached NDFT factors were built for another grid");
    }
    return f;
  }

  /// g = gain * A^H (W b); cached.
  ComplexImage<T> const &gridded(CoilMaps<T> const &coils) const
  {
    return gridded_.get([&] {
      std::vector<Cx<T>> wb(samples.size());
      Index const S = n_samples();
      for (Index c = 0; c < n_coils; c++) {
        for (Index s = 0; s < S; s++) {
          wb[static_cast<size_t>(c * S + s)] = samples[static_cast<size_t>(c * S + s)] * weights[static_cast<size_t>(s)];
        }
      }
      auto img = ndft_adjoint(std::span<Cx<T> const>(wb), coils, factors(coils.size));
      T const g = T(gridding_gain(std::span<T const>(weights)));
      for (auto &v : img.values) {
        v *= g;
      }
      return img;
    });
  }

  ToeplitzKernel<T> const &toeplitz(Index n) const
  {
    auto const &k = kernel_.get([&] { return toeplitz_kernel(trajectory, std::span<T const>(weights), n); });
    if (k.size != n) {
      throw ShapeError("KSpaceFrame: cached Toeplitz kernel was built for another grid");
    }
    return k;
  }

  bool has_gridded() const { return gridded_.ready(); }
  bool has_toeplitz() const { return kernel_.ready(); }
  void drop_caches()
  {
    gridded_.reset();
    kernel_.reset();
    factors_.reset();
  }

private:
  Lazy<ComplexImage<T>> gridded_;
  Lazy<ToeplitzKernel<T>> kernel_;
  Lazy<NdftFactors<T>> factors_;
};

/// gridding_recon(frame, coils): the cached density-weighted adjoint.
template <typename T>
ComplexImage<T> const &gridding_recon(KSpaceFrame<T> const &frame, CoilMaps<T> const &coils)
{
  return frame.gridded(coils);
}

} // namespace gstm
