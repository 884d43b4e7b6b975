#pragma once

// Reference reconstructions the generator is compared against.

#include "trainer.hpp"

namespace gstm {

/// Density-compensated adjoint of every frame on its own.
template <typename T>
ImageSeries<T> gridding_series(Dataset<T> const &ds)
{
  ImageSeries<T> out;
  for (auto const &f : ds.frames) {
    out.push_back(gridding_recon(f, ds.coils));
  }
  return out;
}

/// Least-squares fit of one image to the measurements of all frames,
/// argmin_x sum_i ||A_i x - b_i||^2, by conjugate gradients on the normal
/// equations (A^H A applied through a unit-weight Toeplitz kernel). The same image
/// is returned for every frame.
template <typename T>
ImageSeries<T> static_fit(Dataset<T> const &ds, Index iterations = 40)
{
  ds.validate();
  Index const N = ds.size;
  Trajectory all;
  for (auto const &f : ds.frames) {
    all.coords.insert(all.coords.end(), f.trajectory.coords.begin(), f.trajectory.coords.end());
  }
  std::vector<double> ones(all.coords.size(), 1.0);
  auto const kernel = toeplitz_kernel(all, std::span<double const>(ones), N);
  auto const coils = ds.coils.template cast<double>();

  ComplexImage<double> rhs(N);
  for (auto const &f : ds.frames) {
    std::vector<Cx<double>> b(f.samples.begin(), f.samples.end());
    auto const a = ndft_adjoint(std::span<Cx<double> const>(b), coils, f.trajectory);
    for (size_t j = 0; j < rhs.values.size(); j++) {
      rhs.values[j] += a.values[j];
    }
  }

  auto dot = [](ComplexImage<double> const &a, ComplexImage<double> const &b) {
    Cx<double> s{};
    for (size_t j = 0; j < a.values.size(); j++) {
      s += std::conj(a.values[j]) * b.values[j];
    }
    return s;
  };
  ComplexImage<double> x(N), r = rhs, p = rhs;
  double rr = dot(r, r).real();
  double const stop = 1e-20 * rr;
  for (Index it = 0; it < iterations && rr > stop; it++) {
    auto const ap = toeplitz_apply(kernel, coils, p);
    double const alpha = rr / dot(p, ap).real();
    for (size_t j = 0; j < x.values.size(); j++) {
      x.values[j] += alpha * p.values[j];
      r.values[j] -= alpha * ap.values[j];
    }
    double const rr_next = dot(r, r).real();
    for (size_t j = 0; j < p.values.size(); j++) {
      p.values[j] = r.values[j] + (rr_next / rr) * p.values[j];
    }
    rr = rr_next;
  }
  return ImageSeries<T>(static_cast<size_t>(ds.n_frames()), x.template cast<T>());
}

} // namespace gstm
