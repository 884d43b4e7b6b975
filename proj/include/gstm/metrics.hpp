#pragma once

// Reconstruction quality: signal-to-error ratio, PSNR, SSIM, and how well the
// learned latents track the true motion phases.

#include "image.hpp"

#include <Eigen/Dense>

#include <numeric>

namespace gstm {

inline constexpr double metric_cap_db = 300.0;

/// 20 log10(||ref|| / ||ref - recon||) over the whole series (complex norms).
template <typename T>
double ser(ImageSeries<T> const &ref, ImageSeries<T> const &recon)
{
  check_same_shape(ref, recon, "ser");
  double sig = 0.0, err = 0.0;
  for (size_t i = 0; i < ref.size(); i++) {
    for (size_t j = 0; j < ref[i].values.size(); j++) {
      Cx<double> const a(ref[i].values[j]), b(recon[i].values[j]);
      sig += std::norm(a);
      err += std::norm(a - b);
    }
  }
  if (sig == 0.0) {
    throw ShapeError("ser: reference has zero norm");
  }
  if (std::sqrt(err) < 1e-15 * std::sqrt(sig)) {
    return metric_cap_db;
  }
  return 10.0 * std::log10(sig / err);
}

template <typename T>
double ser(ComplexImage<T> const &ref, ComplexImage<T> const &recon)
{
  return ser(ImageSeries<T>{ref}, ImageSeries<T>{recon});
}

namespace detail {

template <typename T>
double series_max_magnitude(ImageSeries<T> const &s)
{
  double m = 0.0;
  for (auto const &f : s) {
    for (auto const v : f.values) {
      m = std::max(m, std::abs(Cx<double>(v)));
    }
  }
  return m;
}

// Magnitude image divided by `scale`, as a row-major N x N matrix.
template <typename T>
Eigen::MatrixXd normalized_magnitude(ComplexImage<T> const &img, double scale)
{
  Eigen::MatrixXd m(img.size, img.size);
  for (Index y = 0; y < img.size; y++) {
    for (Index x = 0; x < img.size; x++) {
      m(y, x) = std::abs(Cx<double>(img(y, x))) / scale;
    }
  }
  return m;
}

inline Eigen::VectorXd gaussian_window(int size, double sigma)
{
  Eigen::VectorXd g(size);
  double const c = (size - 1) / 2.0;
  for (int i = 0; i < size; i++) {
    g(i) = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
  }
  return g / g.sum();
}

// Separable 'valid' filtering with a symmetric 1-D window.
inline Eigen::MatrixXd filter_valid(Eigen::MatrixXd const &img, Eigen::VectorXd const &w)
{
  Index const k = w.size();
  Index const H = img.rows() - k + 1, W = img.cols() - k + 1;
  Eigen::MatrixXd rows(H, img.cols());
  for (Index y = 0; y < H; y++) {
    rows.row(y) = w.transpose() * img.middleRows(y, k);
  }
  Eigen::MatrixXd out(H, W);
  for (Index x = 0; x < W; x++) {
    out.col(x) = rows.middleCols(x, k) * w;
  }
  return out;
}

} // namespace detail

struct PsnrSeries
{
  double mean_db;
  std::vector<double> per_frame_db;
};

/// PSNR on magnitude images normalised by the reference series maximum (peak 1).
template <typename T>
PsnrSeries psnr_series(ImageSeries<T> const &ref, ImageSeries<T> const &recon)
{
  check_same_shape(ref, recon, "psnr");
  double const peak = detail::series_max_magnitude(ref);
  if (peak == 0.0) {
    throw ShapeError("psnr: reference has zero norm");
  }
  auto to_db = [](double mse) { return mse > 0.0 ? std::min(metric_cap_db, -10.0 * std::log10(mse)) : metric_cap_db; };
  PsnrSeries out;
  double total = 0.0;
  Index count = 0;
  for (size_t i = 0; i < ref.size(); i++) {
    double const mse = (detail::normalized_magnitude(ref[i], peak) - detail::normalized_magnitude(recon[i], peak))
                         .squaredNorm();
    total += mse;
    count += ref[i].pixels();
    out.per_frame_db.push_back(to_db(mse / double(ref[i].pixels())));
  }
  out.mean_db = to_db(total / double(count));
  return out;
}

template <typename T>
double psnr(ImageSeries<T> const &ref, ImageSeries<T> const &recon)
{
  return psnr_series(ref, recon).mean_db;
}

struct SsimSeries
{
  double mean;
  std::vector<double> per_frame;
};

/// Mean SSIM (11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic
/// range 1) on magnitude images normalised by the reference series maximum.
template <typename T>
SsimSeries ssim_series(ImageSeries<T> const &ref, ImageSeries<T> const &recon)
{
  check_same_shape(ref, recon, "ssim");
  double const peak = detail::series_max_magnitude(ref);
  if (peak == 0.0) {
    throw ShapeError("ssim: reference has zero norm");
  }
  if (ref.front().size < 11) {
    throw ShapeError("ssim: images must be at least 11 x 11");
  }
  auto const w = detail::gaussian_window(11, 1.5);
  double const c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  SsimSeries out{0.0, {}};
  for (size_t i = 0; i < ref.size(); i++) {
    auto const a = detail::normalized_magnitude(ref[i], peak);
    auto const b = detail::normalized_magnitude(recon[i], peak);
    auto const mu_a = detail::filter_valid(a, w);
    auto const mu_b = detail::filter_valid(b, w);
    auto const saa = (detail::filter_valid(a.cwiseProduct(a), w) - mu_a.cwiseProduct(mu_a)).eval();
    auto const sbb = (detail::filter_valid(b.cwiseProduct(b), w) - mu_b.cwiseProduct(mu_b)).eval();
    auto const sab = (detail::filter_valid(a.cwiseProduct(b), w) - mu_a.cwiseProduct(mu_b)).eval();
    auto const num = ((2.0 * mu_a.cwiseProduct(mu_b)).array() + c1) * ((2.0 * sab).array() + c2);
    auto const den = (mu_a.cwiseProduct(mu_a) + mu_b.cwiseProduct(mu_b)).array() + c1;
    auto const den2 = (saa + sbb).array() + c2;
    double const s = (num / (den * den2)).mean();
    out.per_frame.push_back(s);
    out.mean += s;
  }
  out.mean /= double(ref.size());
  return out;
}

template <typename T>
double ssim(ImageSeries<T> const &ref, ImageSeries<T> const &recon)
{
  return ssim_series(ref, recon).mean;
}

struct LatentAlignment
{
  double corr_cardiac = 0.0;
  double corr_resp = 0.0;
};

namespace detail {

inline double pearson(Eigen::VectorXd const &a, Eigen::VectorXd const &b)
{
  Eigen::VectorXd const da = a.array() - a.mean();
  Eigen::VectorXd const db = b.array() - b.mean();
  double const na = da.norm(), nb = db.norm();
  if (na < 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff()) || nb == 0.0) {
    return 0.0;
  }
  return da.dot(db) / (na * nb);
}

} // namespace detail

/// Least-squares affine map from latents (M x l, row-major) to the true phases,
/// then per-component Pearson correlation of the fitted prediction with the truth.
inline LatentAlignment
latent_alignment(std::span<double const> z, Index latent_dim, std::vector<std::array<double, 2>> const &phases)
{
  Index const M = Index(phases.size());
  if (M < 8) {
    throw ShapeError("latent_alignment: need at least 8 frames");
  }
  if (latent_dim < 1 || Index(z.size()) != M * latent_dim) {
    throw ShapeError("latent_alignment: latent array does not match the phase count");
  }
  Eigen::MatrixXd A(M, latent_dim + 1);
  Eigen::MatrixXd B(M, 2);
  for (Index t = 0; t < M; t++) {
    for (Index j = 0; j < latent_dim; j++) {
      A(t, j) = z[static_cast<size_t>(t * latent_dim + j)];
    }
    A(t, latent_dim) = 1.0;
    B(t, 0) = phases[static_cast<size_t>(t)][0];
    B(t, 1) = phases[static_cast<size_t>(t)][1];
  }
  // Columns with no variation carry no information; the decomposition's rank
  // threshold drops them so a constant trajectory yields a constant prediction.
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
  cod.setThreshold(1e-10);
  Eigen::MatrixXd const pred = A * cod.solve(B);
  return {detail::pearson(pred.col(0), B.col(0)), detail::pearson(pred.col(1), B.col(1))};
}

} // namespace gstm
