#pragma once

// Training cost: data consistency (exact NDFT or Toeplitz/gridding surrogate),
// Jacobian (distance) penalty on the generator, and temporal smoothness of the
// latent trajectory, each with gradients for theta and the latents.

#include "dataset.hpp"
#include "generator.hpp"

namespace gstm {

/// M latent vectors of length dim, row-major.
template <typename T>
struct LatentTrajectory
{
  Index frames = 0;
  Index dim = 0;
  std::vector<T> values;

  LatentTrajectory() = default;
  LatentTrajectory(Index m, Index l, T fill = T(0))
    : frames(m)
    , dim(l)
    , values(static_cast<size_t>(m * l), fill)
  {
    if (m < 1 || l < 1) {
      throw ShapeError("LatentTrajectory needs at least one frame and one dimension");
    }
  }

  std::span<T const> row(Index i) const { return {values.data() + i * dim, static_cast<size_t>(dim)}; }
  std::span<T> row(Index i) { return {values.data() + i * dim, static_cast<size_t>(dim)}; }

  template <typename U>
  LatentTrajectory<U> cast() const
  {
    LatentTrajectory<U> o(frames, dim);
    std::transform(values.begin(), values.end(), o.values.begin(), [](T v) { return U(v); });
    return o;
  }
};

enum class LossMode
{
  Exact,
  Approx
};

struct CostBreakdown
{
  double data = 0.0;
  double distance = 0.0;
  double latent = 0.0;
  double total = 0.0;
  Index n_terms = 0;
};

/// Gradients of the cost with respect to theta and every latent.
template <typename T>
struct CostGradients
{
  GeneratorGrads<T> theta;
  std::vector<T> latent;

  CostGradients() = default;
  CostGradients(GeneratorParams<T> const &p, LatentTrajectory<T> const &z)
    : theta(p)
    , latent(z.values.size(), T(0))
  {
  }
};

namespace detail {

template <typename T>
void check_batch(std::span<Index const> batch, Index frames, Index latents)
{
  if (batch.empty()) {
    throw ShapeError("objective: batch is empty");
  }
  if (frames != latents) {
    throw ShapeError("objective: latent count does not match frame count");
  }
  for (auto const i : batch) {
    if (i < 0 || i >= frames) {
      throw ShapeError("objective: batch index out of range");
    }
  }
}

template <typename T>
std::span<T> latent_grad_row(CostGradients<T> *g, Index i, Index dim)
{
  if (!g) {
    return {};
  }
  return {g->latent.data() + i * dim, static_cast<size_t>(dim)};
}

} // namespace detail

/// (1/|B|) sum_{i in B} ||A_i G(z_i) - b_i||^2 / S_i. When `grads` is non-null the
/// gradient times `weight` is accumulated into it.
template <typename T>
double data_loss_exact(
  GeneratorParams<T> const &params,
  LatentTrajectory<T> const &z,
  Dataset<T> const &data,
  std::span<Index const> batch,
  CostGradients<T> *grads = nullptr,
  double weight = 1.0)
{
  detail::check_batch<T>(batch, data.n_frames(), z.frames);
  double total = 0.0;
  double const inv_b = 1.0 / double(batch.size());
  for (auto const i : batch) {
    auto const &frame = data.frames[static_cast<size_t>(i)];
    auto const trace = forward_trace(params, z.row(i));
    auto const x = to_complex(trace.output());
    if (x.size != data.size) {
      throw ShapeError("data_loss_exact: generator output does not match the dataset grid");
    }
    auto const &f = frame.factors(data.size);
    auto resid = ndft_forward(x, data.coils, f);
    for (size_t j = 0; j < resid.size(); j++) {
      resid[j] -= frame.samples[j];
    }
    double const S = double(frame.n_samples());
    total += norm2(std::span<Cx<T> const>(resid)) / S;
    if (grads) {
      auto back = ndft_adjoint(std::span<Cx<T> const>(resid), data.coils, f);
      T const c = T(2.0 * weight * inv_b / S);
      for (auto &v : back.values) {
        v *= c;
      }
      backward(params, trace, from_complex(back), grads->theta, detail::latent_grad_row(grads, i, z.dim));
    }
  }
  return total * inv_b;
}

/// (1/|B|) sum_{i in B} ||P_i G(z_i) - g_i||^2 with P_i = gain * A_i^H W A_i evaluated by
/// Toeplitz embedding and g_i the gridding reconstruction (same gain).
template <typename T>
double data_loss_approx(
  GeneratorParams<T> const &params,
  LatentTrajectory<T> const &z,
  Dataset<T> const &data,
  std::span<Index const> batch,
  CostGradients<T> *grads = nullptr,
  double weight = 1.0,
  bool require_cached = false)
{
  detail::check_batch<T>(batch, data.n_frames(), z.frames);
  double total = 0.0;
  double const inv_b = 1.0 / double(batch.size());
  for (auto const i : batch) {
    auto const &frame = data.frames[static_cast<size_t>(i)];
    if (require_cached && !(frame.has_gridded() && frame.has_toeplitz())) {
      throw ShapeError("data_loss_approx: gridding image or Toeplitz kernel not cached for frame " + std::to_string(i));
    }
    auto const trace = forward_trace(params, z.row(i));
    auto const x = to_complex(trace.output());
    if (x.size != data.size) {
      throw ShapeError("data_loss_approx: generator output does not match the dataset grid");
    }
    auto const &kernel = frame.toeplitz(data.size);
    auto const &g = frame.gridded(data.coils);
    T const gain = T(gridding_gain(std::span<T const>(frame.weights)));
    auto px = toeplitz_apply(kernel, data.coils, x);
    for (size_t j = 0; j < px.values.size(); j++) {
      px.values[j] = gain * px.values[j] - g.values[j];
    }
    total += norm2(px.span());
    if (grads) {
      // P is Hermitian, so the gradient is 2 P^H r = 2 P r.
      auto back = toeplitz_apply(kernel, data.coils, px);
      T const c = T(2.0 * weight * inv_b) * gain;
      for (auto &v : back.values) {
        v *= c;
      }
      backward(params, trace, from_complex(back), grads->theta, detail::latent_grad_row(grads, i, z.dim));
    }
  }
  return total * inv_b;
}

/// sum_t ||z_{t+1} - z_t||^2 over the whole trajectory.
template <typename T>
double latent_reg(LatentTrajectory<T> const &z, CostGradients<T> *grads = nullptr, double weight = 1.0)
{
  double total = 0.0;
  for (Index t = 0; t + 1 < z.frames; t++) {
    for (Index j = 0; j < z.dim; j++) {
      double const d = double(z.values[static_cast<size_t>((t + 1) * z.dim + j)]) -
                       double(z.values[static_cast<size_t>(t * z.dim + j)]);
      total += d * d;
      if (grads) {
        grads->latent[static_cast<size_t>((t + 1) * z.dim + j)] += T(2.0 * weight * d);
        grads->latent[static_cast<size_t>(t * z.dim + j)] -= T(2.0 * weight * d);
      }
    }
  }
  return total;
}

/// Mean over the batch of the central-difference Jacobian penalty.
template <typename T>
double distance_reg(
  GeneratorParams<T> const &params,
  LatentTrajectory<T> const &z,
  std::span<Index const> batch,
  double h,
  CostGradients<T> *grads = nullptr,
  double weight = 1.0)
{
  if (batch.empty()) {
    throw ShapeError("distance_reg: batch is empty");
  }
  double total = 0.0;
  double const w = weight / double(batch.size());
  for (auto const i : batch) {
    if (i < 0 || i >= z.frames) {
      throw ShapeError("distance_reg: batch index out of range");
    }
    if (grads) {
      total += jacobian_frobenius_sq_vjp(params, z.row(i), h, w, grads->theta, detail::latent_grad_row(grads, i, z.dim));
    } else {
      total += jacobian_frobenius_sq(params, z.row(i), h);
    }
  }
  return total / double(batch.size());
}

struct CostWeights
{
  double lambda1 = 0.0005; // distance (Jacobian) penalty
  double lambda2 = 2.0;    // latent temporal smoothness
  double jacobian_step = 1e-3;
};

/// data + lambda1 * distance + lambda2 * latent. Data and distance terms use the batch,
/// the latent term the whole trajectory. Terms with a zero weight are skipped.
template <typename T>
CostBreakdown total_cost(
  GeneratorParams<T> const &params,
  LatentTrajectory<T> const &z,
  Dataset<T> const &data,
  std::span<Index const> batch,
  CostWeights const &w,
  LossMode mode,
  CostGradients<T> *grads = nullptr)
{
  if (w.lambda1 < 0 || w.lambda2 < 0) {
    throw ConfigError("total_cost: regularisation weights must be non-negative");
  }
  CostBreakdown c;
  c.n_terms = Index(batch.size());
  c.data = mode == LossMode::Exact ? data_loss_exact(params, z, data, batch, grads)
                                   : data_loss_approx(params, z, data, batch, grads);
  if (w.lambda1 > 0) {
    c.distance = distance_reg(params, z, batch, w.jacobian_step, grads, w.lambda1);
  }
  if (w.lambda2 > 0) {
    c.latent = latent_reg(z, grads, w.lambda2);
  }
  c.total = c.data + w.lambda1 * c.distance + w.lambda2 * c.latent;
  return c;
}

} // namespace gstm
