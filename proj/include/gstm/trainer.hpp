#pragma once

// ADAM optimisation of (theta, Z) with progressive training-in-time: the
// k-space data are pooled into progressively more frames, theta is warm-started
// and latents are interpolated between levels.

#include "objective.hpp"

#include <chrono>
#include <functional>
#include <random>

namespace gstm {

struct AdamConfig
{
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments for a list of parameter blocks; moments kept in double.
struct AdamState
{
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long t = 0;
};

/// One bias-corrected ADAM update over matching value/gradient blocks. A non-finite
/// gradient rejects the whole step before anything is modified.
template <typename T>
void adam_step(
  std::vector<std::span<T>> const &values,
  std::vector<std::span<T const>> const &grads,
  AdamState &state,
  double lr,
  AdamConfig const &cfg = {})
{
  if (values.size() != grads.size()) {
    throw ShapeError("adam_step: value and gradient block counts differ");
  }
  if (state.m.empty()) {
    for (auto const &b : values) {
      state.m.emplace_back(b.size(), 0.0);
      state.v.emplace_back(b.size(), 0.0);
    }
  }
  if (state.m.size() != values.size()) {
    throw ShapeError("adam_step: optimiser state does not mirror the parameters");
  }
  for (size_t b = 0; b < values.size(); b++) {
    if (values[b].size() != grads[b].size() || state.m[b].size() != values[b].size()) {
      throw ShapeError("adam_step: block " + std::to_string(b) + " size mismatch");
    }
    if (!all_finite(grads[b])) {
      throw NonFiniteError("adam_step: non-finite gradient in block " + std::to_string(b) + "; step rejected");
    }
  }
  state.t += 1;
  double const c1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  double const c2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (size_t b = 0; b < values.size(); b++) {
    auto &m = state.m[b];
    auto &v = state.v[b];
    auto const val = values[b];
    auto const g = grads[b];
    for (size_t i = 0; i < val.size(); i++) {
      double const gi = double(g[i]);
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      double const step = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
      val[i] = T(double(val[i]) - step);
    }
  }
}

template <typename T>
std::vector<std::span<T>> param_blocks(GeneratorParams<T> &p)
{
  std::vector<std::span<T>> b;
  for (auto &l : p.layers) {
    b.emplace_back(l.kernel);
    b.emplace_back(l.bias);
  }
  return b;
}

template <typename T>
std::vector<std::span<T const>> grad_blocks(GeneratorGrads<T> const &g)
{
  std::vector<std::span<T const>> b;
  for (auto const &l : g.layers) {
    b.emplace_back(l.kernel);
    b.emplace_back(l.bias);
  }
  return b;
}

/// Half-open run [start, start + length) of original frames merged into one pooled frame.
struct Run
{
  Index start;
  Index length;
  double centre() const { return double(start) + double(length - 1) / 2.0; }
};

/// Contiguous runs of near-equal length; the first M % groups runs are one longer.
inline std::vector<Run> pooled_runs(Index frames, Index groups)
{
  if (groups < 1 || groups > frames) {
    throw ConfigError("pooling: need 1 <= groups <= M");
  }
  std::vector<Run> runs;
  Index const base = frames / groups, extra = frames % groups;
  Index start = 0;
  for (Index g = 0; g < groups; g++) {
    Index const len = base + (g < extra ? 1 : 0);
    runs.push_back({start, len});
    start += len;
  }
  return runs;
}

/// Merges each run of frames into one frame holding all of its samples. Density
/// weights are recomputed on the concatenated trajectory; pooled ground truth (when
/// present) is the run average.
template <typename T>
Dataset<T> pool_frames(Dataset<T> const &ds, Index groups)
{
  auto const runs = pooled_runs(ds.n_frames(), groups);
  Dataset<T> out;
  out.size = ds.size;
  out.coils = ds.coils;
  if (ds.truth) {
    out.truth.emplace();
  }
  Index const C = ds.coils.n_coils;
  for (auto const &r : runs) {
    KSpaceFrame<T> f;
    f.n_coils = C;
    f.trajectory.samples_per_spoke = ds.frames[static_cast<size_t>(r.start)].trajectory.samples_per_spoke;
    for (Index i = r.start; i < r.start + r.length; i++) {
      auto const &src = ds.frames[static_cast<size_t>(i)].trajectory;
      f.trajectory.coords.insert(f.trajectory.coords.end(), src.coords.begin(), src.coords.end());
      if (src.samples_per_spoke != f.trajectory.samples_per_spoke) {
        f.trajectory.samples_per_spoke = 0;
      }
    }
    for (Index c = 0; c < C; c++) {
      for (Index i = r.start; i < r.start + r.length; i++) {
        auto const &src = ds.frames[static_cast<size_t>(i)];
        Index const S = src.n_samples();
        f.samples.insert(f.samples.end(), src.samples.begin() + c * S, src.samples.begin() + (c + 1) * S);
      }
    }
    f.compute_weights();
    out.frames.push_back(std::move(f));
    if (ds.truth) {
      ComplexImage<T> avg(ds.size);
      std::array<double, 2> ph{0.0, 0.0};
      for (Index i = r.start; i < r.start + r.length; i++) {
        auto const &img = ds.truth->images[static_cast<size_t>(i)];
        for (size_t j = 0; j < avg.values.size(); j++) {
          avg.values[j] += img.values[j] / T(r.length);
        }
        ph[0] += ds.truth->phases[static_cast<size_t>(i)][0] / double(r.length);
        ph[1] += ds.truth->phases[static_cast<size_t>(i)][1] / double(r.length);
      }
      out.truth->images.push_back(std::move(avg));
      out.truth->phases.push_back(ph);
    }
  }
  return out;
}

/// Piecewise-linear interpolation of coarse latents placed at `coarse_t` onto the
/// times `fine_t`, with constant extrapolation beyond the end points.
template <typename T>
LatentTrajectory<T> interpolate_latents(
  LatentTrajectory<T> const &coarse, std::span<double const> coarse_t, std::span<double const> fine_t)
{
  if (Index(coarse_t.size()) != coarse.frames || fine_t.empty()) {
    throw ShapeError("interpolate_latents: time grid does not match the latents");
  }
  LatentTrajectory<T> fine(Index(fine_t.size()), coarse.dim);
  Index const m = coarse.frames;
  for (size_t t = 0; t < fine_t.size(); t++) {
    double const s = fine_t[t];
    Index hi = 0;
    while (hi < m && coarse_t[static_cast<size_t>(hi)] < s) {
      hi++;
    }
    for (Index j = 0; j < coarse.dim; j++) {
      double v;
      if (hi == 0) {
        v = double(coarse.row(0)[static_cast<size_t>(j)]);
      } else if (hi == m) {
        v = double(coarse.row(m - 1)[static_cast<size_t>(j)]);
      } else {
        double const t0 = coarse_t[static_cast<size_t>(hi - 1)], t1 = coarse_t[static_cast<size_t>(hi)];
        double const a = (s - t0) / (t1 - t0);
        v = (1.0 - a) * double(coarse.row(hi - 1)[static_cast<size_t>(j)]) + a * double(coarse.row(hi)[static_cast<size_t>(j)]);
      }
      fine.row(Index(t))[static_cast<size_t>(j)] = T(v);
    }
  }
  return fine;
}

/// Coarse latent j sits at the temporal centre of pooled run j of M_fine frames.
template <typename T>
LatentTrajectory<T> interpolate_latents(LatentTrajectory<T> const &coarse, Index fine_frames)
{
  auto const runs = pooled_runs(fine_frames, coarse.frames);
  std::vector<double> ct, ft;
  for (auto const &r : runs) {
    ct.push_back(r.centre());
  }
  for (Index t = 0; t < fine_frames; t++) {
    ft.push_back(double(t));
  }
  return interpolate_latents(coarse, std::span<double const>(ct), std::span<double const>(ft));
}

struct LevelConfig
{
  std::string frames = "M"; // "1", "M", "M/10" (rounded up) or an integer
  Index epochs = 0;
  double lr_net = 5e-4;
  double lr_latent = 1e-3;
  std::string loss = "approx_then_exact"; // or "exact", "approx"
};

inline Index resolve_frame_count(std::string const &spec, Index M)
{
  Index n = 0;
  if (spec == "M") {
    n = M;
  } else if (spec.size() > 2 && spec.rfind("M/", 0) == 0) {
    Index const div = std::stol(spec.substr(2));
    if (div < 1) {
      throw ConfigError("frame count divisor must be >= 1");
    }
    n = (M + div - 1) / div;
  } else {
    size_t pos = 0;
    n = std::stol(spec, &pos);
    if (pos != spec.size()) {
      throw ConfigError("bad frame count '" + spec + "'");
    }
  }
  return std::clamp<Index>(n, 1, M);
}

struct Schedule
{
  std::vector<LevelConfig> levels = {
    {"1", 1000, 1e-3, 0.0, "approx_then_exact"},
    {"M/10", 600, 5e-4, 5e-3, "approx_then_exact"},
    {"M", 700, 5e-4, 1e-3, "approx_then_exact"},
  };
  Index batch_size = 10;
  double switch_fraction = 0.8;
  AdamConfig adam;
};

struct TrainConfig
{
  std::string preset = "desk64";
  Index d = 16;
  Index latent_dim = 2;
  double leaky_slope = 0.1;
  double latent_init_std = 0.1; // fresh multi-frame starts only
  CostWeights weights;
  Schedule schedule;
  uint64_t seed = 1;
};

struct EpochLog
{
  Index level = 0;
  Index epoch = 0;
  LossMode mode = LossMode::Exact;
  CostBreakdown cost;
  double wall_secs = 0.0; // optimisation time since training started
};

struct TrainReport
{
  std::vector<EpochLog> history;
  std::vector<Index> level_frames;
  std::vector<Index> level_start; // index into history
  std::vector<double> level_seconds;
};

/// Raised when the cost becomes NaN/inf; carries a description of the state.
struct TrainingDiverged : NonFiniteError
{
  using NonFiniteError::NonFiniteError;
};

/// State handed to an observer after every epoch. Time spent in the observer is
/// excluded from the reported wall-clock.
template <typename T>
struct EpochState
{
  Index level;
  EpochLog const &log;
  GeneratorParams<T> const &params;
  LatentTrajectory<T> const &latents;
  Dataset<T> const &level_data;
  std::vector<Run> const &runs; // level frame -> original frames
};

template <typename T>
using EpochObserver = std::function<void(EpochState<T> const &)>;

/// Maps latents of a (possibly pooled) level onto all original frames.
template <typename T>
LatentTrajectory<T> expand_latents(LatentTrajectory<T> const &z, std::vector<Run> const &runs, Index frames)
{
  if (Index(runs.size()) == frames) {
    return z;
  }
  std::vector<double> ct, ft;
  for (auto const &r : runs) {
    ct.push_back(r.centre());
  }
  for (Index t = 0; t < frames; t++) {
    ft.push_back(double(t));
  }
  return interpolate_latents(z, std::span<double const>(ct), std::span<double const>(ft));
}

namespace detail {

class Stopwatch
{
public:
  void start() { t0_ = std::chrono::steady_clock::now(); }
  void stop() { acc_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }
  double seconds() const { return acc_; }

private:
  std::chrono::steady_clock::time_point t0_;
  double acc_ = 0.0;
};

inline LossMode level_mode(LevelConfig const &lc, double switch_fraction, Index epoch)
{
  if (lc.loss == "exact") {
    return LossMode::Exact;
  }
  if (lc.loss == "approx") {
    return LossMode::Approx;
  }
  if (lc.loss != "approx_then_exact") {
    throw ConfigError("unknown loss mode '" + lc.loss + "'");
  }
  Index const n_approx = Index(std::floor(switch_fraction * double(lc.epochs) + 1e-9));
  return epoch < n_approx ? LossMode::Approx : LossMode::Exact;
}

} // namespace detail

/// Runs one level in place: every epoch shuffles the frames and takes one ADAM step
/// per batch on theta (and on the latents when lr_latent > 0).
template <typename T>
std::vector<EpochLog> run_level(
  LevelConfig const &lc,
  Schedule const &sched,
  CostWeights const &weights,
  GeneratorParams<T> &params,
  LatentTrajectory<T> &z,
  Dataset<T> const &data,
  std::mt19937_64 &rng,
  Index level_index = 0,
  std::vector<Run> const *runs = nullptr,
  std::type_identity_t<EpochObserver<T>> const &observer = {},
  detail::Stopwatch *clock = nullptr)
{
  if (z.frames != data.n_frames() || z.dim != params.latent_dim) {
    throw ShapeError("run_level: latent trajectory does not match the level data");
  }
  if (sched.batch_size < 1) {
    throw ConfigError("batch_size must be >= 1");
  }
  if (!(sched.switch_fraction > 0.0 && sched.switch_fraction <= 1.0)) {
    throw ConfigError("switch_fraction must lie in (0, 1]");
  }
  detail::Stopwatch local;
  detail::Stopwatch &sw = clock ? *clock : local;
  std::vector<Run> identity;
  if (!runs) {
    for (Index i = 0; i < data.n_frames(); i++) {
      identity.push_back({i, 1});
    }
    runs = &identity;
  }

  std::vector<EpochLog> logs;
  std::vector<Index> order(static_cast<size_t>(data.n_frames()));
  AdamState net_state, lat_state;
  for (Index epoch = 0; epoch < lc.epochs; epoch++) {
    sw.start();
    LossMode const mode = detail::level_mode(lc, sched.switch_fraction, epoch);
    std::iota(order.begin(), order.end(), Index(0));
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.level = level_index;
    log.epoch = epoch;
    log.mode = mode;
    Index n_batches = 0;
    for (size_t b0 = 0; b0 < order.size(); b0 += size_t(sched.batch_size)) {
      size_t const b1 = std::min(order.size(), b0 + size_t(sched.batch_size));
      std::span<Index const> batch(order.data() + b0, b1 - b0);
      CostGradients<T> g(params, z);
      auto const c = total_cost(params, z, data, batch, weights, mode, &g);
      if (!std::isfinite(c.total)) {
        sw.stop();
        throw TrainingDiverged(
          "non-finite cost at level " + std::to_string(level_index) + ", epoch " + std::to_string(epoch) +
          ": data=" + std::to_string(c.data) + " distance=" + std::to_string(c.distance) +
          " latent=" + std::to_string(c.latent));
      }
      adam_step(param_blocks(params), grad_blocks(g.theta), net_state, lc.lr_net, sched.adam);
      if (lc.lr_latent > 0.0) {
        adam_step<T>({std::span<T>(z.values)}, {std::span<T const>(g.latent)}, lat_state, lc.lr_latent, sched.adam);
      }
      log.cost.data += c.data;
      log.cost.distance += c.distance;
      log.cost.latent += c.latent;
      log.cost.total += c.total;
      log.cost.n_terms += c.n_terms;
      n_batches++;
    }
    if (n_batches > 0) {
      log.cost.data /= double(n_batches);
      log.cost.distance /= double(n_batches);
      log.cost.latent /= double(n_batches);
      log.cost.total /= double(n_batches);
    }
    sw.stop();
    log.wall_secs = sw.seconds();
    logs.push_back(log);
    if (observer) {
      observer(EpochState<T>{level_index, logs.back(), params, z, data, *runs});
    }
  }
  return logs;
}

/// Fresh latents for a first level: zero for a single frame, otherwise i.i.d. normal.
template <typename T>
LatentTrajectory<T> initial_latents(Index frames, Index dim, double stddev, uint64_t seed)
{
  LatentTrajectory<T> z(frames, dim);
  if (frames > 1 && stddev > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, stddev);
    for (auto &v : z.values) {
      v = T(n(rng));
    }
  }
  return z;
}

template <typename T>
struct TrainResult
{
  GeneratorParams<T> params;
  LatentTrajectory<T> latents; // one per original frame
  TrainReport report;
};

/// Progressive training-in-time from the given initial generator. A level with no
/// epochs, or whose frame count equals the previous level's (every level after the
/// first when M = 1), is skipped.
template <typename T>
TrainResult<T> train(
  TrainConfig const &cfg, Dataset<T> const &data, GeneratorParams<T> params, std::type_identity_t<EpochObserver<T>> const &observer = {})
{
  data.validate();
  Index const M = data.n_frames();
  if (params.output_size() != data.size) {
    throw ShapeError(
      "generator output " + std::to_string(params.output_size()) + " does not match dataset grid " +
      std::to_string(data.size));
  }
  if (cfg.schedule.levels.empty()) {
    throw ConfigError("schedule has no levels");
  }
  std::mt19937_64 rng(cfg.seed * 0x2545F4914F6CDD1Dull + 7);
  detail::Stopwatch clock;
  TrainReport report;
  LatentTrajectory<T> z;
  std::vector<Run> prev_runs;
  Index prev_frames = 0;
  for (size_t l = 0; l < cfg.schedule.levels.size(); l++) {
    auto const &lc = cfg.schedule.levels[l];
    Index const frames = resolve_frame_count(lc.frames, M);
    if (frames < prev_frames) {
      throw ConfigError("schedule frame counts must be non-decreasing");
    }
    if (frames == prev_frames || lc.epochs == 0) {
      continue;
    }
    auto const runs = pooled_runs(M, frames);
    Dataset<T> pooled;
    if (frames != M) {
      pooled = pool_frames(data, frames);
    }
    Dataset<T> const &level_data = frames == M ? data : pooled;

    if (prev_frames == 0) {
      z = initial_latents<T>(frames, params.latent_dim, cfg.latent_init_std, cfg.seed + 101);
    } else {
      std::vector<double> ct, ft;
      for (auto const &r : prev_runs) {
        ct.push_back(r.centre());
      }
      for (auto const &r : runs) {
        ft.push_back(r.centre());
      }
      z = interpolate_latents(z, std::span<double const>(ct), std::span<double const>(ft));
    }

    report.level_frames.push_back(frames);
    report.level_start.push_back(Index(report.history.size()));
    double const t0 = clock.seconds();
    auto logs = run_level(lc, cfg.schedule, cfg.weights, params, z, level_data, rng, Index(l), &runs, observer, &clock);
    report.history.insert(report.history.end(), logs.begin(), logs.end());
    report.level_seconds.push_back(clock.seconds() - t0);
    prev_runs = runs;
    prev_frames = frames;
  }
  z = expand_latents(z, prev_runs, M);
  return {std::move(params), std::move(z), std::move(report)};
}

template <typename T>
TrainResult<T> train(TrainConfig const &cfg, Dataset<T> const &data, std::type_identity_t<EpochObserver<T>> const &observer = {})
{
  auto params = build_generator<T>(cfg.preset, cfg.d, cfg.latent_dim, cfg.seed, cfg.leaky_slope);
  return train(cfg, data, std::move(params), observer);
}

} // namespace gstm
