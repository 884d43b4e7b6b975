#pragma once

// Synthetic ground truth: an ellipse phantom with a cardiac-like blood pool
// and respiratory-like translation, golden-angle radial sampling, smooth coil
// maps, and noisy multicoil measurements.

#include "dataset.hpp"

#include <limits>
#include <random>

namespace gstm {

/// Ellipse in normalised field-of-view units: x, y in [-1, 1), y grows downwards.
struct Ellipse
{
  double cx = 0, cy = 0;
  double a = 0, b = 0;    // semi-axes along the rotated x and y
  double rotation = 0;    // degrees
  Cx<double> amplitude{}; // additive intensity
};

inline std::vector<Ellipse> default_ellipses()
{
  return {
    {0.00, 0.00, 0.80, 0.62, 0.0, {0.30, 0.0}},   // torso
    {-0.40, -0.06, 0.20, 0.36, 10.0, {-0.20, 0.0}}, // lung
    {0.40, -0.06, 0.19, 0.34, -10.0, {-0.20, 0.0}}, // lung
    {0.05, 0.12, 0.27, 0.23, 20.0, {0.20, 0.0}},  // myocardium
    {0.05, 0.12, 0.16, 0.13, 20.0, {0.35, 0.0}},  // blood pool
    {0.00, 0.46, 0.12, 0.09, 0.0, {0.25, 0.0}},   // spine
  };
}

struct PhantomConfig
{
  Index size = 64;
  Index frames = 100;
  std::vector<Ellipse> ellipses = default_ellipses();
  Index blood_pool = 4;
  double cardiac_freq = 0.12;  // cycles / frame
  double cardiac_depth = 0.25; // relative semi-axis modulation
  double resp_freq = 0.017;    // cycles / frame
  double resp_amplitude = 3.0; // pixels of vertical translation
  double phase_scale = 1.0;    // strength of the smooth phase map (radians)
  double snr_db = 30.0;        // +infinity for noiseless data
  Index n_coils = 4;
  Index spokes_per_frame = 8;
  Index samples_per_spoke = 128;
  uint64_t seed = 1234;

  void validate() const
  {
    if (size < 4 || frames < 1) {
      throw ConfigError("phantom: N must be >= 4 and M >= 1");
    }
    if (!(cardiac_freq > 0 && resp_freq > 0 && cardiac_freq > resp_freq)) {
      throw ConfigError("phantom: need cardiac_freq > resp_freq > 0");
    }
    if (cardiac_depth < 0 || cardiac_depth >= 1 || resp_amplitude < 0) {
      throw ConfigError("phantom: cardiac_depth must lie in [0, 1) and resp_amplitude be >= 0");
    }
    if (n_coils < 1 || spokes_per_frame < 1 || samples_per_spoke < 2 || samples_per_spoke % 2 != 0) {
      throw ConfigError("phantom: need n_coils >= 1, spokes_per_frame >= 1, even samples_per_spoke");
    }
    if (ellipses.empty() || blood_pool < 0 || blood_pool >= Index(ellipses.size())) {
      throw ConfigError("phantom: blood_pool must index an ellipse");
    }
    double const shift = resp_amplitude / (double(size) / 2.0);
    for (size_t i = 0; i < ellipses.size(); i++) {
      auto const &e = ellipses[i];
      double const grow = Index(i) == blood_pool ? 1.0 + cardiac_depth : 1.0;
      double const r = std::max(e.a, e.b) * grow;
      if (e.a <= 0 || e.b <= 0 || std::abs(e.cx) + r > 1.0 || std::abs(e.cy) + r + shift > 1.0) {
        throw ConfigError("phantom: ellipse " + std::to_string(i) + " leaves the field of view under motion");
      }
    }
  }
};

/// (cardiac, respiratory) phase per frame: (sin 2 pi f_c t, sin 2 pi f_r t).
inline std::vector<std::array<double, 2>> motion_trace(PhantomConfig const &cfg)
{
  std::vector<std::array<double, 2>> p(static_cast<size_t>(cfg.frames));
  for (Index t = 0; t < cfg.frames; t++) {
    p[static_cast<size_t>(t)] = {
      std::sin(2.0 * std::numbers::pi * cfg.cardiac_freq * double(t)),
      std::sin(2.0 * std::numbers::pi * cfg.resp_freq * double(t))};
  }
  return p;
}

/// Renders one frame with 4x4 sub-pixel coverage sampling. The whole object
/// (including its phase map) translates by resp_amplitude * resp_phase rows; the
/// blood pool semi-axes scale by (1 + cardiac_depth * cardiac_phase).
inline ComplexImage<double> phantom_frame(PhantomConfig const &cfg, double cardiac_phase, double resp_phase)
{
  if (!(std::abs(cardiac_phase) <= 1.0 && std::abs(resp_phase) <= 1.0)) {
    throw ConfigError("phantom_frame: phases must lie in [-1, 1]");
  }
  Index const N = cfg.size;
  double const half = double(N) / 2.0;
  double const dy = cfg.resp_amplitude * resp_phase;

  struct Prepared
  {
    double cx, cy, inv_a2, inv_b2, c, s;
    Cx<double> amp;
  };
  std::vector<Prepared> es;
  for (size_t i = 0; i < cfg.ellipses.size(); i++) {
    auto const &e = cfg.ellipses[i];
    double const g = Index(i) == cfg.blood_pool ? 1.0 + cfg.cardiac_depth * cardiac_phase : 1.0;
    double const th = e.rotation * std::numbers::pi / 180.0;
    es.push_back({e.cx, e.cy, 1.0 / (e.a * e.a * g * g), 1.0 / (e.b * e.b * g * g), std::cos(th), std::sin(th), e.amplitude});
  }

  constexpr int sub = 4;
  ComplexImage<double> img(N);
  for (Index iy = 0; iy < N; iy++) {
    for (Index ix = 0; ix < N; ix++) {
      Cx<double> acc(0);
      for (int sy = 0; sy < sub; sy++) {
        // Object-frame coordinates; integer shifts map sample grids onto each other exactly.
        double const v = ((double(iy) - half - dy) + (sy + 0.5) / sub - 0.5) / half;
        for (int sx = 0; sx < sub; sx++) {
          double const u = ((double(ix) - half) + (sx + 0.5) / sub - 0.5) / half;
          Cx<double> val(0);
          for (auto const &e : es) {
            double const xr = (u - e.cx) * e.c + (v - e.cy) * e.s;
            double const yr = -(u - e.cx) * e.s + (v - e.cy) * e.c;
            if (xr * xr * e.inv_a2 + yr * yr * e.inv_b2 <= 1.0) {
              val += e.amp;
            }
          }
          double const phi = cfg.phase_scale * (0.3 + 0.4 * u - 0.25 * v * v);
          acc += val * std::polar(1.0, phi);
        }
      }
      img(iy, ix) = acc / double(sub * sub);
    }
  }
  return img;
}

/// Golden-angle increment pi * (sqrt(5) - 1) / 2 ~= 111.246 degrees.
inline constexpr double golden_angle = 1.9416110387254666;

/// Spoke j of frame f has global index g = f * spokes_per_frame + j and angle g * golden_angle mod pi.
inline Trajectory golden_angle_trajectory(Index frame_idx, Index spokes_per_frame, Index samples_per_spoke)
{
  if (samples_per_spoke < 2 || samples_per_spoke % 2 != 0) {
    throw ConfigError("golden_angle_trajectory: samples_per_spoke must be even");
  }
  Trajectory t;
  t.samples_per_spoke = samples_per_spoke;
  t.coords.reserve(static_cast<size_t>(spokes_per_frame * samples_per_spoke));
  for (Index j = 0; j < spokes_per_frame; j++) {
    double const g = double(frame_idx * spokes_per_frame + j);
    double const angle = std::fmod(g * golden_angle, std::numbers::pi);
    double const c = std::cos(angle), s = std::sin(angle);
    for (Index i = 0; i < samples_per_spoke; i++) {
      double const r = -0.5 + double(i) / double(samples_per_spoke);
      t.coords.push_back({r * c, r * s});
    }
  }
  return t;
}

/// Gaussian sensitivity bumps centred at equally spaced positions near the border
/// (a single centred bump for one coil) with a gentle linear phase.
inline CoilMaps<double> simulate_coilmaps(Index n_coils, Index size, uint64_t seed)
{
  if (n_coils < 1) {
    throw ConfigError("simulate_coilmaps: need at least one coil");
  }
  CoilMaps<double> maps(n_coils, size);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-std::numbers::pi, std::numbers::pi);
  double const half = double(size) / 2.0;
  double const sigma = n_coils == 1 ? double(size) : 0.6 * half;
  for (Index c = 0; c < n_coils; c++) {
    double const ang = 2.0 * std::numbers::pi * double(c) / double(n_coils);
    double const px = n_coils == 1 ? 0.0 : 0.9 * half * std::cos(ang);
    double const py = n_coils == 1 ? 0.0 : 0.9 * half * std::sin(ang);
    double const phase0 = u(rng);
    double const slope = 0.5 * std::numbers::pi / double(size);
    for (Index y = 0; y < size; y++) {
      for (Index x = 0; x < size; x++) {
        double const rx = double(x) - half, ry = double(y) - half;
        double const d2 = (rx - px) * (rx - px) + (ry - py) * (ry - py);
        double const mag = std::exp(-d2 / (2.0 * sigma * sigma));
        double const phi = phase0 + slope * (std::cos(ang) * rx + std::sin(ang) * ry);
        maps.coil(c)[y * size + x] = std::polar(mag, phi);
      }
    }
  }
  return maps;
}

/// Noise standard deviation (RMS complex magnitude) giving the requested SNR.
inline double noise_sigma(double clean_norm2, Index n_values, double snr_db)
{
  if (!std::isfinite(snr_db)) {
    return 0.0;
  }
  return std::sqrt(clean_norm2) / (std::sqrt(double(n_values)) * std::pow(10.0, snr_db / 20.0));
}

/// Simulates the full acquisition. Stored values (trajectory, samples, coil maps,
/// truth) are rounded to single precision so an in-memory dataset is identical to
/// one read back from a container file.
template <typename T>
Dataset<T> acquire(PhantomConfig const &cfg)
{
  cfg.validate();
  Index const N = cfg.size, M = cfg.frames, C = cfg.n_coils;
  auto const f32 = [](double v) { return double(float(v)); };
  auto const c32 = [&](Cx<double> v) { return Cx<double>(f32(v.real()), f32(v.imag())); };

  // Separate seeded streams: coil maps and noise never share random state with
  // each other or with the (deterministic) phantom content.
  auto coils = simulate_coilmaps(C, N, cfg.seed ^ 0x9E3779B97F4A7C15ull);
  for (auto &v : coils.maps) {
    v = c32(v);
  }
  auto const phases = motion_trace(cfg);

  GroundTruth<double> truth;
  truth.phases = phases;
  std::vector<Trajectory> trajs;
  std::vector<std::vector<Cx<double>>> clean;
  double clean_norm2 = 0.0;
  Index n_values = 0;
  for (Index t = 0; t < M; t++) {
    auto img = phantom_frame(cfg, phases[static_cast<size_t>(t)][0], phases[static_cast<size_t>(t)][1]);
    for (auto &v : img.values) {
      v = c32(v);
    }
    auto traj = golden_angle_trajectory(t, cfg.spokes_per_frame, cfg.samples_per_spoke);
    for (auto &k : traj.coords) {
      k = {f32(k[0]), f32(k[1])};
    }
    auto b = ndft_forward(img, coils, traj);
    clean_norm2 += norm2(std::span<Cx<double> const>(b));
    n_values += Index(b.size());
    truth.images.push_back(std::move(img));
    trajs.push_back(std::move(traj));
    clean.push_back(std::move(b));
  }

  double const sigma = noise_sigma(clean_norm2, n_values, cfg.snr_db);
  std::mt19937_64 noise_rng(cfg.seed ^ 0xD1B54A32D192ED03ull);
  std::normal_distribution<double> gauss(0.0, sigma / std::sqrt(2.0));

  Dataset<T> ds;
  ds.size = N;
  ds.coils = coils.cast<T>();
  for (Index t = 0; t < M; t++) {
    KSpaceFrame<T> f;
    f.trajectory = std::move(trajs[static_cast<size_t>(t)]);
    f.n_coils = C;
    auto &b = clean[static_cast<size_t>(t)];
    f.samples.resize(b.size());
    for (size_t i = 0; i < b.size(); i++) {
      Cx<double> v = b[i];
      if (sigma > 0.0) {
        double const re = gauss(noise_rng);
        double const im = gauss(noise_rng);
        v += Cx<double>(re, im);
      }
      f.samples[i] = Cx<T>(c32(v));
    }
    f.compute_weights();
    ds.frames.push_back(std::move(f));
  }
  GroundTruth<T> gt;
  gt.phases = truth.phases;
  for (auto const &img : truth.images) {
    gt.images.push_back(img.cast<T>());
  }
  ds.truth = std::move(gt);
  return ds;
}

} // namespace gstm
