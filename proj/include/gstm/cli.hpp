#pragma once

// Command implementations behind the `gstm` executable. Each returns the
// process exit code and reports problems on the given stream.

#include "config.hpp"
#include "container.hpp"
#include "metrics.hpp"

#include <filesystem>
#include <iostream>

namespace gstm::cli {

enum ExitCode : int
{
  ok = 0,
  failure = 1,
  bad_config = 2,
  non_finite = 3,
  shape_mismatch = 4,
};

/// Simulates the phantom acquisition described by `cfg` and writes a GSTM container.
inline int cmd_simulate(RunConfig const &cfg, std::string const &out_path, std::ostream &log = std::cerr)
{
  auto const ds = acquire<float>(cfg.phantom);
  write_dataset(out_path, ds);
  log << "wrote " << out_path << ": N=" << ds.size << " M=" << ds.n_frames() << " coils=" << ds.coils.n_coils
      << " samples/frame=" << ds.frames.front().n_samples() << "\n";
  return ok;
}

/// Output-size check shared by reconstruct and evaluate.
inline void check_geometry(GeneratorParams<float> const &p, Dataset<float> const &ds)
{
  if (p.output_size() != ds.size) {
    throw ShapeError(
      "generator emits " + std::to_string(p.output_size()) + "x" + std::to_string(p.output_size()) +
      " images but the dataset grid is " + std::to_string(ds.size));
  }
}

template <typename T>
ImageSeries<T> render(GeneratorParams<T> const &p, LatentTrajectory<T> const &z)
{
  ImageSeries<T> out;
  for (Index t = 0; t < z.frames; t++) {
    out.push_back(generate_frame(p, z.row(t)));
  }
  return out;
}

/// Trains on the dataset and writes checkpoints, logs and magnitude frames into `out_dir`.
inline int cmd_reconstruct(
  RunConfig const &cfg, std::string const &dataset_path, std::string const &out_dir, std::ostream &log = std::cerr)
{
  namespace fs = std::filesystem;
  auto const ds = read_dataset(dataset_path);
  auto params = build_generator<float>(cfg.train.preset, cfg.train.d, cfg.train.latent_dim, cfg.train.seed, cfg.train.leaky_slope);
  check_geometry(params, ds);
  fs::create_directories(fs::path(out_dir) / "frames");

  std::ofstream loss_csv(fs::path(out_dir) / "loss.csv", std::ios::trunc);
  loss_csv << loss_csv_header << "\n";
  auto observer = [&](EpochState<float> const &s) {
    loss_csv << loss_csv_row(s.log) << "\n" << std::flush;
    auto const &lv = cfg.train.schedule.levels[static_cast<size_t>(s.level)];
    if (s.log.epoch + 1 == lv.epochs) {
      Checkpoint ck{s.params, expand_latents(s.latents, s.runs, ds.n_frames())};
      auto const path = fs::path(out_dir) / ("level" + std::to_string(s.level + 1) + ".gsck");
      write_checkpoint(path.string(), ck);
      log << "level " << s.level + 1 << " done: " << s.level_data.n_frames() << " frames, total cost "
          << s.log.cost.total << ", " << s.log.wall_secs << " s\n";
    }
  };
  TrainResult<float> result;
  try {
    result = train(cfg.train, ds, std::move(params), observer);
  } catch (TrainingDiverged const &e) {
    log << "error: " << e.what() << "\n";
    return non_finite;
  }
  Checkpoint ck{result.params, result.latents};
  write_checkpoint((fs::path(out_dir) / "checkpoint.gsck").string(), ck);
  std::ofstream(fs::path(out_dir) / "latents.csv", std::ios::trunc) << latent_csv(result.latents);
  write_pgm_series((fs::path(out_dir) / "frames").string(), "frame", render(result.params, result.latents));
  log << "wrote " << out_dir << " (" << result.report.history.size() << " epochs)\n";
  return ok;
}

/// Scores the checkpoint's frames and the per-frame gridding reconstruction against
/// the dataset's ground truth.
inline EvalReport evaluate(Dataset<float> const &ds, Checkpoint const &ck)
{
  if (!ds.truth) {
    throw Error("dataset carries no ground truth");
  }
  check_geometry(ck.params, ds);
  if (ck.latents.frames != ds.n_frames()) {
    throw ShapeError(
      "checkpoint holds " + std::to_string(ck.latents.frames) + " latents for a " + std::to_string(ds.n_frames()) +
      "-frame dataset");
  }
  auto const &truth = ds.truth->images;
  auto const recon = render(ck.params, ck.latents);
  ImageSeries<float> grid;
  for (auto const &f : ds.frames) {
    grid.push_back(gridding_recon(f, ds.coils));
  }
  EvalReport r;
  r.frames = ds.n_frames();
  r.ser_db = ser(truth, recon);
  auto const p = psnr_series(truth, recon);
  auto const s = ssim_series(truth, recon);
  r.gridding_ser_db = ser(truth, grid);
  auto const gp = psnr_series(truth, grid);
  auto const gs = ssim_series(truth, grid);
  r.psnr_db = p.mean_db;
  r.ssim = s.mean;
  r.gridding_psnr_db = gp.mean_db;
  r.gridding_ssim = gs.mean;
  for (Index t = 0; t < r.frames; t++) {
    auto const i = static_cast<size_t>(t);
    r.per_frame.push_back(
      {ser(truth[i], recon[i]), p.per_frame_db[i], s.per_frame[i], ser(truth[i], grid[i]), gp.per_frame_db[i],
       gs.per_frame[i]});
  }
  if (r.frames >= 8) {
    std::vector<double> z(ck.latents.values.begin(), ck.latents.values.end());
    auto const a = latent_alignment(z, ck.latents.dim, ds.truth->phases);
    r.corr_cardiac = a.corr_cardiac;
    r.corr_resp = a.corr_resp;
  }
  return r;
}

inline int cmd_evaluate(
  std::string const &dataset_path, std::string const &checkpoint_path, std::string const &out_path,
  std::ostream &log = std::cerr)
{
  auto const report = evaluate(read_dataset(dataset_path), read_checkpoint(checkpoint_path));
  std::ofstream f(out_path, std::ios::trunc);
  if (!f) {
    throw Error("cannot open '" + out_path + "' for writing");
  }
  f << to_csv(report);
  log << "SER " << report.ser_db << " dB (gridding " << report.gridding_ser_db << " dB), PSNR " << report.psnr_db
      << " dB, SSIM " << report.ssim << "\n";
  return ok;
}

/// Maps library exceptions onto exit codes.
template <typename F>
int guarded(F &&body, std::ostream &log = std::cerr)
{
  try {
    return body();
  } catch (ConfigError const &e) {
    log << "config error: " << e.what() << "\n";
    return bad_config;
  } catch (NonFiniteError const &e) {
    log << "error: " << e.what() << "\n";
    return non_finite;
  } catch (ShapeError const &e) {
    log << "shape mismatch: " << e.what() << "\n";
    return shape_mismatch;
  } catch (std::exception const &e) {
    log << "error: " << e.what() << "\n";
    return failure;
  }
}

} // namespace gstm::cli
