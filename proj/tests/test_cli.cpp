#include "gstm/cli.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <bit>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace gstm;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(std::string const &name)
{
  auto const d = fs::temp_directory_path() / ("gstm_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(fs::path const &p)
{
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(fs::path const &p, std::string const &text) { std::ofstream(p, std::ios::binary | std::ios::trunc) << text; }

/// Runs the gstm executable and returns its exit status.
int run_exe(std::string const &args)
{
  std::string const cmd = std::string(GSTM_EXE) + " " + args + " > /dev/null 2>&1";
  int const status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// A small acquisition on the 64x64 grid the desk generator emits.
char const *const small_run = R"(seed = 5
frames = 3
coils = 2
spokes_per_frame = 3
samples_per_spoke = 32
d = 2
batch_size = 2
level1_epochs = 2
level2_frames = 2
level2_epochs = 2
level3_epochs = 3
)";

template <typename T>
bool bit_equal(std::vector<T> const &a, std::vector<T> const &b)
{
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

std::vector<std::array<std::string, 7>> read_loss_rows(fs::path const &p)
{
  std::ifstream f(p);
  std::string line;
  std::getline(f, line);
  EXPECT_EQ(line, loss_csv_header);
  std::vector<std::array<std::string, 7>> rows;
  while (std::getline(f, line)) {
    std::array<std::string, 7> r;
    std::stringstream ss(line);
    for (auto &c : r) {
      std::getline(ss, c, ',');
    }
    rows.push_back(r);
  }
  return rows;
}

} // namespace

TEST(Config, DefaultsAndCanonicalRoundTrip)
{
  auto const def = parse_config("");
  EXPECT_EQ(def.train.d, 16);
  EXPECT_EQ(def.train.weights.lambda1, 0.0005);
  EXPECT_EQ(def.train.weights.lambda2, 2.0);
  EXPECT_EQ(def.phantom.size, 64);
  EXPECT_EQ(def.phantom.frames, 100);
  EXPECT_EQ(def.train.schedule.levels[0].epochs, 1000);
  EXPECT_EQ(def.train.schedule.levels[1].frames, "M/10");
  EXPECT_EQ(def.train.schedule.levels[2].lr_latent, 1e-3);

  auto const cfg = parse_config("lambda1 = 0.1\nresp_freq = 0.0123456789\nlevel3_loss = exact\nout = /tmp/x y\n");
  auto const text = to_text(cfg);
  auto const again = parse_config(text);
  EXPECT_EQ(to_text(again), text);
  EXPECT_EQ(again.train.weights.lambda1, 0.1);
  EXPECT_EQ(again.phantom.resp_freq, 0.0123456789);
  EXPECT_EQ(again.train.schedule.levels[2].loss, "exact");
  EXPECT_EQ(again.out, "/tmp/x y");
}

TEST(Config, CommentsWhitespaceAndSeed)
{
  auto const cfg = parse_config("# header\n\n  seed=42   # trailing\n\td =  8\n");
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_EQ(cfg.phantom.seed, 42u);
  EXPECT_EQ(cfg.train.seed, 42u);
  EXPECT_EQ(cfg.train.d, 8);
}

TEST(Config, ErrorsCarryLineNumbers)
{
  auto line_of = [](std::string const &text) {
    try {
      parse_config(text);
    } catch (ConfigError const &e) {
      return e.line;
    }
    return -1L;
  };
  EXPECT_EQ(line_of("d = 4\n# c\nwidth = 3\n"), 3);
  EXPECT_EQ(line_of("d = 4\nd = 5\n"), 2);
  EXPECT_EQ(line_of("\nlambda1 = abc\n"), 2);
  EXPECT_EQ(line_of("frames = 10x\n"), 1);
  EXPECT_EQ(line_of("just text\n"), 1);
  EXPECT_EQ(line_of("seed =\n"), 1);
  try {
    parse_config("d = 1\nbogus_key = 1\n");
    FAIL();
  } catch (ConfigError const &e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("bogus_key"), std::string::npos);
  }
  EXPECT_THROW(parse_config("lambda1 = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("preset = resnet\n"), ConfigError);
  EXPECT_THROW(parse_config("level2_loss = sometimes\n"), ConfigError);
  EXPECT_THROW(parse_config("level2_frames = 1\nlevel1_frames = M\n"), ConfigError);
  EXPECT_THROW(parse_config("switch_fraction = 0\n"), ConfigError);
}

TEST(Container, DatasetRoundTrip)
{
  auto pc = parse_config(small_run).phantom;
  auto const ds = acquire<float>(pc);
  auto const bytes = encode_dataset(ds);
  EXPECT_EQ(std::string(bytes.data(), 6), std::string("GSTM1\0", 6));
  auto const back = decode_dataset(io::Reader(bytes));
  ASSERT_EQ(back.size, ds.size);
  ASSERT_EQ(back.n_frames(), ds.n_frames());
  EXPECT_TRUE(bit_equal(back.coils.maps, ds.coils.maps));
  for (size_t t = 0; t < ds.frames.size(); t++) {
    auto const &a = ds.frames[t], &b = back.frames[t];
    EXPECT_TRUE(bit_equal(a.samples, b.samples));
    // Coordinates and phases are stored in single precision.
    for (size_t s = 0; s < a.trajectory.coords.size(); s++) {
      EXPECT_EQ(float(a.trajectory.coords[s][0]), b.trajectory.coords[s][0]);
      EXPECT_EQ(float(a.trajectory.coords[s][1]), b.trajectory.coords[s][1]);
    }
    EXPECT_EQ(b.trajectory.samples_per_spoke, 32);
    // Density weights are recomputed from the stored coordinates.
    ASSERT_EQ(a.weights.size(), b.weights.size());
    for (size_t s = 0; s < a.weights.size(); s++) {
      EXPECT_NEAR(a.weights[s], b.weights[s], 1e-4 * a.weights[s]);
    }
    EXPECT_TRUE(bit_equal(ds.truth->images[t].values, back.truth->images[t].values));
    EXPECT_EQ(float(ds.truth->phases[t][0]), back.truth->phases[t][0]);
    EXPECT_EQ(float(ds.truth->phases[t][1]), back.truth->phases[t][1]);
  }
  // A decoded dataset re-encodes to the same bytes.
  EXPECT_EQ(encode_dataset(back), bytes);
}

TEST(Container, HeaderFields)
{
  auto const ds = acquire<float>(parse_config(small_run).phantom);
  auto const bytes = encode_dataset(ds);
  auto u32 = [&](size_t i) {
    uint32_t v = 0;
    for (int b = 3; b >= 0; b--) {
      v = (v << 8) | uint8_t(bytes[6 + 4 * i + size_t(b)]);
    }
    return v;
  };
  EXPECT_EQ(u32(0), container_version);
  EXPECT_EQ(u32(1), 64u);      // N
  EXPECT_EQ(u32(2), 3u);       // M
  EXPECT_EQ(u32(3), 2u);       // C
  EXPECT_EQ(u32(4), 96u);      // S
  EXPECT_EQ(u32(5) & 1u, 1u);  // ground truth present
}

TEST(Container, SingleFrameAndNoTruth)
{
  auto pc = parse_config(small_run).phantom;
  pc.frames = 1;
  auto ds = acquire<float>(pc);
  auto const back = decode_dataset(io::Reader(encode_dataset(ds)));
  EXPECT_EQ(back.n_frames(), 1);
  EXPECT_NO_THROW(back.validate());
  ds.truth.reset();
  auto const bare = decode_dataset(io::Reader(encode_dataset(ds)));
  EXPECT_FALSE(bare.truth);
}

TEST(Container, RejectsCorruptInput)
{
  auto const ds = acquire<float>(parse_config(small_run).phantom);
  auto bytes = encode_dataset(ds);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_dataset(io::Reader(bad_magic)), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 5);
  EXPECT_THROW(decode_dataset(io::Reader(truncated)), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_dataset(io::Reader(trailing)), FormatError);
  auto version = bytes;
  version[6] = 9;
  EXPECT_THROW(decode_dataset(io::Reader(version)), FormatError);
}

TEST(Container, CheckpointRoundTrip)
{
  auto const p = build_generator<float>("desk64", 2, 2, 9);
  LatentTrajectory<float> z(5, 2);
  for (size_t i = 0; i < z.values.size(); i++) {
    z.values[i] = float(i) * 0.37f - 1.0f;
  }
  auto const bytes = encode_checkpoint(Checkpoint{p, z});
  EXPECT_EQ(std::string(bytes.data(), 6), std::string("GSCK1\0", 6));
  auto const back = decode_checkpoint(io::Reader(bytes));
  EXPECT_EQ(back.params.preset, "desk64");
  EXPECT_EQ(back.params.d, 2);
  EXPECT_EQ(back.params.latent_dim, 2);
  EXPECT_EQ(back.params.leaky_slope, p.leaky_slope);
  ASSERT_EQ(back.params.layers.size(), p.layers.size());
  for (size_t l = 0; l < p.layers.size(); l++) {
    EXPECT_TRUE(bit_equal(back.params.layers[l].kernel, p.layers[l].kernel));
    EXPECT_TRUE(bit_equal(back.params.layers[l].bias, p.layers[l].bias));
    EXPECT_EQ(back.params.layers[l].stride, p.layers[l].stride);
    EXPECT_EQ(back.params.activations[l], p.activations[l]);
  }
  EXPECT_TRUE(bit_equal(back.latents.values, z.values));
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_THROW(decode_dataset(io::Reader(bytes)), FormatError);
}

TEST(Export, LatentCsvAndLossRow)
{
  LatentTrajectory<float> z(2, 2);
  z.values = {0.5f, -1.0f, 0.25f, 2.0f};
  EXPECT_EQ(latent_csv(z), "frame,z1,z2\n0,0.5,-1\n1,0.25,2\n");
  EpochLog e;
  e.level = 1;
  e.epoch = 7;
  e.cost = {1.5, 2.0, 0.25, 3.0, 4};
  e.wall_secs = 0.125;
  EXPECT_EQ(loss_csv_row(e), "2,7,1.5,2,0.25,3,0.125");
}

TEST(Export, PgmSeries)
{
  auto const dir = scratch_dir("pgm");
  ComplexImage<float> a(2), b(2);
  a.values = {0.0f, 1.0f, Cx<float>(0.0f, 2.0f), 0.5f};
  b.values = {4.0f, 0.0f, 0.0f, 0.0f};
  auto const paths = write_pgm_series(dir.string(), "frame", ImageSeries<float>{a, b});
  ASSERT_EQ(paths.size(), 2u);
  EXPECT_EQ(fs::path(paths[1]).filename(), "frame_0001.pgm");
  auto const text = slurp(paths[0]);
  std::string const header = "P5\n2 2\n65535\n";
  ASSERT_EQ(text.substr(0, header.size()), header);
  auto px = [&](std::string const &t, size_t i) {
    return (unsigned(uint8_t(t[header.size() + 2 * i])) << 8) | uint8_t(t[header.size() + 2 * i + 1]);
  };
  EXPECT_EQ(px(text, 0), 0u);
  EXPECT_EQ(px(text, 1), 16384u); // 1/4 of the series maximum, rounded
  EXPECT_EQ(px(text, 2), 32768u);
  EXPECT_EQ(px(slurp(paths[1]), 0), 65535u);
  fs::remove_all(dir);
}

TEST(Report, CsvRoundTrip)
{
  EvalReport r;
  r.frames = 2;
  r.ser_db = 17.123456789012345;
  r.psnr_db = 31.5;
  r.ssim = 0.8765432109876543;
  r.gridding_ser_db = 6.1;
  r.gridding_psnr_db = 22.0;
  r.gridding_ssim = 0.4;
  r.corr_cardiac = 0.93;
  r.corr_resp = -0.1;
  r.per_frame = {{1, 2, 0.3, 4, 5, 0.6}, {1.0 / 3.0, 2e-300, -0.5, 300, 1e10, 0.0}};
  auto const text = to_csv(r);
  EXPECT_NE(text.find("gridding_ser_db,"), std::string::npos);
  EXPECT_EQ(parse_eval_report(text), r);
  EXPECT_THROW(parse_eval_report("nonsense"), FormatError);
}

TEST(Evaluate, PlantedCheckpointIsExact)
{
  auto pc = parse_config(small_run).phantom;
  pc.frames = 8;
  pc.snr_db = std::numeric_limits<double>::infinity();
  auto ds = acquire<float>(pc);
  auto const p = build_generator<float>("desk64", 2, 2, 3);
  LatentTrajectory<float> z(8, 2);
  for (Index t = 0; t < 8; t++) {
    z.row(t)[0] = float(ds.truth->phases[static_cast<size_t>(t)][0]);
    z.row(t)[1] = float(ds.truth->phases[static_cast<size_t>(t)][1]);
  }
  auto const frames = cli::render(p, z);
  for (size_t t = 0; t < 8; t++) {
    auto &f = ds.frames[t];
    f.samples = ndft_forward(frames[t], ds.coils, f.trajectory);
    f.drop_caches();
    ds.truth->images[t] = frames[t];
  }
  auto const r = cli::evaluate(ds, Checkpoint{p, z});
  EXPECT_GE(r.ser_db, 100.0);
  EXPECT_GE(r.psnr_db, 100.0);
  EXPECT_NEAR(r.ssim, 1.0, 1e-9);
  EXPECT_NEAR(r.corr_cardiac, 1.0, 1e-6);
  EXPECT_NEAR(r.corr_resp, 1.0, 1e-6);
  EXPECT_LT(r.gridding_ser_db, 30.0);
  EXPECT_EQ(r.per_frame.size(), 8u);

  EXPECT_THROW(cli::evaluate(ds, Checkpoint{p, LatentTrajectory<float>(7, 2)}), ShapeError);
  EXPECT_THROW(cli::evaluate(ds, Checkpoint{build_generator<float>("paper340", 1, 2, 3), z}), ShapeError);
  ds.truth.reset();
  EXPECT_THROW(cli::evaluate(ds, Checkpoint{p, z}), Error);
}

TEST(Commands, SimulateReconstructEvaluate)
{
  auto const dir = scratch_dir("cmds");
  spit(dir / "run.cfg", small_run);
  auto const ds_path = (dir / "data.gstm").string();
  ASSERT_EQ(run_exe("simulate --config " + (dir / "run.cfg").string() + " --out " + ds_path), 0);
  auto const first = slurp(ds_path);
  ASSERT_EQ(run_exe("simulate --config " + (dir / "run.cfg").string() + " --out " + (dir / "again.gstm").string()), 0);
  EXPECT_EQ(slurp(dir / "again.gstm"), first);
  ASSERT_EQ(run_exe("simulate --config " + (dir / "run.cfg").string() + " --seed 6 --out " + (dir / "b.gstm").string()), 0);
  EXPECT_NE(slurp(dir / "b.gstm"), first);

  auto const out = dir / "recon";
  ASSERT_EQ(run_exe("reconstruct --config " + (dir / "run.cfg").string() + " --dataset " + ds_path + " --out " + out.string()), 0);
  auto const rows = read_loss_rows(out / "loss.csv");
  ASSERT_EQ(rows.size(), 7u); // 2 + 2 + 3 epochs
  EXPECT_EQ(rows[0][0], "1");
  EXPECT_EQ(rows[2][0], "2");
  EXPECT_EQ(rows[4][0], "3");
  EXPECT_EQ(rows[6][1], "2");
  auto const cfg = parse_config(small_run);
  for (auto const &r : rows) {
    double const data = std::stod(r[2]), dist = std::stod(r[3]), lat = std::stod(r[4]), total = std::stod(r[5]);
    double const expect = data + cfg.train.weights.lambda1 * dist + cfg.train.weights.lambda2 * lat;
    EXPECT_NEAR(total, expect, 1e-6 * std::abs(total));
  }
  for (auto const *f : {"checkpoint.gsck", "level1.gsck", "level2.gsck", "level3.gsck", "latents.csv", "frames/frame_0002.pgm"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  auto const ck = read_checkpoint((out / "checkpoint.gsck").string());
  EXPECT_EQ(ck.latents.frames, 3);

  auto const report = (dir / "report.csv").string();
  ASSERT_EQ(run_exe("evaluate --dataset " + ds_path + " --checkpoint " + (out / "checkpoint.gsck").string() + " --out " + report), 0);
  auto const parsed = parse_eval_report(slurp(report));
  auto const direct = cli::evaluate(read_dataset(ds_path), ck);
  EXPECT_EQ(parsed, direct);
  EXPECT_GT(parsed.gridding_ser_db, 0.0);
  fs::remove_all(dir);
}

TEST(Commands, ExitCodes)
{
  auto const dir = scratch_dir("codes");
  spit(dir / "bad.cfg", "frames = 3\nnot_a_key = 1\n");
  EXPECT_EQ(run_exe("simulate --config " + (dir / "bad.cfg").string() + " --out " + (dir / "x.gstm").string()), 2);
  EXPECT_FALSE(fs::exists(dir / "x.gstm"));
  EXPECT_EQ(run_exe("simulate --out"), 2);
  EXPECT_EQ(run_exe("simulate --preset huge --out " + (dir / "x.gstm").string()), 2);
  EXPECT_EQ(run_exe(""), 2);

  // A 32x32 grid cannot be fitted by the 64x64 desk generator.
  spit(dir / "small.cfg", std::string(small_run) + "size = 32\n");
  ASSERT_EQ(run_exe("simulate --config " + (dir / "small.cfg").string() + " --out " + (dir / "s.gstm").string()), 0);
  EXPECT_EQ(run_exe("reconstruct --config " + (dir / "small.cfg").string() + " --dataset " + (dir / "s.gstm").string() +
                    " --out " + (dir / "r").string()),
            4);

  // An absurd learning rate overflows the parameters; the partial log survives.
  spit(dir / "diverge.cfg", std::string(small_run) + "level1_lr_net = 1e30\n");
  ASSERT_EQ(run_exe("simulate --config " + (dir / "diverge.cfg").string() + " --out " + (dir / "d.gstm").string()), 0);
  EXPECT_EQ(run_exe("reconstruct --config " + (dir / "diverge.cfg").string() + " --dataset " + (dir / "d.gstm").string() +
                    " --out " + (dir / "dr").string()),
            3);
  EXPECT_TRUE(fs::exists(dir / "dr" / "loss.csv"));

  spit(dir / "m4.cfg", std::string(small_run) + "frames = 4\n");
  std::string m4 = std::string(small_run);
  m4.replace(m4.find("frames = 3"), 10, "frames = 4");
  spit(dir / "m4.cfg", m4);
  ASSERT_EQ(run_exe("simulate --config " + (dir / "m4.cfg").string() + " --out " + (dir / "m4.gstm").string()), 0);
  write_checkpoint((dir / "c.gsck").string(), Checkpoint{build_generator<float>("desk64", 2, 2, 1), LatentTrajectory<float>(3, 2)});
  EXPECT_EQ(run_exe("evaluate --dataset " + (dir / "m4.gstm").string() + " --checkpoint " + (dir / "c.gsck").string() +
                    " --out " + (dir / "r.csv").string()),
            4);
  fs::remove_all(dir);
}
