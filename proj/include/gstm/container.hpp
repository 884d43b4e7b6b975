#pragma once

// Binary dataset (GSTM) and checkpoint (GSCK) containers, 16-bit PGM frame
// export, and the CSV logs / evaluation report.
//
// All binary values are little-endian; reals are 32-bit IEEE floats.

#include "dataset.hpp"
#include "objective.hpp"
#include "trainer.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace gstm {

inline constexpr char dataset_magic[6] = {'G', 'S', 'T', 'M', '1', '\0'};
inline constexpr char checkpoint_magic[6] = {'G', 'S', 'C', 'K', '1', '\0'};
inline constexpr uint32_t container_version = 1;

/// Malformed or truncated container file.
struct FormatError : Error
{
  using Error::Error;
};

namespace io {

class Writer
{
public:
  void bytes(char const *p, size_t n) { buf_.insert(buf_.end(), p, p + n); }

  void u32(uint32_t v)
  {
    for (int i = 0; i < 4; i++) {
      buf_.push_back(char((v >> (8 * i)) & 0xffu));
    }
  }

  void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }

  void cx(Cx<float> v)
  {
    f32(v.real());
    f32(v.imag());
  }

  void str(std::string const &s)
  {
    u32(uint32_t(s.size()));
    bytes(s.data(), s.size());
  }

  std::vector<char> const &data() const { return buf_; }

  void save(std::string const &path) const
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
      throw Error("cannot open '" + path + "' for writing");
    }
    f.write(buf_.data(), std::streamsize(buf_.size()));
    if (!f) {
      throw Error("write to '" + path + "' failed");
    }
  }

private:
  std::vector<char> buf_;
};

class Reader
{
public:
  explicit Reader(std::vector<char> data)
    : buf_(std::move(data))
  {
  }

  static Reader load(std::string const &path)
  {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
      throw Error("cannot open '" + path + "'");
    }
    return Reader(std::vector<char>(std::istreambuf_iterator<char>(f), {}));
  }

  void expect_magic(char const (&magic)[6])
  {
    need(6);
    if (std::memcmp(buf_.data() + pos_, magic, 6) != 0) {
      throw FormatError("bad magic: not a " + std::string(magic, 4) + " file");
    }
    pos_ += 6;
  }

  uint32_t u32()
  {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; i++) {
      v |= uint32_t(static_cast<unsigned char>(buf_[pos_ + size_t(i)])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  Cx<float> cx()
  {
    float const re = f32();
    return {re, f32()};
  }

  std::string str()
  {
    auto const n = u32();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == buf_.size(); }

private:
  void need(size_t n) const
  {
    if (buf_.size() - pos_ < n) {
      throw FormatError("unexpected end of file");
    }
  }

  std::vector<char> buf_;
  size_t pos_ = 0;
};

} // namespace io

/// Largest divisor of the sample count whose consecutive blocks are straight lines
/// through the k-space origin; 0 when no such layout exists.
inline Index infer_samples_per_spoke(Trajectory const &traj)
{
  Index const S = traj.size();
  auto collinear = [&](Index sps) {
    for (Index b = 0; b < S / sps; b++) {
      std::array<double, 2> far{0.0, 0.0};
      double r = 0.0;
      for (Index j = 0; j < sps; j++) {
        auto const &p = traj.coords[static_cast<size_t>(b * sps + j)];
        if (std::hypot(p[0], p[1]) > r) {
          r = std::hypot(p[0], p[1]);
          far = p;
        }
      }
      if (r == 0.0) {
        return false;
      }
      for (Index j = 0; j < sps; j++) {
        auto const &p = traj.coords[static_cast<size_t>(b * sps + j)];
        if (std::abs(p[0] * far[1] - p[1] * far[0]) / r > 1e-6) {
          return false;
        }
      }
    }
    return true;
  };
  for (Index sps = S; sps >= 2; sps--) {
    if (S % sps == 0 && collinear(sps)) {
      return sps;
    }
  }
  return 0;
}

/// Every frame must have the same sample count.
inline std::vector<char> encode_dataset(Dataset<float> const &ds)
{
  ds.validate();
  Index const N = ds.size, M = ds.n_frames(), C = ds.coils.n_coils, S = ds.frames.front().n_samples();
  for (auto const &f : ds.frames) {
    if (f.n_samples() != S) {
      throw ShapeError("GSTM containers need the same sample count in every frame");
    }
  }
  io::Writer w;
  w.bytes(dataset_magic, 6);
  for (auto const v : {uint32_t(container_version), uint32_t(N), uint32_t(M), uint32_t(C), uint32_t(S)}) {
    w.u32(v);
  }
  w.u32(ds.truth ? 1u : 0u);
  for (auto const &f : ds.frames) {
    for (auto const &k : f.trajectory.coords) {
      w.f32(float(k[0]));
      w.f32(float(k[1]));
    }
  }
  for (auto const &f : ds.frames) {
    for (auto const v : f.samples) {
      w.cx(v);
    }
  }
  for (auto const v : ds.coils.maps) {
    w.cx(v);
  }
  if (ds.truth) {
    for (auto const &img : ds.truth->images) {
      for (auto const v : img.values) {
        w.cx(v);
      }
    }
    for (auto const &ph : ds.truth->phases) {
      w.f32(float(ph[0]));
      w.f32(float(ph[1]));
    }
  }
  return w.data();
}

inline void write_dataset(std::string const &path, Dataset<float> const &ds)
{
  io::Writer w;
  auto const bytes = encode_dataset(ds);
  w.bytes(bytes.data(), bytes.size());
  w.save(path);
}

/// Density weights are recomputed from the stored trajectory.
inline Dataset<float> decode_dataset(io::Reader r)
{
  r.expect_magic(dataset_magic);
  auto const version = r.u32();
  if (version != container_version) {
    throw FormatError("unsupported GSTM version " + std::to_string(version));
  }
  Index const N = r.u32(), M = r.u32(), C = r.u32(), S = r.u32();
  auto const flags = r.u32();
  if (N < 1 || M < 1 || C < 1 || S < 1) {
    throw FormatError("GSTM header has an empty dimension");
  }
  Dataset<float> ds;
  ds.size = N;
  ds.frames.resize(static_cast<size_t>(M));
  for (auto &f : ds.frames) {
    f.n_coils = C;
    f.trajectory.coords.resize(static_cast<size_t>(S));
    for (auto &k : f.trajectory.coords) {
      k[0] = r.f32();
      k[1] = r.f32();
    }
    f.trajectory.samples_per_spoke = infer_samples_per_spoke(f.trajectory);
  }
  for (auto &f : ds.frames) {
    f.samples.resize(static_cast<size_t>(C * S));
    for (auto &v : f.samples) {
      v = r.cx();
    }
  }
  ds.coils = CoilMaps<float>(C, N);
  for (auto &v : ds.coils.maps) {
    v = r.cx();
  }
  if (flags & 1u) {
    GroundTruth<float> gt;
    for (Index t = 0; t < M; t++) {
      ComplexImage<float> img(N);
      for (auto &v : img.values) {
        v = r.cx();
      }
      gt.images.push_back(std::move(img));
    }
    for (Index t = 0; t < M; t++) {
      double const a = r.f32();
      gt.phases.push_back({a, double(r.f32())});
    }
    ds.truth = std::move(gt);
  }
  if (!r.at_end()) {
    throw FormatError("trailing bytes after GSTM payload");
  }
  for (auto &f : ds.frames) {
    f.compute_weights();
  }
  ds.validate();
  return ds;
}

inline Dataset<float> read_dataset(std::string const &path) { return decode_dataset(io::Reader::load(path)); }

/// Trained generator and per-frame latents.
struct Checkpoint
{
  GeneratorParams<float> params;
  LatentTrajectory<float> latents;
};

inline std::vector<char> encode_checkpoint(Checkpoint const &ck)
{
  auto const &p = ck.params;
  if (ck.latents.dim != p.latent_dim) {
    throw ShapeError("checkpoint: latent width does not match the generator");
  }
  io::Writer w;
  w.bytes(checkpoint_magic, 6);
  w.u32(container_version);
  w.u32(uint32_t(p.latent_dim));
  w.u32(uint32_t(p.d));
  w.u32(uint32_t(ck.latents.frames));
  w.f32(float(p.leaky_slope));
  w.str(p.preset);
  w.u32(uint32_t(p.layers.size()));
  for (size_t i = 0; i < p.layers.size(); i++) {
    auto const &l = p.layers[i];
    for (auto const v : {l.in_channels, l.out_channels, l.kernel_size, l.stride, l.padding}) {
      w.u32(uint32_t(v));
    }
    w.u32(uint32_t(p.activations[i]));
  }
  for (auto const &l : p.layers) {
    for (auto const v : l.kernel) {
      w.f32(v);
    }
    for (auto const v : l.bias) {
      w.f32(v);
    }
  }
  for (auto const v : ck.latents.values) {
    w.f32(v);
  }
  return w.data();
}

inline void write_checkpoint(std::string const &path, Checkpoint const &ck)
{
  io::Writer w;
  auto const bytes = encode_checkpoint(ck);
  w.bytes(bytes.data(), bytes.size());
  w.save(path);
}

inline Checkpoint decode_checkpoint(io::Reader r)
{
  r.expect_magic(checkpoint_magic);
  auto const version = r.u32();
  if (version != container_version) {
    throw FormatError("unsupported GSCK version " + std::to_string(version));
  }
  Checkpoint ck;
  GeneratorParams<float> p;
  Index const latent_dim = r.u32();
  p.d = r.u32();
  Index const frames = r.u32();
  float const slope = r.f32();
  p.preset = r.str();
  auto const n_layers = r.u32();
  if (latent_dim < 1 || frames < 1 || n_layers < 1 || n_layers > 64) {
    throw FormatError("GSCK header is inconsistent");
  }
  p.latent_dim = latent_dim;
  p.leaky_slope = slope;
  for (uint32_t i = 0; i < n_layers; i++) {
    Index const cin = r.u32(), cout = r.u32(), k = r.u32(), s = r.u32(), pad = r.u32();
    auto const act = r.u32();
    if (act > uint32_t(Activation::Identity)) {
      throw FormatError("GSCK: unknown activation code");
    }
    p.layers.emplace_back(cin, cout, k, s, pad);
    p.activations.push_back(Activation(act));
  }
  for (auto &l : p.layers) {
    for (auto &v : l.kernel) {
      v = r.f32();
    }
    for (auto &v : l.bias) {
      v = r.f32();
    }
  }
  ck.latents = LatentTrajectory<float>(frames, latent_dim);
  for (auto &v : ck.latents.values) {
    v = r.f32();
  }
  if (!r.at_end()) {
    throw FormatError("trailing bytes after GSCK payload");
  }
  p.output_size();
  ck.params = std::move(p);
  return ck;
}

inline Checkpoint read_checkpoint(std::string const &path) { return decode_checkpoint(io::Reader::load(path)); }

/// Magnitude images as binary 16-bit PGM, scaled so the series maximum maps to 65535.
template <typename T>
std::vector<std::string> write_pgm_series(std::string const &dir, std::string const &stem, ImageSeries<T> const &series)
{
  double peak = 0.0;
  for (auto const &img : series) {
    for (auto const v : img.values) {
      peak = std::max(peak, double(std::abs(v)));
    }
  }
  std::vector<std::string> paths;
  for (size_t t = 0; t < series.size(); t++) {
    auto const &img = series[t];
    char name[32];
    std::snprintf(name, sizeof name, "_%04zu.pgm", t);
    auto const path = (std::filesystem::path(dir) / (stem + name)).string();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
      throw Error("cannot open '" + path + "' for writing");
    }
    f << "P5\n" << img.size << " " << img.size << "\n65535\n";
    std::vector<char> row;
    row.reserve(static_cast<size_t>(2 * img.pixels()));
    for (auto const v : img.values) {
      double const m = peak > 0.0 ? double(std::abs(v)) / peak : 0.0;
      auto const q = uint16_t(std::lround(std::clamp(m, 0.0, 1.0) * 65535.0));
      row.push_back(char(q >> 8));
      row.push_back(char(q & 0xffu));
    }
    f.write(row.data(), std::streamsize(row.size()));
    paths.push_back(path);
  }
  return paths;
}

inline std::string format_real(double v)
{
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr char const *loss_csv_header = "level,epoch,data,distance,latent,total,wall_secs";

inline std::string loss_csv_row(EpochLog const &e)
{
  return std::to_string(e.level + 1) + "," + std::to_string(e.epoch) + "," + format_real(e.cost.data) + "," +
         format_real(e.cost.distance) + "," + format_real(e.cost.latent) + "," + format_real(e.cost.total) + "," +
         format_real(e.wall_secs);
}

template <typename T>
std::string latent_csv(LatentTrajectory<T> const &z)
{
  std::string out = "frame";
  for (Index j = 0; j < z.dim; j++) {
    out += ",z" + std::to_string(j + 1);
  }
  out += "\n";
  for (Index t = 0; t < z.frames; t++) {
    out += std::to_string(t);
    for (auto const v : z.row(t)) {
      out += "," + format_real(double(v));
    }
    out += "\n";
  }
  return out;
}

struct FrameScores
{
  double ser_db = 0, psnr_db = 0, ssim = 0;
  double gridding_ser_db = 0, gridding_psnr_db = 0, gridding_ssim = 0;
};

/// Model reconstruction versus ground truth, with the gridding baseline alongside.
struct EvalReport
{
  Index frames = 0;
  double ser_db = 0, psnr_db = 0, ssim = 0;
  double gridding_ser_db = 0, gridding_psnr_db = 0, gridding_ssim = 0;
  double corr_cardiac = 0, corr_resp = 0; // 0 when fewer than 8 frames
  std::vector<FrameScores> per_frame;

  bool operator==(EvalReport const &) const = default;
};

inline bool operator==(FrameScores const &a, FrameScores const &b)
{
  return a.ser_db == b.ser_db && a.psnr_db == b.psnr_db && a.ssim == b.ssim && a.gridding_ser_db == b.gridding_ser_db &&
         a.gridding_psnr_db == b.gridding_psnr_db && a.gridding_ssim == b.gridding_ssim;
}

inline std::string to_csv(EvalReport const &r)
{
  std::ostringstream o;
  o << "key,value\n";
  o << "frames," << r.frames << "\n";
  o << "ser_db," << format_real(r.ser_db) << "\n";
  o << "psnr_db," << format_real(r.psnr_db) << "\n";
  o << "ssim," << format_real(r.ssim) << "\n";
  o << "gridding_ser_db," << format_real(r.gridding_ser_db) << "\n";
  o << "gridding_psnr_db," << format_real(r.gridding_psnr_db) << "\n";
  o << "gridding_ssim," << format_real(r.gridding_ssim) << "\n";
  o << "corr_cardiac," << format_real(r.corr_cardiac) << "\n";
  o << "corr_resp," << format_real(r.corr_resp) << "\n";
  o << "\nframe,ser_db,psnr_db,ssim,gridding_ser_db,gridding_psnr_db,gridding_ssim\n";
  for (size_t t = 0; t < r.per_frame.size(); t++) {
    auto const &f = r.per_frame[t];
    o << t << "," << format_real(f.ser_db) << "," << format_real(f.psnr_db) << "," << format_real(f.ssim) << ","
      << format_real(f.gridding_ser_db) << "," << format_real(f.gridding_psnr_db) << ","
      << format_real(f.gridding_ssim) << "\n";
  }
  return o.str();
}

inline EvalReport parse_eval_report(std::string const &text)
{
  std::istringstream in(text);
  std::string line;
  auto split = [](std::string const &s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      out.push_back(cell);
    }
    return out;
  };
  if (!std::getline(in, line) || line != "key,value") {
    throw FormatError("evaluation report: missing key,value header");
  }
  std::map<std::string, std::string> kv;
  while (std::getline(in, line) && !line.empty()) {
    auto const cells = split(line);
    if (cells.size() != 2) {
      throw FormatError("evaluation report: bad summary line '" + line + "'");
    }
    kv[cells[0]] = cells[1];
  }
  auto num = [&](char const *key) {
    auto it = kv.find(key);
    if (it == kv.end()) {
      throw FormatError(std::string("evaluation report: missing ") + key);
    }
    return std::stod(it->second);
  };
  EvalReport r;
  r.frames = Index(num("frames"));
  r.ser_db = num("ser_db");
  r.psnr_db = num("psnr_db");
  r.ssim = num("ssim");
  r.gridding_ser_db = num("gridding_ser_db");
  r.gridding_psnr_db = num("gridding_psnr_db");
  r.gridding_ssim = num("gridding_ssim");
  r.corr_cardiac = num("corr_cardiac");
  r.corr_resp = num("corr_resp");
  std::getline(in, line); // per-frame header
  while (std::getline(in, line) && !line.empty()) {
    auto const c = split(line);
    if (c.size() != 7) {
      throw FormatError("evaluation report: bad frame line '" + line + "'");
    }
    r.per_frame.push_back(
      {std::stod(c[1]), std::stod(c[2]), std::stod(c[3]), std::stod(c[4]), std::stod(c[5]), std::stod(c[6])});
  }
  if (Index(r.per_frame.size()) != r.frames) {
    throw FormatError("evaluation report: frame table length does not match 'frames'");
  }
  return r;
}

} // namespace gstm
