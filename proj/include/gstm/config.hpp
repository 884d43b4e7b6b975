#pragma once

// Flat `key = value` run configuration. Every key has a default; unknown or
// repeated keys are rejected with the offending line number.

#include "phantom.hpp"
#include "trainer.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <variant>

namespace gstm {

struct RunConfig
{
  PhantomConfig phantom;
  TrainConfig train;
  uint64_t seed = 1;
  std::string dataset;
  std::string out;

  /// Propagates the master seed to the simulator and the trainer.
  void apply_seed(uint64_t s)
  {
    seed = s;
    phantom.seed = s;
    train.seed = s;
  }
};

namespace detail {

using ConfigSlot = std::variant<Index *, double *, uint64_t *, std::string *>;

struct ConfigKey
{
  std::string name;
  ConfigSlot slot;
};

inline std::vector<ConfigKey> config_keys(RunConfig &c)
{
  auto &p = c.phantom;
  auto &t = c.train;
  auto &s = t.schedule;
  std::vector<ConfigKey> keys = {
    {"seed", &c.seed},
    {"dataset", &c.dataset},
    {"out", &c.out},
    {"size", &p.size},
    {"frames", &p.frames},
    {"coils", &p.n_coils},
    {"spokes_per_frame", &p.spokes_per_frame},
    {"samples_per_spoke", &p.samples_per_spoke},
    {"snr_db", &p.snr_db},
    {"cardiac_freq", &p.cardiac_freq},
    {"cardiac_depth", &p.cardiac_depth},
    {"resp_freq", &p.resp_freq},
    {"resp_amplitude", &p.resp_amplitude},
    {"phase_scale", &p.phase_scale},
    {"preset", &t.preset},
    {"d", &t.d},
    {"latent_dim", &t.latent_dim},
    {"leaky_slope", &t.leaky_slope},
    {"latent_init_std", &t.latent_init_std},
    {"lambda1", &t.weights.lambda1},
    {"lambda2", &t.weights.lambda2},
    {"jacobian_step", &t.weights.jacobian_step},
    {"batch_size", &s.batch_size},
    {"switch_fraction", &s.switch_fraction},
    {"adam_beta1", &s.adam.beta1},
    {"adam_beta2", &s.adam.beta2},
    {"adam_eps", &s.adam.eps},
  };
  for (size_t l = 0; l < s.levels.size(); l++) {
    auto &lv = s.levels[l];
    std::string const pre = "level" + std::to_string(l + 1) + "_";
    keys.push_back({pre + "frames", &lv.frames});
    keys.push_back({pre + "epochs", &lv.epochs});
    keys.push_back({pre + "lr_net", &lv.lr_net});
    keys.push_back({pre + "lr_latent", &lv.lr_latent});
    keys.push_back({pre + "loss", &lv.loss});
  }
  return keys;
}

inline std::string trim(std::string_view s)
{
  auto const b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) {
    return {};
  }
  auto const e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(std::string const &v, std::string const &key, Index line)
{
  N out{};
  auto const *end = v.data() + v.size();
  auto const [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("bad value '" + v + "' for " + key, line);
  }
  return out;
}

inline std::string format_double(double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace detail

/// Checks cross-field constraints that individual keys cannot express.
inline void validate(RunConfig const &c)
{
  c.phantom.validate();
  preset_layers(c.train.preset, c.train.d);
  if (c.train.latent_dim < 1) {
    throw ConfigError("latent_dim must be >= 1");
  }
  if (!(c.train.leaky_slope > 0.0 && c.train.leaky_slope < 1.0)) {
    throw ConfigError("leaky_slope must lie in (0, 1)");
  }
  if (c.train.weights.lambda1 < 0 || c.train.weights.lambda2 < 0 || !(c.train.weights.jacobian_step > 0)) {
    throw ConfigError("lambda1, lambda2 must be >= 0 and jacobian_step > 0");
  }
  auto const &s = c.train.schedule;
  if (s.batch_size < 1 || !(s.switch_fraction > 0 && s.switch_fraction <= 1)) {
    throw ConfigError("batch_size must be >= 1 and switch_fraction in (0, 1]");
  }
  if (!(s.adam.beta1 > 0 && s.adam.beta1 < 1 && s.adam.beta2 > 0 && s.adam.beta2 < 1 && s.adam.eps > 0)) {
    throw ConfigError("adam_beta1, adam_beta2 must lie in (0, 1) and adam_eps > 0");
  }
  Index prev = 0;
  for (size_t l = 0; l < s.levels.size(); l++) {
    auto const &lv = s.levels[l];
    std::string const name = "level" + std::to_string(l + 1);
    if (lv.epochs < 0 || lv.lr_net < 0 || lv.lr_latent < 0) {
      throw ConfigError(name + ": epochs and learning rates must be non-negative");
    }
    detail::level_mode(lv, s.switch_fraction, 0);
    Index const n = resolve_frame_count(lv.frames, c.phantom.frames);
    if (n < prev) {
      throw ConfigError(name + ": frame counts must be non-decreasing");
    }
    prev = n;
  }
}

/// Parses configuration text on top of the defaults.
inline RunConfig parse_config(std::string_view text)
{
  RunConfig cfg;
  auto keys = detail::config_keys(cfg);
  std::vector<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  Index line = 0;
  while (std::getline(in, raw)) {
    line++;
    auto const hash = raw.find('#');
    std::string const body = detail::trim(std::string_view(raw).substr(0, hash));
    if (body.empty()) {
      continue;
    }
    auto const eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("expected 'key = value'", line);
    }
    std::string const key = detail::trim(std::string_view(body).substr(0, eq));
    std::string const value = detail::trim(std::string_view(body).substr(eq + 1));
    auto it = std::find_if(keys.begin(), keys.end(), [&](auto const &k) { return k.name == key; });
    if (it == keys.end()) {
      throw ConfigError("unknown key '" + key + "'", line);
    }
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      throw ConfigError("duplicate key '" + key + "'", line);
    }
    seen.push_back(key);
    std::visit(
      [&](auto *slot) {
        using V = std::remove_pointer_t<decltype(slot)>;
        if constexpr (std::is_same_v<V, std::string>) {
          *slot = value;
        } else {
          if (value.empty()) {
            throw ConfigError("missing value for " + key, line);
          }
          *slot = detail::parse_number<V>(value, key, line);
        }
      },
      it->slot);
  }
  cfg.apply_seed(cfg.seed);
  try {
    validate(cfg);
  } catch (ConfigError const &e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

inline RunConfig load_config(std::string const &path)
{
  std::ifstream f(path);
  if (!f) {
    throw ConfigError("cannot read config file '" + path + "'");
  }
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

/// Canonical text: every key in a fixed order, doubles printed round-trippably.
inline std::string to_text(RunConfig const &c)
{
  RunConfig copy = c;
  std::string out;
  for (auto const &k : detail::config_keys(copy)) {
    std::string v = std::visit(
      [](auto *slot) -> std::string {
        using V = std::remove_pointer_t<decltype(slot)>;
        if constexpr (std::is_same_v<V, std::string>) {
          return *slot;
        } else if constexpr (std::is_same_v<V, double>) {
          return detail::format_double(*slot);
        } else {
          return std::to_string(*slot);
        }
      },
      k.slot);
    out += k.name + " = " + v + "\n";
  }
  return out;
}

} // namespace gstm
