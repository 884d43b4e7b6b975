#include "gstm/cli.hpp"

#include <CLI11.hpp>

namespace {

gstm::RunConfig
resolve_config(std::string const &path, std::optional<uint64_t> seed, std::optional<std::string> const &preset)
{
  auto cfg = path.empty() ? gstm::parse_config("") : gstm::load_config(path);
  if (seed) {
    cfg.apply_seed(*seed);
  }
  if (preset) {
    cfg.train.preset = *preset;
    gstm::validate(cfg);
  }
  return cfg;
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Dynamic MRI reconstruction with a generative manifold model"};
  app.require_subcommand(1);

  std::string config_path, dataset_path, out_path, checkpoint_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> preset;
  auto add_common = [&](CLI::App *cmd) {
    cmd->add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "master seed (overrides the config)");
    cmd->add_option("--preset", preset, "generator preset")->check(CLI::IsMember({"desk64", "paper340"}));
  };

  auto *simulate = app.add_subcommand("simulate", "simulate a phantom acquisition into a GSTM container");
  add_common(simulate);
  simulate->add_option("--out", out_path, "output dataset file")->required();

  auto *reconstruct = app.add_subcommand("reconstruct", "train the generator and latents on a dataset");
  add_common(reconstruct);
  reconstruct->add_option("--dataset", dataset_path, "GSTM dataset");
  reconstruct->add_option("--out", out_path, "output directory");

  auto *evaluate = app.add_subcommand("evaluate", "score a checkpoint against the dataset's ground truth");
  add_common(evaluate);
  evaluate->add_option("--dataset", dataset_path, "GSTM dataset with ground truth")->required();
  evaluate->add_option("--checkpoint", checkpoint_path, "GSCK checkpoint")->required();
  evaluate->add_option("--out", out_path, "report CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (CLI::ParseError const &e) {
    int const code = app.exit(e);
    return code == 0 ? 0 : gstm::cli::bad_config;
  }

  return gstm::cli::guarded([&] {
    auto const cfg = resolve_config(config_path, seed, preset);
    if (simulate->parsed()) {
      return gstm::cli::cmd_simulate(cfg, out_path);
    }
    if (reconstruct->parsed()) {
      std::string const ds = dataset_path.empty() ? cfg.dataset : dataset_path;
      std::string const out = out_path.empty() ? cfg.out : out_path;
      if (ds.empty() || out.empty()) {
        throw gstm::ConfigError("reconstruct needs a dataset and an output directory (flags or config keys)");
      }
      return gstm::cli::cmd_reconstruct(cfg, ds, out);
    }
    return gstm::cli::cmd_evaluate(dataset_path, checkpoint_path, out_path);
  });
}
