#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "thinkedit/thinkedit.hpp"

using namespace thinkedit;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> iters;
  std::string out_dir;
  std::string variant;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "key=value config file");
  sub->add_option("--seed", c.seed, "run seed");
  sub->add_option("--iters", c.iters, "training iterations (M)");
  sub->add_option("--out-dir", c.out_dir, std::string("output directory (default $") + kOutDirEnv + " or ./runs)");
  sub->add_option("--variant", c.variant, "comma list of gen,und,plan,reflect,ucpg,checklist or full/none");
}

// command-line values win over the config file
RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (c.seed) cfg.train.seed = *c.seed;
  if (c.iters) cfg.train.M = *c.iters;
  if (!c.variant.empty()) cfg.variant = VariantFlags::parse(c.variant);
  validate(cfg);
  return cfg;
}

std::filesystem::path out_dir(const Common& c, const char* sub) {
  if (!c.out_dir.empty()) return c.out_dir;
  return default_out_dir() / sub;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"thinkedit: joint planner/generator RL on a synthetic editing task"};
  app.require_subcommand(1);

  Common train_o, eval_o, abl_o, rv_o;
  std::string checkpoint;
  auto* train = app.add_subcommand("train", "train one variant and write metrics, plot data and checkpoints");
  add_common(train, train_o);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the held-out task set");
  add_common(eval, eval_o);
  eval->add_option("--checkpoint", checkpoint, "snapshot file")->required();
  auto* abl = app.add_subcommand("ablate", "train every ablation row for each seed");
  add_common(abl, abl_o);
  auto* rv = app.add_subcommand("reward-variance", "checklist vs interval judge variance on a fixed panel");
  add_common(rv, rv_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  return guarded([&]() -> int {
    if (*train) return cmd_train(resolve(train_o), out_dir(train_o, "train"));
    if (*eval) return cmd_eval(resolve(eval_o), checkpoint, out_dir(eval_o, "eval"));
    if (*abl) return cmd_ablate(resolve(abl_o), out_dir(abl_o, "ablate"));
    return cmd_reward_variance(resolve(rv_o), out_dir(rv_o, "reward_variance"));
  });
}
