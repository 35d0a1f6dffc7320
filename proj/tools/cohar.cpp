#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "cohar/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitOverwrite = 3;
constexpr int kExitDiverged = 4;
constexpr int kExitGradcheck = 5;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional-UNet dense labeling for coherent activity recognition"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, data;
  bool force = false, baseline = false;
  std::uint64_t seed = 0;
  std::size_t seeds = 5;
  std::vector<std::string> corrupt;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset (data.csv + meta.json)");
  synth->add_option("--config", config, "synth or experiment config (JSON)")->required();
  synth->add_option("--out", out, "output directory")->required();
  synth->add_flag("--force", force, "write into a non-empty output directory");

  auto* train = app.add_subcommand("train", "train a conditional chain or the independent baseline");
  train->add_option("--config", config, "experiment config (JSON)")->required();
  train->add_option("--out", out, "output directory")->required();
  train->add_flag("--baseline", baseline, "train the multi-head baseline instead of the chain");
  train->add_flag("--force", force, "write into a non-empty output directory");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--data", data, "data.csv or a directory holding it")->required();
  eval->add_option("--out", out, "output directory")->required();
  eval->add_flag("--force", force, "write into a non-empty output directory");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every backward rule");
  grad->add_option("--seed", seed, "seed for the random test tensors");
  grad->add_option("--corrupt", corrupt, "sabotage the backward rule of an op (negative control)");

  auto* compare = app.add_subcommand("compare", "baseline vs two chain orders over several seeds");
  compare->add_option("--config", config, "experiment config (JSON)")->required();
  compare->add_option("--seeds", seeds, "number of seeds")->check(CLI::PositiveNumber);
  compare->add_option("--out", out, "output directory")->required();
  compare->add_flag("--force", force, "write into a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*synth) {
      cohar::cmd_synth(config, out, force, std::cout);
    } else if (*train) {
      cohar::cmd_train(config, out, baseline, force, std::cout);
    } else if (*eval) {
      cohar::cmd_eval(checkpoint, data, out, force, std::cout);
    } else if (*grad) {
      cohar::GradCheckOptions opt;
      opt.seed = seed;
      opt.corrupt = corrupt;
      if (!cohar::cmd_gradcheck(opt, std::cout).passed()) return kExitGradcheck;
    } else if (*compare) {
      cohar::cmd_compare(config, seeds, out, force, std::cout);
    }
  } catch (const cohar::OverwriteError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOverwrite;
  } catch (const cohar::TrainingError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const cohar::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitOk;
}
