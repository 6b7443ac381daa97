#include <string>

#include <CLI11.hpp>

#include "refocus/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"targeted hindsight self-distillation on synthetic tool tasks"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path, logs_dir, kind;
  int k = 4;

  CLI::App* train = app.add_subcommand("train", "train a policy from a config");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--out", out_dir, "output directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--config", config_path, "config file")->required();
  eval->add_option("--k", k, "rollouts per task");

  CLI::App* analyze =
      app.add_subcommand("analyze", "run an analysis over a train run directory");
  analyze->add_option("--logs", logs_dir, "train run directory")->required();
  analyze->add_option("--kind", kind, "turns | placement | sources")
      ->required()
      ->check(CLI::IsMember({"turns", "placement", "sources"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? refocus::kExitOk : refocus::kExitBadInput;
  }

  if (train->parsed()) return refocus::cmd_train(config_path, out_dir);
  if (eval->parsed()) return refocus::cmd_eval(checkpoint_path, config_path, k);
  return refocus::cmd_analyze(logs_dir, kind);
}
