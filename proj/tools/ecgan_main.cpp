#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "ecgan/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"EC-GAN desk-scale lab"};
  app.require_subcommand(1);

  std::string config, axis, ckpt, out_path, data;
  std::optional<std::uint64_t> seed;
  std::optional<int> cls;
  int n = 16;

  auto* train = app.add_subcommand("train", "Train every (percent, seed) cell of a config");
  train->add_option("config", config, "Experiment JSON")->required();
  train->add_option("--seed", seed, "Seed (overrides ECGAN_SEED and the config)");

  auto* sweep = app.add_subcommand("sweep", "Sweep one axis across variants and seeds");
  sweep->add_option("config", config, "Experiment JSON")->required();
  sweep->add_option("--axis", axis, "percent|lambda|strategy")
      ->required()
      ->check(CLI::IsMember({"percent", "lambda", "strategy"}));
  sweep->add_option("--seed", seed, "Seed (overrides ECGAN_SEED and the config)");

  auto* gen = app.add_subcommand("generate", "Write a PGM/PPM grid of generator samples");
  gen->add_option("checkpoint", ckpt, "Generator checkpoint")->required();
  gen->add_option("--n", n, "Number of images")->required()->check(CLI::PositiveNumber);
  gen->add_option("--class", cls, "Class for a conditional generator");
  gen->add_option("--out", out_path, "Output .pgm/.ppm path")->required();
  gen->add_option("--seed", seed, "Latent seed (overrides ECGAN_SEED)");

  auto* eval = app.add_subcommand("eval", "Print the accuracy of a classifier checkpoint");
  eval->add_option("checkpoint", ckpt, "Classifier checkpoint")->required();
  eval->add_option("--data", data, "synth:k=v,... | idx:images=P,labels=P | dir:root=P,csv=P")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n";
    return ecgan::kExitUsage;
  }

  if (*train) return ecgan::cmd_train(config, seed, std::cout, std::cerr);
  if (*sweep) return ecgan::cmd_sweep(config, axis, seed, std::cout, std::cerr);
  if (*gen) return ecgan::cmd_generate(ckpt, n, cls, out_path, seed, std::cout, std::cerr);
  if (*eval) return ecgan::cmd_eval(ckpt, data, std::cout, std::cerr);
  return ecgan::kExitUsage;
}
