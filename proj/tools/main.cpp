// Command-line entry point: generate | run | score | sweep-nf.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tsuae/experiment.hpp"

namespace {

using tsuae::cli::ExperimentConfig;

ExperimentConfig resolve_config(const std::string& path, const std::optional<std::uint64_t>& seed)
{
  ExperimentConfig c = path.empty() ? tsuae::cli::default_config() : tsuae::cli::load_config(path);
  if (seed) {
    c.seed = *seed;
    c.settings.model.seed = *seed;
    for (auto& [k, m] : c.model_overrides)
      m.seed = *seed;
  }
  c.validate();
  return c;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{ "Teacher-student uncertainty autoencoder experiments" };
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config (INI); built-in defaults if omitted")
      ->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "overrides the config seed");
    cmd->add_option("--out", out_dir, "output directory")->capture_default_str();
  };

  auto* generate = app.add_subcommand("generate", "write benchmark CSVs from the generator spec");
  common(generate);
  auto* run = app.add_subcommand("run", "full experiment: fit, threshold, evaluate, write outputs");
  common(run);
  auto* sweep = app.add_subcommand("sweep-nf", "negative-feedback rate sweep");
  common(sweep);

  auto* score = app.add_subcommand("score", "score a CSV with a saved model");
  std::string model_path, input_path, fault_id;
  std::optional<tsuae::numcore::Index> fault_start;
  score->add_option("--model", model_path, "saved model file")->required();
  score->add_option("--input", input_path, "CSV to score")->required();
  score->add_option("--fault-start", fault_start, "first faulty sample (1-based); writes metrics");
  score->add_option("--fault-id", fault_id, "label used in file names and metrics");
  score->add_option("--out", out_dir, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (generate->parsed()) {
      for (const auto& p : tsuae::cli::generate_files(resolve_config(config_path, seed), out_dir))
        std::cout << p.string() << '\n';
    } else if (run->parsed()) {
      const auto m = tsuae::cli::run_experiment(resolve_config(config_path, seed), out_dir);
      std::cout << "run complete, input hash " << m.input_hash << ", outputs in " << out_dir << '\n';
    } else if (sweep->parsed()) {
      std::cout << tsuae::cli::sweep_experiment(resolve_config(config_path, seed), out_dir).string()
                << '\n';
    } else if (score->parsed()) {
      for (const auto& p :
           tsuae::cli::score_file(model_path, input_path, out_dir, fault_start, fault_id))
        std::cout << p.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return tsuae::cli::exit_code_for(e);
  }
  return 0;
}
