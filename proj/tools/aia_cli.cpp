#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aia/error.hpp"
#include "aia/experiment.hpp"

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool deterministic = false;
};

aia::ExperimentConfig resolve(const Globals& g) {
  aia::ExperimentConfig c = g.config.empty() ? aia::ExperimentConfig{} : aia::load_experiment_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (!g.out.empty()) c.output_dir = g.out;
  if (g.deterministic) c.deterministic = true;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Activation inversion attack experiments on pipeline-parallel fine-tuning"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--out", g.out, "Override the output directory");
  app.add_flag("--deterministic", g.deterministic, "Single-threaded pipeline executor");

  std::vector<std::string> targets{"email", "phone"};
  std::string axis;
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain M_pre on the public corpus");
  auto* similarity = app.add_subcommand("similarity", "Layer-wise activation similarity of M_pre and M_vic");
  auto* attack = app.add_subcommand("attack", "Fine-tune the victim, train the attack model, reconstruct");
  auto* baselines = app.add_subcommand("baselines", "PII extraction: True-Prefix, SPT and AIA");
  baselines->add_option("--targets", targets, "PII types to extract")->delimiter(',');
  auto* ablate = app.add_subcommand("ablate", "Attack ablation along one axis");
  ablate->add_option("--axis", axis, "layer_index, model_size or architecture")->required();
  auto* evaluate = app.add_subcommand("evaluate", "Score stored reconstructions without training");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    aia::Experiment ex(resolve(g));
    nlohmann::json report;
    if (*pretrain) report = aia::cmd_pretrain(ex);
    if (*similarity) report = aia::cmd_similarity_study(ex);
    if (*attack) report = aia::cmd_attack(ex);
    if (*baselines) report = aia::cmd_baselines(ex, targets);
    if (*ablate) report = aia::cmd_ablate(ex, axis);
    if (*evaluate) report = aia::cmd_evaluate(ex);
    std::cout << report.dump(2) << std::endl;
    return 0;
  } catch (const aia::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const aia::PipelineFault& e) {
    std::cerr << "pipeline fault: " << e.what() << '\n';
    return 3;
  } catch (const aia::MetricError& e) {
    std::cerr << "metric error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
