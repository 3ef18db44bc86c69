#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aia/attack.hpp"
#include "aia/baselines.hpp"
#include "aia/corpus.hpp"
#include "aia/metrics.hpp"
#include "aia/model.hpp"
#include "aia/pii.hpp"
#include "aia/pipeline.hpp"
#include "aia/vocab.hpp"

namespace aia {

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  bool deterministic = false;

  struct Corpora {
    std::string public_path = "data/public.txt";
    std::string victim_path = "data/victim.txt";
    std::size_t shadow_docs = 800;    // public documents behind the shadow dataset
    std::size_t heldout_docs = 30;    // public documents for held-out shadow evaluation
    std::size_t victim_docs = 60;     // victim fine-tuning documents
    std::size_t probe_docs = 20;      // victim documents outside fine-tuning, for the similarity study
    std::size_t public_pii_records = 300;  // synthetic records, independent of the victim's, added to the public corpus
  } corpora;

  ModelConfig model{12, 32, 4, 128, 0, 64, Architecture::B};

  struct Pipeline {
    std::size_t stages = 6;
    std::size_t attacker_stage = 3;
    std::size_t microbatches = 24;
  } pipeline;

  struct Pretrain {
    std::size_t steps = 2000;
    std::size_t batch = 8;
    double learning_rate = 3e-3;
  } pretrain;

  struct Finetune {
    std::size_t epochs = 5;
    double learning_rate = 3e-5;
  } finetune;

  struct Attack {
    std::size_t n_layers = 12;
    std::optional<Architecture> arch;  // victim's architecture when unset
    std::size_t max_epochs = 15;
    double learning_rate = 2e-3;
    std::size_t batch_size = 16;
    double holdout_fraction = 0.1;
    std::size_t patience = 10;
  } attack;

  struct Pii {
    std::size_t records = 200;
    std::uint64_t seed = 11;
    std::vector<std::string> targets{"email", "phone"};
    std::size_t spt_pairs = 64;
    std::size_t spt_epochs = 5;
    double spt_learning_rate = 1e-2;
    std::size_t max_new_tokens = 40;
    std::string query_template = kDefaultQueryTemplate;
  } pii;

  struct Ablation {
    std::vector<std::size_t> attacker_stages{2, 3, 4, 5, 6};
    std::vector<std::size_t> model_sizes{16, 32, 48};
    std::vector<std::string> architectures{"arch-A", "arch-B", "arch-C"};
    std::size_t attack_layers = 6;
  } ablation;

  std::vector<std::string> metrics{"ppl", "rouge", "bleu", "cos", "asr"};

  // Unknown keys anywhere are ConfigErrors; omitted keys keep their defaults.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  std::string hash() const;
  // Checks ranges and that the corpus files exist and differ.
  void validate() const;

  Architecture attack_arch() const { return attack.arch.value_or(model.arch); }
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Outcome of pipeline fine-tuning with the attacker tapping its inbound edge.
struct VictimRun {
  TransformerModel model;
  std::vector<Window> windows;
  std::vector<StepPlan> schedule;
  std::vector<ActivationRecord> records;
  std::vector<LogEntry> log;
  std::size_t attacker_stage = 0;
  std::size_t layer_cut = 0;
  std::filesystem::path dir;
};

struct Evaluation {
  MetricReport report;
  double control_rouge1 = 0.0;  // candidates scored against mismatched references
  std::vector<std::string> candidates;
  std::vector<std::string> references;
};

// Artifact store for one configuration. Each artifact is written under the
// output directory together with a key derived from everything it depends
// on, and reused when the key matches.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig config);

  const ExperimentConfig& config() const noexcept { return config_; }
  const Vocab& vocab() const noexcept { return vocab_; }
  const Corpus& public_corpus() const noexcept { return public_; }
  const Corpus& victim_corpus() const noexcept { return victim_; }
  const std::filesystem::path& out() const noexcept { return out_; }

  // Public documents split into shadow and held-out parts, victim documents
  // into fine-tuning and probe parts.
  Corpus shadow_corpus() const;
  Corpus heldout_corpus() const;
  Corpus victim_train_corpus() const;
  Corpus probe_corpus() const;
  std::vector<PiiRecord> pii_records() const;
  Corpus pii_corpus() const;

  const TransformerModel& pretrained();
  nlohmann::json pretrain_report();

  // `data` is "text" or "pii".
  const VictimRun& victim_run(const std::string& data, std::size_t attacker_stage);
  const ShadowDataset& shadow(std::size_t layer_cut);
  const AttackTrainingResult& attack_model(std::size_t layer_cut, Architecture arch, std::size_t n_layers);

  // Reconstruction quality on the final epoch's tapped windows.
  Evaluation evaluate_victim(const AttackModel& model, const VictimRun& run, bool with_cos = true);
  Evaluation evaluate_heldout(const AttackModel& model, std::size_t layer_cut, bool with_cos = true);

  // Per-document reconstruction text of the final epoch, windows in order.
  std::map<std::size_t, std::string> reconstruct_documents(const AttackModel& model, const VictimRun& run);

 private:
  std::filesystem::path artifact_dir(const std::string& name, const nlohmann::json& key) const;
  std::uint64_t pretrain_key() const;

  ExperimentConfig config_;
  std::filesystem::path out_;
  Corpus public_;
  Corpus victim_;
  Vocab vocab_;
  std::vector<std::size_t> public_order_, victim_order_;
  std::optional<TransformerModel> pretrained_;
  std::map<std::string, std::unique_ptr<VictimRun>> runs_;
  std::map<std::size_t, std::unique_ptr<ShadowDataset>> shadows_;
  std::map<std::string, std::unique_ptr<AttackTrainingResult>> attacks_;
};

// CLI verbs. Each writes its artifacts and a JSON report under the output
// directory and returns that report.
nlohmann::json cmd_pretrain(Experiment& ex);
nlohmann::json cmd_similarity_study(Experiment& ex);
nlohmann::json cmd_attack(Experiment& ex);
nlohmann::json cmd_baselines(Experiment& ex, const std::vector<std::string>& targets);
nlohmann::json cmd_ablate(Experiment& ex, const std::string& axis);
nlohmann::json cmd_evaluate(Experiment& ex);

}  // namespace aia
