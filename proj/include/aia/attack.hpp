#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aia/corpus.hpp"
#include "aia/model.hpp"
#include "aia/pipeline.hpp"
#include "aia/vocab.hpp"

namespace aia {

// Row p of `activation` is the shadow model's state after reading labels[p].
struct ShadowPair {
  Tensor activation;
  Tokens labels;
  std::size_t document = 0;
  std::size_t window = 0;
};

struct ModelFingerprint {
  nlohmann::json config;
  std::uint64_t parameter_hash = 0;
  bool operator==(const ModelFingerprint&) const = default;
};

ModelFingerprint fingerprint(const TransformerModel& model);

struct ShadowDataset {
  std::vector<ShadowPair> pairs;
  std::size_t layer_cut = 0;
  ModelFingerprint shadow;
};

// One pair per window (stride == length) of every public document.
// `window_length` 0 means the shadow model's max_seq_len.
ShadowDataset build_shadow_dataset(const TransformerModel& shadow_model, const Corpus& public_corpus,
                                   const Vocab& vocab, std::size_t layer_cut, std::size_t window_length = 0);

// index.json plus one AIAT blob per pair.
void save_shadow_dataset(const std::filesystem::path& dir, const ShadowDataset& ds);
ShadowDataset load_shadow_dataset(const std::filesystem::path& dir);

struct AttackTrainOptions {
  std::size_t max_epochs = 300;
  double learning_rate = 5e-4;
  double weight_decay = 0.0;
  std::size_t batch_size = 0;  // 0: full batch, one update per epoch
  double holdout_fraction = 0.1;
  std::size_t patience = 20;  // epochs without held-out improvement; 0 disables early stop
  std::uint64_t seed = 0;
  std::function<void(std::size_t epoch, double train_loss, double heldout_loss)> on_epoch;
};

struct AttackTrainingResult {
  AttackModel model;  // parameters from the epoch with the lowest held-out loss
  std::vector<double> train_loss;    // entry e: mean loss before update e (entry 0 at init)
  std::vector<double> heldout_loss;  // same indexing
  std::size_t best_epoch = 0;
  std::vector<std::size_t> train_pairs;
  std::vector<std::size_t> heldout_pairs;
};

// Teacher-forced training: logits row p predicts labels[p] given activation
// rows 0..p.
AttackTrainingResult train_attack_model(const ShadowDataset& dataset, const AttackModelConfig& config,
                                        const AttackTrainOptions& options);

double attack_pair_loss(const AttackModel& model, const Tensor& activation, std::span<const TokenId> labels);

std::vector<std::string> reconstruct(const AttackModel& model, std::span<const ActivationRecord> records,
                                     const Vocab& vocab);
std::string reconstruct_one(const AttackModel& model, const Tensor& activation, const Vocab& vocab);

// Maps a tapped record back to the window it carried, via the schedule.
std::size_t record_window(const ActivationRecord& record, std::span<const StepPlan> schedule);

struct ReconstructionLine {
  std::size_t record_id = 0;
  std::uint64_t iteration = 0;
  std::string text;
};
void write_reconstructions(const std::filesystem::path& path, std::span<const ReconstructionLine> lines);
std::vector<ReconstructionLine> read_reconstructions(const std::filesystem::path& path);

}  // namespace aia
