#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aia/corpus.hpp"
#include "aia/model.hpp"
#include "aia/optim.hpp"

namespace aia {

// Stage i (1-based) owns blocks [layer_lo, layer_hi] (1-based, inclusive).
struct StageSpec {
  std::size_t stage_index = 1;
  std::size_t layer_lo = 1;
  std::size_t layer_hi = 0;
  bool holds_embedding = false;
  bool holds_lm_head = false;

  std::size_t layer_count() const noexcept { return layer_hi + 1 - layer_lo; }
  bool operator==(const StageSpec&) const = default;
};

// Contiguous near-equal split; earlier stages take the remainder.
std::vector<StageSpec> partition_model(const ModelConfig& config, std::size_t n_stages);
inline std::vector<StageSpec> partition_model(const TransformerModel& model, std::size_t n_stages) {
  return partition_model(model.config(), n_stages);
}

// Number of blocks the attacker's inbound activation has passed through.
std::size_t attacker_layer_cut(const ModelConfig& config, std::size_t n_stages, std::size_t attacker_stage);

enum class MessageKind { Forward, Backward };

struct Message {
  MessageKind kind = MessageKind::Forward;
  std::uint64_t iteration = 0;
  std::uint32_t microbatch = 0;
  Tensor payload;
};

struct ActivationRecord {
  std::uint64_t iteration = 0;
  std::uint32_t microbatch = 0;
  Tensor tensor;
  std::size_t seq_len = 0;
};

struct PipelineConfig {
  std::size_t n_stages = 6;
  std::size_t attacker_stage = 3;
  std::size_t microbatches = 4;
  bool deterministic_mode = true;
  AdamWOptions optimizer{};
  std::uint64_t shuffle_seed = 0;
  bool shuffle = true;
  std::size_t max_steps = 0;  // 0: run every scheduled step

  // Test hook: this stage closes its outbound forward channel instead of
  // sending anything. 0 disables.
  std::size_t fault_stage = 0;

  void validate(const ModelConfig& model) const;
};

struct TapResult {
  std::optional<ActivationRecord> record;
  Message forwarded;
};

// Forward messages arriving at the attacker stage are deep-copied into a
// record; the message itself is forwarded untouched. Everything else passes
// through unrecorded.
TapResult tap_activations(std::size_t stage, std::size_t attacker_stage, Message message);

// Attacker-private storage for tapped activations. Records are kept in memory
// and/or appended to a dump file. Write failures never reach the training
// loop; finish() reports them afterwards.
class ActivationTap {
 public:
  explicit ActivationTap(std::optional<std::filesystem::path> dump_path = std::nullopt, bool keep_in_memory = true);

  void store(ActivationRecord record);
  const std::vector<ActivationRecord>& records() const noexcept { return records_; }
  std::size_t count() const noexcept { return count_; }
  // Flushes the dump and rethrows any buffered storage failure as IoError.
  void finish();

 private:
  std::optional<std::filesystem::path> dump_path_;
  bool keep_in_memory_;
  std::ofstream dump_;
  std::vector<ActivationRecord> records_;
  std::size_t count_ = 0;
  std::string error_;
};

void write_activation_record(std::ostream& os, const ActivationRecord& r);
std::vector<ActivationRecord> read_activation_dump(const std::filesystem::path& path);

// Training schedule: each step feeds `microbatches` windows (the last step of
// an epoch may be shorter), one window per microbatch.
struct StepPlan {
  std::size_t epoch = 0;
  std::vector<std::size_t> windows;
};
std::vector<StepPlan> make_schedule(std::size_t n_windows, const PipelineConfig& config, std::size_t epochs);

struct LogEntry {
  std::size_t step = 0;
  double loss = 0.0;
  std::size_t epoch = 0;
};

struct TrainingResult {
  TransformerModel model;
  std::vector<LogEntry> log;
  std::vector<StepPlan> schedule;
};

// Pipeline-parallel fine-tuning of a copy of `model`. In deterministic mode a
// single thread services the stages round-robin; otherwise each stage runs
// on its own thread.
TrainingResult run_training(const PipelineConfig& config, const TransformerModel& model,
                            std::span<const Window> windows, std::size_t epochs, ActivationTap* tap = nullptr);

// Single-process trainer over the same schedule and optimizer settings.
TrainingResult train_monolithic(const PipelineConfig& config, const TransformerModel& model,
                                std::span<const Window> windows, std::size_t epochs);

void write_training_log(const std::filesystem::path& path, const std::vector<LogEntry>& log);

}  // namespace aia
