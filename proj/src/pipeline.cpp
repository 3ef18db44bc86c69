#include "aia/pipeline.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <exception>
#include <mutex>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "aia/error.hpp"
#include "aia/tensor_io.hpp"

namespace aia {

std::vector<StageSpec> partition_model(const ModelConfig& config, std::size_t n_stages) {
  if (n_stages < 1) throw ContractError("partition_model: need at least one stage");
  if (n_stages > config.n_layers) {
    throw ContractError("partition_model: " + std::to_string(n_stages) + " stages for " +
                        std::to_string(config.n_layers) + " layers");
  }
  const std::size_t base = config.n_layers / n_stages, extra = config.n_layers % n_stages;
  std::vector<StageSpec> out;
  std::size_t next = 1;
  for (std::size_t i = 0; i < n_stages; ++i) {
    StageSpec s;
    s.stage_index = i + 1;
    s.layer_lo = next;
    s.layer_hi = next + base + (i < extra ? 1 : 0) - 1;
    s.holds_embedding = i == 0;
    s.holds_lm_head = i + 1 == n_stages;
    next = s.layer_hi + 1;
    out.push_back(s);
  }
  return out;
}

std::size_t attacker_layer_cut(const ModelConfig& config, std::size_t n_stages, std::size_t attacker_stage) {
  if (attacker_stage < 2 || attacker_stage > n_stages) {
    throw ContractError("attacker stage " + std::to_string(attacker_stage) + " outside [2, " +
                        std::to_string(n_stages) + "]");
  }
  return partition_model(config, n_stages)[attacker_stage - 2].layer_hi;
}

void PipelineConfig::validate(const ModelConfig& model) const {
  if (n_stages < 1 || n_stages > model.n_layers) {
    throw ContractError("pipeline: stage count " + std::to_string(n_stages) + " invalid for " +
                        std::to_string(model.n_layers) + " layers");
  }
  if (n_stages >= 2 && (attacker_stage < 2 || attacker_stage > n_stages)) {
    throw ContractError("pipeline: attacker stage must lie in [2, K]");
  }
  if (microbatches < 1) throw ContractError("pipeline: microbatches must be positive");
  if (fault_stage > n_stages) throw ContractError("pipeline: fault stage out of range");
}

TapResult tap_activations(std::size_t stage, std::size_t attacker_stage, Message message) {
  TapResult r;
  if (stage == attacker_stage && message.kind == MessageKind::Forward && message.payload.defined()) {
    ActivationRecord rec;
    rec.iteration = message.iteration;
    rec.microbatch = message.microbatch;
    rec.tensor = message.payload.clone();
    rec.seq_len = message.payload.rows();
    r.record = std::move(rec);
  }
  r.forwarded = std::move(message);
  return r;
}

ActivationTap::ActivationTap(std::optional<std::filesystem::path> dump_path, bool keep_in_memory)
    : dump_path_(std::move(dump_path)), keep_in_memory_(keep_in_memory) {
  if (dump_path_) {
    dump_.open(*dump_path_, std::ios::binary | std::ios::trunc);
    if (!dump_) error_ = "cannot open activation dump " + dump_path_->string();
  }
}

void ActivationTap::store(ActivationRecord record) {
  ++count_;
  if (dump_path_ && error_.empty()) {
    try {
      write_activation_record(dump_, record);
      if (!dump_) error_ = "write to " + dump_path_->string() + " failed";
    } catch (const std::exception& e) {
      error_ = e.what();
    }
  }
  if (keep_in_memory_) records_.push_back(std::move(record));
}

void ActivationTap::finish() {
  if (dump_.is_open()) {
    dump_.flush();
    if (!dump_ && error_.empty()) error_ = "flush of " + dump_path_->string() + " failed";
    dump_.close();
  }
  if (!error_.empty()) throw IoError("activation tap: " + error_);
}

void write_activation_record(std::ostream& os, const ActivationRecord& r) {
  write_u64(os, r.iteration);
  write_u32(os, r.microbatch);
  write_u32(os, static_cast<std::uint32_t>(r.seq_len));
  write_tensor(os, r.tensor);
}

std::vector<ActivationRecord> read_activation_dump(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open activation dump " + path.string());
  std::vector<ActivationRecord> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    ActivationRecord r;
    r.iteration = read_u64(is);
    r.microbatch = read_u32(is);
    r.seq_len = read_u32(is);
    r.tensor = read_tensor(is);
    if (r.tensor.ndim() != 2 || r.tensor.rows() != r.seq_len) throw IoError("activation dump record is inconsistent");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<StepPlan> make_schedule(std::size_t n_windows, const PipelineConfig& config, std::size_t epochs) {
  if (config.microbatches < 1) throw ContractError("schedule: microbatches must be positive");
  std::vector<StepPlan> out;
  if (n_windows == 0) return out;
  std::mt19937_64 rng(config.shuffle_seed);
  std::vector<std::size_t> order(n_windows);
  for (std::size_t e = 0; e < epochs; ++e) {
    for (std::size_t i = 0; i < n_windows; ++i) order[i] = i;
    if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < n_windows; i += config.microbatches) {
      StepPlan p;
      p.epoch = e;
      p.windows.assign(order.begin() + static_cast<std::ptrdiff_t>(i),
                       order.begin() + static_cast<std::ptrdiff_t>(std::min(n_windows, i + config.microbatches)));
      out.push_back(std::move(p));
      if (config.max_steps != 0 && out.size() == config.max_steps) return out;
    }
  }
  return out;
}

void write_training_log(const std::filesystem::path& path, const std::vector<LogEntry>& log) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write training log " + path.string());
  for (const auto& e : log) os << nlohmann::json{{"step", e.step}, {"loss", e.loss}, {"epoch", e.epoch}}.dump() << '\n';
}

namespace {

struct Aborted {};

// Single-producer single-consumer ordered queue.
class Channel {
 public:
  explicit Channel(bool blocking) : blocking_(blocking) {}

  void push(Message m) {
    std::lock_guard lock(mu_);
    if (aborted_) throw Aborted{};
    if (closed_by_) return;
    queue_.push_back(std::move(m));
    cv_.notify_one();
  }

  void close_early(std::size_t stage) {
    std::lock_guard lock(mu_);
    if (!closed_by_) closed_by_ = stage;
    cv_.notify_all();
  }

  void abort() {
    std::lock_guard lock(mu_);
    aborted_ = true;
    cv_.notify_all();
  }

  Message pop() {
    std::unique_lock lock(mu_);
    if (blocking_) cv_.wait(lock, [&] { return !queue_.empty() || closed_by_ || aborted_; });
    if (aborted_) throw Aborted{};
    if (!queue_.empty()) {
      Message m = std::move(queue_.front());
      queue_.pop_front();
      return m;
    }
    if (closed_by_) throw PipelineFault(static_cast<int>(closed_by_), "channel closed before the step completed");
    throw std::logic_error("round-robin executor serviced a stage with no pending message");
  }

 private:
  bool blocking_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Message> queue_;
  std::size_t closed_by_ = 0;
  bool aborted_ = false;
};

class Stage {
 public:
  Stage(StageSpec spec, const PipelineConfig& pc, const TransformerModel& model, ActivationTap* tap)
      : spec_(spec), pc_(pc), config_(model.config()), tap_(tap) {
    if (spec_.holds_embedding) {
      embedding_.tokens = model.embedding().tokens.clone(true);
      if (model.embedding().positions.defined()) embedding_.positions = model.embedding().positions.clone(true);
    }
    for (std::size_t l = spec_.layer_lo; l <= spec_.layer_hi; ++l) blocks_.push_back(model.blocks()[l - 1].clone());
    if (spec_.holds_lm_head) {
      const auto& h = model.head();
      if (h.ln_g.defined()) head_.ln_g = h.ln_g.clone(true);
      if (h.ln_b.defined()) head_.ln_b = h.ln_b.clone(true);
      head_.weight = h.weight.clone(true);
    }
    std::vector<std::pair<std::string, Tensor>> named;
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].append_named("", named);
    if (embedding_.tokens.defined()) params_.push_back(embedding_.tokens);
    if (embedding_.positions.defined()) params_.push_back(embedding_.positions);
    for (auto& [_, t] : named) params_.push_back(t);
    for (const Tensor* t : {&head_.ln_g, &head_.ln_b, &head_.weight}) {
      if (t->defined()) params_.push_back(*t);
    }
    state_ = make_optimizer_state(params_, pc_.optimizer);
  }

  void connect(Channel* in_fwd, Channel* out_fwd, Channel* in_bwd, Channel* out_bwd) {
    in_fwd_ = in_fwd;
    out_fwd_ = out_fwd;
    in_bwd_ = in_bwd;
    out_bwd_ = out_bwd;
  }

  bool failed() const noexcept { return failed_; }
  std::size_t index() const noexcept { return spec_.stage_index; }

  void forward_phase(std::uint64_t step, const StepPlan& plan, std::span<const Window> windows) {
    if (failed_) return;
    if (pc_.fault_stage == spec_.stage_index) {
      failed_ = true;
      if (out_fwd_) out_fwd_->close_early(spec_.stage_index);
      if (out_bwd_) out_bwd_->close_early(spec_.stage_index);
      return;
    }
    const std::size_t mb = plan.windows.size();
    const double inv = 1.0 / static_cast<double>(mb);
    tapes_.clear();
    tapes_.resize(mb);
    inputs_.assign(mb, Tensor());
    outputs_.assign(mb, Tensor());
    losses_.assign(mb, Tensor());
    step_loss_ = 0.0;
    for (std::size_t m = 0; m < mb; ++m) {
      const Window& w = windows[plan.windows[m]];
      TapeScope scope(tapes_[m]);
      Tensor x;
      if (spec_.holds_embedding) {
        x = embed_forward(config_, embedding_, w.input);
      } else {
        Message msg = in_fwd_->pop();
        expect(msg, MessageKind::Forward, step, m);
        if (tap_) {
          auto r = tap_activations(spec_.stage_index, pc_.attacker_stage, std::move(msg));
          if (r.record) tap_->store(std::move(*r.record));
          msg = std::move(r.forwarded);
        }
        Tensor in = msg.payload;
        in.set_requires_grad(true);
        inputs_[m] = in;
        x = in;
      }
      for (const auto& b : blocks_) x = block_forward(config_, b, x);
      if (spec_.holds_lm_head) {
        losses_[m] = scale(softmax_cross_entropy(head_forward(config_, head_, x), w.target), inv);
        step_loss_ += losses_[m].item();
      } else {
        outputs_[m] = x;
        out_fwd_->push(Message{MessageKind::Forward, step, static_cast<std::uint32_t>(m), x.clone()});
      }
    }
  }

  void backward_phase(std::uint64_t step) {
    if (failed_) return;
    for (std::size_t m = 0; m < tapes_.size(); ++m) {
      if (spec_.holds_lm_head) {
        tapes_[m].backward(losses_[m]);
      } else {
        Message msg = in_bwd_->pop();
        expect(msg, MessageKind::Backward, step, m);
        if (msg.payload.shape() != outputs_[m].shape()) {
          throw PipelineFault(static_cast<int>(spec_.stage_index), "backward payload shape mismatch");
        }
        tapes_[m].backward_from(outputs_[m], msg.payload.data());
      }
      if (!spec_.holds_embedding) {
        Tensor in = inputs_[m];
        out_bwd_->push(Message{MessageKind::Backward, step, static_cast<std::uint32_t>(m),
                               Tensor::from(in.shape(), std::span<const double>(in.mutable_grad()))});
      }
    }
    tapes_.clear();
    inputs_.clear();
    outputs_.clear();
    losses_.clear();
  }

  void update() {
    if (failed_) return;
    adamw_step(params_, state_);
    zero_grads(params_);
  }

  double step_loss() const noexcept { return step_loss_; }
  const EmbeddingParams& embedding() const noexcept { return embedding_; }
  const std::vector<BlockParams>& blocks() const noexcept { return blocks_; }
  const HeadParams& head() const noexcept { return head_; }

 private:
  void expect(const Message& msg, MessageKind kind, std::uint64_t step, std::size_t m) const {
    if (msg.kind != kind || msg.iteration != step || msg.microbatch != m) {
      throw PipelineFault(static_cast<int>(spec_.stage_index), "out-of-order message");
    }
  }

  StageSpec spec_;
  const PipelineConfig& pc_;
  ModelConfig config_;
  ActivationTap* tap_;
  EmbeddingParams embedding_;
  std::vector<BlockParams> blocks_;
  HeadParams head_;
  std::vector<Tensor> params_;
  OptimizerState state_;
  Channel *in_fwd_ = nullptr, *out_fwd_ = nullptr, *in_bwd_ = nullptr, *out_bwd_ = nullptr;
  std::vector<Tape> tapes_;
  std::vector<Tensor> inputs_, outputs_, losses_;
  double step_loss_ = 0.0;
  bool failed_ = false;
};

}  // namespace

TrainingResult run_training(const PipelineConfig& config, const TransformerModel& model,
                            std::span<const Window> windows, std::size_t epochs, ActivationTap* tap) {
  config.validate(model.config());
  const auto specs = partition_model(model.config(), config.n_stages);
  const std::size_t k = specs.size();
  const bool threaded = !config.deterministic_mode && k > 1;

  std::vector<std::unique_ptr<Channel>> fwd, bwd;  // fwd[i]: stage i+1 -> i+2
  for (std::size_t i = 0; i + 1 < k; ++i) {
    fwd.push_back(std::make_unique<Channel>(threaded));
    bwd.push_back(std::make_unique<Channel>(threaded));
  }
  std::vector<std::unique_ptr<Stage>> stages;
  for (std::size_t i = 0; i < k; ++i) {
    stages.push_back(std::make_unique<Stage>(specs[i], config, model, i + 1 == config.attacker_stage ? tap : nullptr));
    stages[i]->connect(i > 0 ? fwd[i - 1].get() : nullptr, i + 1 < k ? fwd[i].get() : nullptr,
                       i + 1 < k ? bwd[i].get() : nullptr, i > 0 ? bwd[i - 1].get() : nullptr);
  }

  TrainingResult result;
  result.schedule = make_schedule(windows.size(), config, epochs);
  const auto& schedule = result.schedule;

  if (!threaded) {
    for (std::size_t t = 0; t < schedule.size(); ++t) {
      for (auto& s : stages) s->forward_phase(t, schedule[t], windows);
      for (auto it = stages.rbegin(); it != stages.rend(); ++it) (*it)->backward_phase(t);
      for (auto& s : stages) s->update();
      result.log.push_back({t, stages.back()->step_loss(), schedule[t].epoch});
    }
  } else {
    std::vector<double> losses(schedule.size(), 0.0);
    std::mutex err_mu;
    std::exception_ptr fault, other;
    auto abort_all = [&] {
      for (auto& c : fwd) c->abort();
      for (auto& c : bwd) c->abort();
    };
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < k; ++i) {
      workers.emplace_back([&, i] {
        Stage& s = *stages[i];
        try {
          for (std::size_t t = 0; t < schedule.size(); ++t) {
            s.forward_phase(t, schedule[t], windows);
            s.backward_phase(t);
            s.update();
            if (s.failed()) return;
            if (i + 1 == k) losses[t] = s.step_loss();
          }
        } catch (const Aborted&) {
        } catch (const PipelineFault&) {
          std::lock_guard lock(err_mu);
          if (!fault) fault = std::current_exception();
          abort_all();
        } catch (...) {
          std::lock_guard lock(err_mu);
          if (!other) other = std::current_exception();
          abort_all();
        }
      });
    }
    for (auto& w : workers) w.join();
    if (fault) std::rethrow_exception(fault);
    if (other) std::rethrow_exception(other);
    for (std::size_t t = 0; t < schedule.size(); ++t) result.log.push_back({t, losses[t], schedule[t].epoch});
  }

  std::vector<BlockParams> blocks;
  for (auto& s : stages) {
    for (const auto& b : s->blocks()) blocks.push_back(b);
  }
  result.model = TransformerModel(model.config(), stages.front()->embedding(), std::move(blocks), stages.back()->head());
  return result;
}

TrainingResult train_monolithic(const PipelineConfig& config, const TransformerModel& model,
                                std::span<const Window> windows, std::size_t epochs) {
  TrainingResult result;
  result.model = model.clone();
  result.model.set_trainable(true);
  result.schedule = make_schedule(windows.size(), config, epochs);
  auto state = make_optimizer_state(result.model.parameters(), config.optimizer);
  std::vector<Window> batch;
  for (std::size_t t = 0; t < result.schedule.size(); ++t) {
    batch.clear();
    for (std::size_t w : result.schedule[t].windows) batch.push_back(windows[w]);
    const double loss = finetune_step(result.model, batch, state);
    result.log.push_back({t, loss, result.schedule[t].epoch});
  }
  return result;
}

}  // namespace aia
