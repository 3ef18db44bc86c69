#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "aia/attack.hpp"
#include "aia/error.hpp"

namespace aia {

double attack_pair_loss(const AttackModel& model, const Tensor& activation, std::span<const TokenId> labels) {
  NoGradScope no_grad;
  return softmax_cross_entropy(forward_attack(model, activation), labels).item();
}

namespace {

double mean_loss(const AttackModel& model, const ShadowDataset& ds, const std::vector<std::size_t>& ids) {
  if (ids.empty()) return NAN;
  double total = 0.0;
  for (std::size_t i : ids) total += attack_pair_loss(model, ds.pairs[i].activation, ds.pairs[i].labels);
  return total / static_cast<double>(ids.size());
}

}  // namespace

AttackTrainingResult train_attack_model(const ShadowDataset& dataset, const AttackModelConfig& config,
                                        const AttackTrainOptions& options) {
  if (dataset.pairs.empty()) throw ContractError("train_attack_model: empty shadow dataset");
  for (const auto& p : dataset.pairs) {
    if (p.activation.ndim() != 2 || p.activation.dim(1) != config.d_model) {
      throw ShapeError("train_attack_model: activation " + shape_to_string(p.activation.shape()) +
                       " does not match attack width " + std::to_string(config.d_model));
    }
  }
  if (options.holdout_fraction < 0.0 || options.holdout_fraction >= 1.0) {
    throw ContractError("train_attack_model: holdout fraction must lie in [0, 1)");
  }

  AttackTrainingResult r;
  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(dataset.pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_held = static_cast<std::size_t>(std::llround(options.holdout_fraction * static_cast<double>(order.size())));
  n_held = std::min(n_held, order.size() - 1);
  r.heldout_pairs.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_held));
  r.train_pairs.assign(order.begin() + static_cast<std::ptrdiff_t>(n_held), order.end());
  std::sort(r.heldout_pairs.begin(), r.heldout_pairs.end());
  std::sort(r.train_pairs.begin(), r.train_pairs.end());

  AttackModel model = init_attack_model(config, options.seed);
  auto params = model.parameters();
  AdamWOptions opt;
  opt.learning_rate = options.learning_rate;
  opt.weight_decay = options.weight_decay;
  auto state = make_optimizer_state(params, opt);

  auto monitor = [&](double train, double held) { return r.heldout_pairs.empty() ? train : held; };
  r.train_loss.push_back(mean_loss(model, dataset, r.train_pairs));
  r.heldout_loss.push_back(mean_loss(model, dataset, r.heldout_pairs));
  if (options.on_epoch) options.on_epoch(0, r.train_loss[0], r.heldout_loss[0]);
  double best = monitor(r.train_loss[0], r.heldout_loss[0]);
  AttackModel best_model = model.clone();
  std::size_t since_best = 0;

  const std::size_t batch = options.batch_size == 0 ? r.train_pairs.size() : options.batch_size;
  std::vector<std::size_t> train_order = r.train_pairs;
  for (std::size_t epoch = 1; epoch <= options.max_epochs; ++epoch) {
    if (options.batch_size != 0) std::shuffle(train_order.begin(), train_order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train_order.size(); start += batch) {
      const std::size_t end = std::min(train_order.size(), start + batch);
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const auto& pair = dataset.pairs[train_order[k]];
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = scale(softmax_cross_entropy(forward_attack(model, pair.activation), pair.labels), inv);
        epoch_loss += loss.item() / inv;
        tape.backward(loss);
      }
      adamw_step(params, state);
      zero_grads(params);
    }
    r.train_loss.push_back(epoch_loss / static_cast<double>(train_order.size()));
    r.heldout_loss.push_back(mean_loss(model, dataset, r.heldout_pairs));
    if (options.on_epoch) options.on_epoch(epoch, r.train_loss.back(), r.heldout_loss.back());
    const double m = monitor(r.train_loss.back(), r.heldout_loss.back());
    if (m < best) {
      best = m;
      r.best_epoch = epoch;
      best_model = model.clone();
      since_best = 0;
    } else if (options.patience != 0 && ++since_best >= options.patience) {
      break;
    }
  }
  r.model = std::move(best_model);
  return r;
}

std::string reconstruct_one(const AttackModel& model, const Tensor& activation, const Vocab& vocab) {
  return vocab.decode(decode_greedy(model, activation, std::max<std::size_t>(1, activation.rows())));
}

std::vector<std::string> reconstruct(const AttackModel& model, std::span<const ActivationRecord> records,
                                     const Vocab& vocab) {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(reconstruct_one(model, r.tensor, vocab));
  return out;
}

std::size_t record_window(const ActivationRecord& record, std::span<const StepPlan> schedule) {
  if (record.iteration >= schedule.size() || record.microbatch >= schedule[record.iteration].windows.size()) {
    throw IndexError("activation record (" + std::to_string(record.iteration) + ", " +
                     std::to_string(record.microbatch) + ") is not in the schedule");
  }
  return schedule[record.iteration].windows[record.microbatch];
}

void write_reconstructions(const std::filesystem::path& path, std::span<const ReconstructionLine> lines) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write reconstructions to " + path.string());
  for (const auto& l : lines) {
    os << nlohmann::json{{"record_id", l.record_id}, {"iteration", l.iteration}, {"text", l.text}}.dump() << '\n';
  }
}

std::vector<ReconstructionLine> read_reconstructions(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read reconstructions from " + path.string());
  std::vector<ReconstructionLine> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    out.push_back({j.at("record_id").get<std::size_t>(), j.at("iteration").get<std::uint64_t>(),
                   j.at("text").get<std::string>()});
  }
  return out;
}

}  // namespace aia
