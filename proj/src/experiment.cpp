#include "aia/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <set>

#include "aia/checkpoint.hpp"
#include "aia/error.hpp"
#include "aia/similarity.hpp"

namespace aia {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; });
    if (!known) throw ConfigError("config: unknown key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" + where + "." + key + "': " + e.what());
  }
}

std::string key_hex(const json& j) { return hex64(hash_bytes(j.dump())); }

std::uint64_t corpus_hash(const Corpus& c) {
  std::uint64_t h = hash_bytes(c.name());
  for (const auto& d : c.documents()) h = hash_bytes(d, hash_bytes("\n", h));
  return h;
}

bool fresh(const std::filesystem::path& dir, const json& key) {
  std::ifstream is(dir / "key.json");
  if (!is) return false;
  try {
    return json::parse(is) == key;
  } catch (const json::exception&) {
    return false;
  }
}

void stamp(const std::filesystem::path& dir, const json& key) {
  std::ofstream os(dir / "key.json");
  os << key.dump(1) << '\n';
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

std::vector<LogEntry> read_training_log(const std::filesystem::path& path) {
  std::ifstream is(path);
  std::vector<LogEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto j = json::parse(line);
    out.push_back({j.at("step").get<std::size_t>(), j.at("loss").get<double>(), j.at("epoch").get<std::size_t>()});
  }
  return out;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Corpus pick(const Corpus& c, const std::vector<std::size_t>& order, std::size_t begin, std::size_t count,
            const std::string& name, CorpusRole role) {
  std::vector<std::string> docs;
  for (std::size_t i = begin; i < begin + count; ++i) docs.push_back(c.documents()[order[i]]);
  return Corpus(name, role, std::move(docs));
}

bool selected(const ExperimentConfig& c, const char* metric) {
  return std::find(c.metrics.begin(), c.metrics.end(), metric) != c.metrics.end();
}

json report_json(const ExperimentConfig& c, const MetricReport& r) {
  json full = r.to_json(), out = json::object();
  for (const auto& [key, metric] : std::vector<std::pair<std::string, const char*>>{
           {"PPL", "ppl"}, {"ROUGE-1", "rouge"}, {"ROUGE-2", "rouge"}, {"ROUGE-L", "rouge"}, {"BLEU-1", "bleu"},
           {"BLEU-2", "bleu"}, {"BLEU-4", "bleu"}, {"COS", "cos"}, {"ASR", "asr"}}) {
    if (selected(c, metric)) out[key] = full[key];
  }
  return out;
}

// Runs `fn`, prefixing any failure with the stage it happened in.
template <class F>
auto stage(const std::string& name, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const PipelineFault&) {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(name + ": " + e.what());
  } catch (const MetricError& e) {
    throw MetricError(name + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(name + ": " + e.what());
  }
}

void log_line(const std::string& msg) { std::clog << "[aia] " << msg << std::endl; }

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  check_keys(j, {"seed", "output_dir", "deterministic", "corpora", "model", "pipeline", "pretrain", "finetune",
                 "attack", "pii", "ablation", "metrics"},
             "");
  read(j, "seed", c.seed, "");
  read(j, "output_dir", c.output_dir, "");
  read(j, "deterministic", c.deterministic, "");
  read(j, "metrics", c.metrics, "");
  if (j.contains("corpora")) {
    const auto& s = j["corpora"];
    check_keys(s, {"public", "victim", "shadow_docs", "heldout_docs", "victim_docs", "probe_docs", "public_pii_records"},
               "corpora");
    read(s, "public", c.corpora.public_path, "corpora");
    read(s, "victim", c.corpora.victim_path, "corpora");
    read(s, "shadow_docs", c.corpora.shadow_docs, "corpora");
    read(s, "heldout_docs", c.corpora.heldout_docs, "corpora");
    read(s, "victim_docs", c.corpora.victim_docs, "corpora");
    read(s, "probe_docs", c.corpora.probe_docs, "corpora");
    read(s, "public_pii_records", c.corpora.public_pii_records, "corpora");
  }
  if (j.contains("model")) {
    const auto& s = j["model"];
    check_keys(s, {"n_layers", "d_model", "n_heads", "d_ff", "max_seq_len", "arch"}, "model");
    read(s, "n_layers", c.model.n_layers, "model");
    read(s, "d_model", c.model.d_model, "model");
    read(s, "n_heads", c.model.n_heads, "model");
    read(s, "d_ff", c.model.d_ff, "model");
    read(s, "max_seq_len", c.model.max_seq_len, "model");
    if (s.contains("arch")) c.model.arch = architecture_from_string(s["arch"].get<std::string>());
  }
  if (j.contains("pipeline")) {
    const auto& s = j["pipeline"];
    check_keys(s, {"stages", "attacker_stage", "microbatches"}, "pipeline");
    read(s, "stages", c.pipeline.stages, "pipeline");
    read(s, "attacker_stage", c.pipeline.attacker_stage, "pipeline");
    read(s, "microbatches", c.pipeline.microbatches, "pipeline");
  }
  if (j.contains("pretrain")) {
    const auto& s = j["pretrain"];
    check_keys(s, {"steps", "batch", "learning_rate"}, "pretrain");
    read(s, "steps", c.pretrain.steps, "pretrain");
    read(s, "batch", c.pretrain.batch, "pretrain");
    read(s, "learning_rate", c.pretrain.learning_rate, "pretrain");
  }
  if (j.contains("finetune")) {
    const auto& s = j["finetune"];
    check_keys(s, {"epochs", "learning_rate"}, "finetune");
    read(s, "epochs", c.finetune.epochs, "finetune");
    read(s, "learning_rate", c.finetune.learning_rate, "finetune");
  }
  if (j.contains("attack")) {
    const auto& s = j["attack"];
    check_keys(s, {"n_layers", "arch", "max_epochs", "learning_rate", "batch_size", "holdout_fraction", "patience"},
               "attack");
    read(s, "n_layers", c.attack.n_layers, "attack");
    if (s.contains("arch")) {
      const auto tag = s["arch"].get<std::string>();
      if (tag == "same") {
        c.attack.arch.reset();
      } else {
        c.attack.arch = architecture_from_string(tag);
      }
    }
    read(s, "max_epochs", c.attack.max_epochs, "attack");
    read(s, "learning_rate", c.attack.learning_rate, "attack");
    read(s, "batch_size", c.attack.batch_size, "attack");
    read(s, "holdout_fraction", c.attack.holdout_fraction, "attack");
    read(s, "patience", c.attack.patience, "attack");
  }
  if (j.contains("pii")) {
    const auto& s = j["pii"];
    check_keys(s, {"records", "seed", "targets", "spt_pairs", "spt_epochs", "spt_learning_rate", "max_new_tokens",
                   "query_template"},
               "pii");
    read(s, "records", c.pii.records, "pii");
    read(s, "seed", c.pii.seed, "pii");
    read(s, "targets", c.pii.targets, "pii");
    read(s, "spt_pairs", c.pii.spt_pairs, "pii");
    read(s, "spt_epochs", c.pii.spt_epochs, "pii");
    read(s, "spt_learning_rate", c.pii.spt_learning_rate, "pii");
    read(s, "max_new_tokens", c.pii.max_new_tokens, "pii");
    read(s, "query_template", c.pii.query_template, "pii");
  }
  if (j.contains("ablation")) {
    const auto& s = j["ablation"];
    check_keys(s, {"attacker_stages", "model_sizes", "architectures", "attack_layers"}, "ablation");
    read(s, "attacker_stages", c.ablation.attacker_stages, "ablation");
    read(s, "model_sizes", c.ablation.model_sizes, "ablation");
    read(s, "architectures", c.ablation.architectures, "ablation");
    read(s, "attack_layers", c.ablation.attack_layers, "ablation");
  }
  return c;
}

json ExperimentConfig::to_json() const {
  return json{
      {"seed", seed},
      {"output_dir", output_dir},
      {"deterministic", deterministic},
      {"corpora",
       {{"public", corpora.public_path},
        {"victim", corpora.victim_path},
        {"shadow_docs", corpora.shadow_docs},
        {"heldout_docs", corpora.heldout_docs},
        {"victim_docs", corpora.victim_docs},
        {"probe_docs", corpora.probe_docs},
        {"public_pii_records", corpora.public_pii_records}}},
      {"model",
       {{"n_layers", model.n_layers},
        {"d_model", model.d_model},
        {"n_heads", model.n_heads},
        {"d_ff", model.d_ff},
        {"max_seq_len", model.max_seq_len},
        {"arch", aia::to_string(model.arch)}}},
      {"pipeline",
       {{"stages", pipeline.stages}, {"attacker_stage", pipeline.attacker_stage}, {"microbatches", pipeline.microbatches}}},
      {"pretrain", {{"steps", pretrain.steps}, {"batch", pretrain.batch}, {"learning_rate", pretrain.learning_rate}}},
      {"finetune", {{"epochs", finetune.epochs}, {"learning_rate", finetune.learning_rate}}},
      {"attack",
       {{"n_layers", attack.n_layers},
        {"arch", attack.arch ? aia::to_string(*attack.arch) : "same"},
        {"max_epochs", attack.max_epochs},
        {"learning_rate", attack.learning_rate},
        {"batch_size", attack.batch_size},
        {"holdout_fraction", attack.holdout_fraction},
        {"patience", attack.patience}}},
      {"pii",
       {{"records", pii.records},
        {"seed", pii.seed},
        {"targets", pii.targets},
        {"spt_pairs", pii.spt_pairs},
        {"spt_epochs", pii.spt_epochs},
        {"spt_learning_rate", pii.spt_learning_rate},
        {"max_new_tokens", pii.max_new_tokens},
        {"query_template", pii.query_template}}},
      {"ablation",
       {{"attacker_stages", ablation.attacker_stages},
        {"model_sizes", ablation.model_sizes},
        {"architectures", ablation.architectures},
        {"attack_layers", ablation.attack_layers}}},
      {"metrics", metrics}};
}

std::string ExperimentConfig::hash() const { return key_hex(to_json()); }

void ExperimentConfig::validate() const {
  ModelConfig m = model;
  m.vocab_size = 8;
  try {
    m.validate();
  } catch (const ContractError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  if (pipeline.stages < 2 || pipeline.stages > model.n_layers) {
    throw ConfigError("pipeline.stages must lie in [2, n_layers]");
  }
  if (pipeline.attacker_stage < 2 || pipeline.attacker_stage > pipeline.stages) {
    throw ConfigError("pipeline.attacker_stage must lie in [2, stages]");
  }
  if (pipeline.microbatches < 1) throw ConfigError("pipeline.microbatches must be positive");
  if (pretrain.batch < 1) throw ConfigError("pretrain.batch must be positive");
  if (attack.n_layers < 1 || ablation.attack_layers < 1) throw ConfigError("attack models need at least one layer");
  if (attack.holdout_fraction < 0.0 || attack.holdout_fraction >= 1.0) {
    throw ConfigError("attack.holdout_fraction must lie in [0, 1)");
  }
  for (double lr : {pretrain.learning_rate, finetune.learning_rate, attack.learning_rate, pii.spt_learning_rate}) {
    if (!(lr >= 0.0)) throw ConfigError("learning rates must be non-negative");
  }
  if (corpora.shadow_docs < 1 || corpora.victim_docs < 1) throw ConfigError("corpora: need shadow and victim documents");
  for (const auto& p : {corpora.public_path, corpora.victim_path}) {
    if (!std::filesystem::exists(p)) throw ConfigError("corpus file " + p + " does not exist");
  }
  if (std::filesystem::equivalent(corpora.public_path, corpora.victim_path)) {
    throw ConfigError("public and victim corpora must be different files");
  }
  static const std::set<std::string> kMetrics{"ppl", "rouge", "bleu", "cos", "asr"};
  for (const auto& m2 : metrics) {
    if (!kMetrics.count(m2)) throw ConfigError("unknown metric '" + m2 + "'");
  }
  for (const auto& t : pii.targets) {
    try {
      pii_type_from_string(t);
    } catch (const ContractError& e) {
      throw ConfigError(std::string("pii.targets: ") + e.what());
    }
  }
  if (pii.records <= pii.spt_pairs) throw ConfigError("pii.records must exceed pii.spt_pairs");
  for (std::size_t s : ablation.attacker_stages) {
    if (s < 2 || s > pipeline.stages) throw ConfigError("ablation.attacker_stages must lie in [2, stages]");
  }
  for (std::size_t d : ablation.model_sizes) {
    if (d == 0 || d % model.n_heads != 0) throw ConfigError("ablation.model_sizes must be multiples of n_heads");
  }
  for (const auto& a : ablation.architectures) architecture_from_string(a);
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

namespace {

// Public text plus rendered PII records drawn with a seed the victim's records never use.
Corpus load_public(const ExperimentConfig& c) {
  const Corpus file = load_corpus(c.corpora.public_path, "public", CorpusRole::Public);
  std::vector<std::string> docs(file.documents().begin(), file.documents().end());
  for (const auto& r : generate_pii_dataset(c.corpora.public_pii_records, ~c.pii.seed)) docs.push_back(r.rendered);
  return Corpus("public", CorpusRole::Public, std::move(docs));
}

}  // namespace

Experiment::Experiment(ExperimentConfig config)
    : config_((config.validate(), std::move(config))),
      out_(config_.output_dir),
      public_(load_public(config_)),
      victim_(load_corpus(config_.corpora.victim_path, "victim", CorpusRole::Victim)) {
  require_disjoint(public_, victim_);
  require_disjoint(public_, pii_corpus());
  std::vector<Corpus> both{public_, victim_};
  vocab_ = build_vocab(both, pii_charset());
  config_.model.vocab_size = vocab_.size();
  if (config_.corpora.shadow_docs + config_.corpora.heldout_docs > public_.size()) {
    throw ConfigError("corpora: public corpus has only " + std::to_string(public_.size()) + " documents");
  }
  if (config_.corpora.victim_docs + config_.corpora.probe_docs > victim_.size()) {
    throw ConfigError("corpora: victim corpus has only " + std::to_string(victim_.size()) + " documents");
  }
  public_order_ = shuffled(public_.size(), config_.seed + 4);
  victim_order_ = shuffled(victim_.size(), config_.seed + 5);
  std::filesystem::create_directories(out_);
  write_json(out_ / "config.json", config_.to_json());
}

Corpus Experiment::shadow_corpus() const {
  return pick(public_, public_order_, 0, config_.corpora.shadow_docs, "shadow", CorpusRole::Public);
}
Corpus Experiment::heldout_corpus() const {
  return pick(public_, public_order_, config_.corpora.shadow_docs, config_.corpora.heldout_docs, "heldout",
              CorpusRole::Eval);
}
Corpus Experiment::victim_train_corpus() const {
  return pick(victim_, victim_order_, 0, config_.corpora.victim_docs, "victim-train", CorpusRole::Victim);
}
Corpus Experiment::probe_corpus() const {
  return pick(victim_, victim_order_, config_.corpora.victim_docs, config_.corpora.probe_docs, "probes",
              CorpusRole::Eval);
}

std::vector<PiiRecord> Experiment::pii_records() const {
  return generate_pii_dataset(config_.pii.records, config_.pii.seed);
}

Corpus Experiment::pii_corpus() const {
  std::vector<std::string> docs;
  for (const auto& r : pii_records()) docs.push_back(r.rendered);
  return Corpus("pii", CorpusRole::Victim, std::move(docs));
}

std::filesystem::path Experiment::artifact_dir(const std::string& name, const json&) const {
  auto dir = out_ / name;
  std::filesystem::create_directories(dir);
  return dir;
}

std::uint64_t Experiment::pretrain_key() const {
  json key{{"seed", config_.seed},
           {"model", to_json(config_.model)},
           {"pretrain", config_.to_json()["pretrain"]},
           {"public", hex64(corpus_hash(public_))},
           {"vocab", hex64(vocab_.fingerprint())}};
  return hash_bytes(key.dump());
}

const TransformerModel& Experiment::pretrained() {
  if (pretrained_) return *pretrained_;
  const json key{{"pretrain", hex64(pretrain_key())}};
  const auto dir = artifact_dir("pretrain", key);
  if (fresh(dir, key)) {
    pretrained_ = load_model(dir / "m_pre.ckpt");
    return *pretrained_;
  }
  stage("pretrain", [&] {
    log_line("pretraining M_pre for " + std::to_string(config_.pretrain.steps) + " steps");
    TransformerModel init = init_model(config_.model, config_.seed);
    const auto windows = make_corpus_windows(public_, vocab_, config_.model.max_seq_len);
    TrainingResult res;
    if (config_.pretrain.steps == 0) {
      res.model = init.clone();
    } else {
      PipelineConfig pc;
      pc.microbatches = config_.pretrain.batch;
      pc.shuffle_seed = config_.seed + 1;
      pc.max_steps = config_.pretrain.steps;
      pc.optimizer.learning_rate = config_.pretrain.learning_rate;
      const std::size_t per_epoch = (windows.size() + pc.microbatches - 1) / pc.microbatches;
      res = train_monolithic(pc, init, windows, config_.pretrain.steps / per_epoch + 1);
    }
    auto probe_loss = [&](const TransformerModel& m) {
      double total = 0.0;
      const std::size_t n = std::min<std::size_t>(32, windows.size());
      for (std::size_t i = 0; i < n; ++i) total += window_loss(m, windows[i]);
      return total / static_cast<double>(n);
    };
    const double initial = probe_loss(init), final_loss = probe_loss(res.model);
    write_training_log(dir / "log.jsonl", res.log);
    save_model(dir / "m_pre.ckpt", res.model, {{"config_hash", config_.hash()}});
    write_json(dir / "report.json", {{"config_hash", config_.hash()},
                                     {"steps", res.log.size()},
                                     {"initial_loss", initial},
                                     {"final_loss", final_loss},
                                     {"checkpoint_hash", hex64(res.model.parameter_hash())}});
    stamp(dir, key);
    pretrained_ = std::move(res.model);
    log_line("M_pre loss " + std::to_string(initial) + " -> " + std::to_string(final_loss));
  });
  return *pretrained_;
}

json Experiment::pretrain_report() {
  pretrained();
  std::ifstream is(out_ / "pretrain" / "report.json");
  return json::parse(is);
}

const VictimRun& Experiment::victim_run(const std::string& data, std::size_t attacker_stage) {
  if (data != "text" && data != "pii") throw ConfigError("victim data must be 'text' or 'pii'");
  const std::string name = "victim-" + data + "-s" + std::to_string(attacker_stage);
  if (auto it = runs_.find(name); it != runs_.end()) return *it->second;

  const TransformerModel& pre = pretrained();
  auto run = std::make_unique<VictimRun>();
  run->windows = make_corpus_windows(data == "text" ? victim_train_corpus() : pii_corpus(), vocab_,
                                     config_.model.max_seq_len);
  run->attacker_stage = attacker_stage;
  run->layer_cut = attacker_layer_cut(config_.model, config_.pipeline.stages, attacker_stage);

  PipelineConfig pc;
  pc.n_stages = config_.pipeline.stages;
  pc.attacker_stage = attacker_stage;
  pc.microbatches = config_.pipeline.microbatches;
  pc.deterministic_mode = config_.deterministic;
  pc.optimizer.learning_rate = config_.finetune.learning_rate;
  pc.shuffle_seed = config_.seed + 2;

  json windows_key = json::array();
  std::uint64_t wh = 0;
  for (const auto& w : run->windows) wh = hash_bytes(std::string_view(reinterpret_cast<const char*>(w.input.data()), w.input.size() * sizeof(TokenId)), wh + 1);
  const json key{{"pretrain", hex64(pre.parameter_hash())},
                 {"windows", hex64(wh)},
                 {"count", run->windows.size()},
                 {"pipeline", config_.to_json()["pipeline"]},
                 {"attacker_stage", attacker_stage},
                 {"finetune", config_.to_json()["finetune"]},
                 {"seed", config_.seed}};
  const auto dir = artifact_dir(name, key);
  run->dir = dir;
  run->schedule = make_schedule(run->windows.size(), pc, config_.finetune.epochs);
  if (fresh(dir, key)) {
    run->model = load_model(dir / "m_vic.ckpt");
    run->records = read_activation_dump(dir / "activations.aiad");
    run->log = read_training_log(dir / "log.jsonl");
  } else {
    stage("finetune", [&] {
      log_line("fine-tuning victim on " + data + " (" + std::to_string(run->windows.size()) + " windows, stage " +
               std::to_string(attacker_stage) + " taps)");
      ActivationTap tap(dir / "activations.aiad");
      auto res = run_training(pc, pre, run->windows, config_.finetune.epochs, &tap);
      tap.finish();
      run->model = std::move(res.model);
      run->records = tap.records();
      run->log = std::move(res.log);
      write_training_log(dir / "log.jsonl", run->log);
      save_model(dir / "m_vic.ckpt", run->model, {{"config_hash", config_.hash()}});
      stamp(dir, key);
    });
  }
  return *(runs_[name] = std::move(run));
}

const ShadowDataset& Experiment::shadow(std::size_t layer_cut) {
  if (auto it = shadows_.find(layer_cut); it != shadows_.end()) return *it->second;
  const TransformerModel& pre = pretrained();
  const Corpus corpus = shadow_corpus();
  const json key{{"pretrain", hex64(pre.parameter_hash())}, {"corpus", hex64(corpus_hash(corpus))}, {"cut", layer_cut}};
  const auto dir = artifact_dir("shadow-cut" + std::to_string(layer_cut), key);
  auto ds = std::make_unique<ShadowDataset>();
  if (fresh(dir, key)) {
    *ds = load_shadow_dataset(dir);
  } else {
    stage("shadow", [&] {
      log_line("building shadow dataset at layer cut " + std::to_string(layer_cut));
      *ds = build_shadow_dataset(pre, corpus, vocab_, layer_cut);
      save_shadow_dataset(dir, *ds);
      stamp(dir, key);
    });
  }
  return *(shadows_[layer_cut] = std::move(ds));
}

const AttackTrainingResult& Experiment::attack_model(std::size_t layer_cut, Architecture arch, std::size_t n_layers) {
  const std::string name =
      std::string("attack-") + to_string(arch) + "-" + std::to_string(n_layers) + "l-cut" + std::to_string(layer_cut);
  if (auto it = attacks_.find(name); it != attacks_.end()) return *it->second;
  const ShadowDataset& ds = shadow(layer_cut);
  AttackModelConfig ac = config_.model;
  ac.n_layers = n_layers;
  ac.arch = arch;
  AttackTrainOptions opt;
  opt.max_epochs = config_.attack.max_epochs;
  opt.learning_rate = config_.attack.learning_rate;
  opt.batch_size = config_.attack.batch_size;
  opt.holdout_fraction = config_.attack.holdout_fraction;
  opt.patience = config_.attack.patience;
  opt.seed = config_.seed + 3;
  json train_key = config_.to_json()["attack"];
  train_key.erase("n_layers");
  train_key.erase("arch");
  const json key{{"shadow", hex64(ds.shadow.parameter_hash)},
                 {"cut", layer_cut},
                 {"pairs", ds.pairs.size()},
                 {"config", to_json(ac)},
                 {"train", train_key},
                 {"seed", opt.seed}};
  const auto dir = artifact_dir(name, key);
  auto res = std::make_unique<AttackTrainingResult>();
  if (fresh(dir, key)) {
    res->model = load_attack_model(dir / "m_att.ckpt");
    std::ifstream is(dir / "training.json");
    const auto j = json::parse(is);
    res->train_loss = j.at("train_loss").get<std::vector<double>>();
    res->heldout_loss = j.at("heldout_loss").get<std::vector<double>>();
    res->best_epoch = j.at("best_epoch").get<std::size_t>();
    res->train_pairs = j.at("train_pairs").get<std::vector<std::size_t>>();
    res->heldout_pairs = j.at("heldout_pairs").get<std::vector<std::size_t>>();
  } else {
    stage("attack-training", [&] {
      log_line("training " + name + " on " + std::to_string(ds.pairs.size()) + " shadow pairs");
      opt.on_epoch = [&](std::size_t e, double tr, double ho) {
        if (e % 5 == 0) log_line("  epoch " + std::to_string(e) + " train " + std::to_string(tr) + " held-out " + std::to_string(ho));
      };
      *res = train_attack_model(ds, ac, opt);
      save_attack_model(dir / "m_att.ckpt", res->model, {{"config_hash", config_.hash()}});
      write_json(dir / "training.json", {{"train_loss", res->train_loss},
                                         {"heldout_loss", res->heldout_loss},
                                         {"best_epoch", res->best_epoch},
                                         {"train_pairs", res->train_pairs},
                                         {"heldout_pairs", res->heldout_pairs}});
      stamp(dir, key);
    });
  }
  return *(attacks_[name] = std::move(res));
}

namespace {

std::size_t last_epoch(const VictimRun& run) {
  std::size_t e = 0;
  for (const auto& r : run.records) e = std::max(e, run.schedule[r.iteration].epoch);
  return e;
}

Evaluation score(const ExperimentConfig& cfg, std::vector<std::string> cands, std::vector<std::string> refs,
                 double ppl, const TransformerModel* encoder, const Vocab& vocab) {
  Evaluation ev;
  const TextScores s = score_texts(cands, refs, encoder, &vocab);
  ev.report.ppl = ppl;
  ev.report.rouge1 = s.rouge1;
  ev.report.rouge2 = s.rouge2;
  ev.report.rougeL = s.rougeL;
  ev.report.bleu1 = s.bleu1;
  ev.report.bleu2 = s.bleu2;
  ev.report.bleu4 = s.bleu4;
  ev.report.cos = s.cos;
  std::vector<std::string> shifted = refs;
  if (shifted.size() > 1) std::rotate(shifted.begin(), shifted.begin() + 1, shifted.end());
  double control = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) control += rouge_n(cands[i], shifted[i], 1);
  ev.control_rouge1 = cands.empty() ? 0.0 : control / static_cast<double>(cands.size());
  ev.candidates = std::move(cands);
  ev.references = std::move(refs);
  ev.report.validate();
  (void)cfg;
  return ev;
}

}  // namespace

Evaluation Experiment::evaluate_victim(const AttackModel& model, const VictimRun& run, bool with_cos) {
  if (run.records.empty()) throw MetricError("no tapped activations to evaluate");
  const std::size_t epoch = last_epoch(run);
  std::vector<std::string> cands, refs;
  std::vector<ReferencePair> pairs;
  for (const auto& r : run.records) {
    if (run.schedule[r.iteration].epoch != epoch) continue;
    const auto& w = run.windows[record_window(r, run.schedule)];
    cands.push_back(reconstruct_one(model, r.tensor, vocab_));
    refs.push_back(vocab_.decode(w.input));
    pairs.push_back({r.tensor, w.input});
  }
  return score(config_, std::move(cands), std::move(refs), perplexity(model, pairs),
               with_cos ? &pretrained() : nullptr, vocab_);
}

Evaluation Experiment::evaluate_heldout(const AttackModel& model, std::size_t layer_cut, bool with_cos) {
  const ShadowDataset held = build_shadow_dataset(pretrained(), heldout_corpus(), vocab_, layer_cut);
  std::vector<std::string> cands, refs;
  std::vector<ReferencePair> pairs;
  for (const auto& p : held.pairs) {
    cands.push_back(reconstruct_one(model, p.activation, vocab_));
    refs.push_back(vocab_.decode(p.labels));
    pairs.push_back({p.activation, p.labels});
  }
  return score(config_, std::move(cands), std::move(refs), perplexity(model, pairs),
               with_cos ? &pretrained() : nullptr, vocab_);
}

std::map<std::size_t, std::string> Experiment::reconstruct_documents(const AttackModel& model, const VictimRun& run) {
  std::map<std::size_t, std::map<std::size_t, std::string>> parts;
  if (!run.records.empty()) {
    const std::size_t epoch = last_epoch(run);
    for (const auto& r : run.records) {
      if (run.schedule[r.iteration].epoch != epoch) continue;
      const auto& w = run.windows[record_window(r, run.schedule)];
      parts[w.document][w.index] = reconstruct_one(model, r.tensor, vocab_);
    }
  }
  std::map<std::size_t, std::string> out;
  for (const auto& [doc, windows] : parts) {
    std::string text;
    for (const auto& [_, t] : windows) text += t;
    out[doc] = std::move(text);
  }
  return out;
}

json cmd_pretrain(Experiment& ex) {
  auto report = ex.pretrain_report();
  report["config_hash"] = ex.config().hash();
  return report;
}

json cmd_similarity_study(Experiment& ex) {
  const auto& cfg = ex.config();
  const auto& run = ex.victim_run("text", cfg.pipeline.attacker_stage);
  std::vector<Tokens> probes;
  const Corpus probe_docs = ex.probe_corpus();
  for (const auto& d : probe_docs.documents()) {
    Tokens t = ex.vocab().encode_content(d);
    if (t.size() > cfg.model.max_seq_len) t.resize(cfg.model.max_seq_len);
    probes.push_back(std::move(t));
  }
  const auto sims = stage("similarity", [&] { return activation_similarity_study(ex.pretrained(), run.model, probes); });
  std::vector<double> layers(sims.size());
  std::iota(layers.begin(), layers.end(), 1.0);
  const auto dir = ex.out() / "similarity";
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "similarity.csv");
  csv << "layer,mean_cosine\n";
  for (std::size_t j = 0; j < sims.size(); ++j) csv << (j + 1) << ',' << sims[j] << '\n';
  json report{{"config_hash", cfg.hash()},
              {"checkpoints",
               {{"m_pre", hex64(ex.pretrained().parameter_hash())}, {"m_vic", hex64(run.model.parameter_hash())}}},
              {"similarity", sims},
              {"spearman", spearman_correlation(layers, sims)},
              {"csv", (dir / "similarity.csv").string()}};
  write_json(dir / "report.json", report);
  return report;
}

namespace {

json attack_report(Experiment& ex, const VictimRun& run, const AttackTrainingResult& att, const Evaluation& victim,
                   const Evaluation& held, std::size_t cut) {
  const auto& cfg = ex.config();
  return json{{"config_hash", cfg.hash()},
              {"checkpoints",
               {{"m_pre", hex64(ex.pretrained().parameter_hash())},
                {"m_vic", hex64(run.model.parameter_hash())},
                {"m_att", hex64(att.model.parameter_hash())}}},
              {"attacker_stage", run.attacker_stage},
              {"layer_cut", cut},
              {"records_total", run.records.size()},
              {"records_evaluated", victim.candidates.size()},
              {"victim", report_json(cfg, victim.report)},
              {"victim_control_rouge1", victim.control_rouge1},
              {"shadow_heldout", report_json(cfg, held.report)},
              {"shadow_control_rouge1", held.control_rouge1},
              {"attack_training",
               {{"best_epoch", att.best_epoch},
                {"epochs_run", att.train_loss.size() - 1},
                {"train_loss_initial", att.train_loss.front()},
                {"train_loss_final", att.train_loss.back()},
                {"heldout_loss_best", att.heldout_loss.empty() ? 0.0 : att.heldout_loss[att.best_epoch]}}}};
}

std::vector<ReconstructionLine> reconstruction_lines(const VictimRun& run, const Evaluation& ev) {
  std::vector<ReconstructionLine> lines;
  const std::size_t epoch = last_epoch(run);
  std::size_t k = 0;
  for (std::size_t i = 0; i < run.records.size(); ++i) {
    if (run.schedule[run.records[i].iteration].epoch != epoch) continue;
    lines.push_back({i, run.records[i].iteration, ev.candidates[k++]});
  }
  return lines;
}

}  // namespace

json cmd_attack(Experiment& ex) {
  const auto& cfg = ex.config();
  const std::size_t cut = attacker_layer_cut(cfg.model, cfg.pipeline.stages, cfg.pipeline.attacker_stage);
  const auto& run = ex.victim_run("text", cfg.pipeline.attacker_stage);
  const auto& att = ex.attack_model(cut, cfg.attack_arch(), cfg.attack.n_layers);
  const bool cos = selected(cfg, "cos");
  const auto victim = stage("evaluate", [&] { return ex.evaluate_victim(att.model, run, cos); });
  const auto held = stage("evaluate", [&] { return ex.evaluate_heldout(att.model, cut, cos); });
  const auto dir = ex.out() / "attack";
  std::filesystem::create_directories(dir);
  write_reconstructions(dir / "reconstructions.jsonl", reconstruction_lines(run, victim));
  auto report = attack_report(ex, run, att, victim, held, cut);
  write_json(dir / "report.json", report);
  return report;
}

json cmd_evaluate(Experiment& ex) {
  const auto& cfg = ex.config();
  const std::size_t cut = attacker_layer_cut(cfg.model, cfg.pipeline.stages, cfg.pipeline.attacker_stage);
  const auto dump = ex.out() / ("victim-text-s" + std::to_string(cfg.pipeline.attacker_stage)) / "activations.aiad";
  const auto att_path = ex.out() /
                        (std::string("attack-") + to_string(cfg.attack_arch()) + "-" +
                         std::to_string(cfg.attack.n_layers) + "l-cut" + std::to_string(cut)) /
                        "m_att.ckpt";
  for (const auto& p : {ex.out() / "pretrain" / "m_pre.ckpt", dump, att_path}) {
    if (!std::filesystem::exists(p)) throw ConfigError("missing artifact " + p.string() + "; run 'attack' first");
  }
  const auto& run = ex.victim_run("text", cfg.pipeline.attacker_stage);
  const auto& att = ex.attack_model(cut, cfg.attack_arch(), cfg.attack.n_layers);
  const bool cos = selected(cfg, "cos");
  const auto victim = stage("evaluate", [&] { return ex.evaluate_victim(att.model, run, cos); });
  const auto held = stage("evaluate", [&] { return ex.evaluate_heldout(att.model, cut, cos); });
  const auto dir = ex.out() / "evaluate";
  std::filesystem::create_directories(dir);
  write_reconstructions(dir / "reconstructions.jsonl", reconstruction_lines(run, victim));
  auto report = attack_report(ex, run, att, victim, held, cut);
  write_json(dir / "report.json", report);
  return report;
}

json cmd_baselines(Experiment& ex, const std::vector<std::string>& targets) {
  const auto& cfg = ex.config();
  std::vector<PiiType> types;
  for (const auto& t : targets) {
    try {
      types.push_back(pii_type_from_string(t));
    } catch (const ContractError& e) {
      throw ConfigError(e.what());
    }
  }
  const std::size_t cut = attacker_layer_cut(cfg.model, cfg.pipeline.stages, cfg.pipeline.attacker_stage);
  const auto& run = ex.victim_run("pii", cfg.pipeline.attacker_stage);
  const auto& att = ex.attack_model(cut, cfg.attack_arch(), cfg.attack.n_layers);
  const auto records = ex.pii_records();
  const std::vector<PiiRecord> train(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(cfg.pii.spt_pairs));
  const std::vector<PiiRecord> eval(records.begin() + static_cast<std::ptrdiff_t>(cfg.pii.spt_pairs), records.end());

  const auto docs = stage("aia", [&] { return ex.reconstruct_documents(att.model, run); });
  std::vector<std::string> aia_gen;
  for (std::size_t i = cfg.pii.spt_pairs; i < records.size(); ++i) {
    auto it = docs.find(i);
    aia_gen.push_back(it == docs.end() ? std::string() : it->second);
  }

  const auto dir = ex.out() / "baselines";
  std::filesystem::create_directories(dir);
  std::ofstream details(dir / "details.jsonl");
  json tp_row{{"method", "True-Prefix"}, {"asr", json::object()}};
  json spt_row{{"method", "SPT"}, {"asr", json::object()}};
  json aia_row{{"method", "AIA"}, {"asr", json::object()}};
  json spt_meta = json::object();
  for (PiiType t : types) {
    const std::string name = to_string(t);
    log_line("baselines for " + name);
    const auto tp = stage("true-prefix", [&] {
      return baseline_true_prefix(run.model, eval, t, ex.vocab(), cfg.pii.max_new_tokens, cfg.pii.query_template);
    });
    SptOptions so;
    so.epochs = cfg.pii.spt_epochs;
    so.min_pairs = cfg.pii.spt_pairs;
    so.learning_rate = cfg.pii.spt_learning_rate;
    so.seed = cfg.seed + 6;
    so.max_new_tokens = cfg.pii.max_new_tokens;
    so.query_template = cfg.pii.query_template;
    const auto spt = stage("spt", [&] { return baseline_spt(run.model, train, eval, t, ex.vocab(), so); });
    tp_row["asr"][name] = asr_exact_match(tp, eval, t);
    spt_row["asr"][name] = asr_exact_match(spt.generations, eval, t);
    aia_row["asr"][name] = asr_exact_match(aia_gen, eval, t);
    spt_meta[name] = {{"epoch_loss", spt.prompt.epoch_loss}, {"prompt_rows", spt.prompt.embeddings.rows()}};
    for (std::size_t i = 0; i < eval.size(); ++i) {
      details << json{{"record", cfg.pii.spt_pairs + i},
                      {"target", name},
                      {"value", eval[i].value(t)},
                      {"true_prefix", tp[i]},
                      {"spt", spt.generations[i]},
                      {"aia", aia_gen[i]}}
                     .dump()
              << '\n';
    }
  }
  json report{{"config_hash", cfg.hash()},
              {"checkpoints",
               {{"m_pre", hex64(ex.pretrained().parameter_hash())},
                {"m_vic", hex64(run.model.parameter_hash())},
                {"m_att", hex64(att.model.parameter_hash())}}},
              {"targets", targets},
              {"eval_records", eval.size()},
              {"rows", json::array({tp_row, spt_row, aia_row})},
              {"spt", spt_meta}};
  write_json(dir / "table.json", report);
  return report;
}

json cmd_ablate(Experiment& ex, const std::string& axis) {
  const auto& cfg = ex.config();
  const auto dir = ex.out() / "ablate";
  std::filesystem::create_directories(dir);
  json rows = json::array();
  std::string header;
  std::vector<std::vector<std::string>> lines;
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
  };

  if (axis == "layer_index") {
    header = "attacker_stage,layer_cut,shadow_ppl,victim_ppl,victim_rouge1";
    for (std::size_t s : cfg.ablation.attacker_stages) {
      const auto& run = ex.victim_run("text", s);
      const auto& att = ex.attack_model(run.layer_cut, cfg.attack_arch(), cfg.ablation.attack_layers);
      const auto v = ex.evaluate_victim(att.model, run, false);
      const auto h = ex.evaluate_heldout(att.model, run.layer_cut, false);
      rows.push_back({{"attacker_stage", s}, {"layer_cut", run.layer_cut}, {"shadow_ppl", h.report.ppl},
                      {"victim_ppl", v.report.ppl}, {"victim_rouge1", v.report.rouge1}});
      lines.push_back({std::to_string(s), std::to_string(run.layer_cut), num(h.report.ppl), num(v.report.ppl),
                       num(v.report.rouge1)});
    }
  } else if (axis == "architecture") {
    header = "attack_arch,matched,shadow_ppl,victim_ppl";
    const auto& run = ex.victim_run("text", cfg.pipeline.attacker_stage);
    for (const auto& tag : cfg.ablation.architectures) {
      const Architecture arch = architecture_from_string(tag);
      const auto& att = ex.attack_model(run.layer_cut, arch, cfg.ablation.attack_layers);
      const auto v = ex.evaluate_victim(att.model, run, false);
      const auto h = ex.evaluate_heldout(att.model, run.layer_cut, false);
      const bool matched = arch == cfg.model.arch;
      rows.push_back({{"attack_arch", tag}, {"matched", matched}, {"shadow_ppl", h.report.ppl},
                      {"victim_ppl", v.report.ppl}});
      lines.push_back({tag, matched ? "1" : "0", num(h.report.ppl), num(v.report.ppl)});
    }
  } else if (axis == "model_size") {
    header = "d_model,parameters,shadow_ppl,victim_ppl,victim_rouge1";
    for (std::size_t d : cfg.ablation.model_sizes) {
      ExperimentConfig sub = cfg;
      sub.model.d_model = d;
      sub.model.d_ff = 4 * d;
      sub.output_dir = (ex.out() / ("size-d" + std::to_string(d))).string();
      Experiment sx(sub);
      const auto& run = sx.victim_run("text", cfg.pipeline.attacker_stage);
      const auto& att = sx.attack_model(run.layer_cut, sub.attack_arch(), cfg.ablation.attack_layers);
      const auto v = sx.evaluate_victim(att.model, run, false);
      const auto h = sx.evaluate_heldout(att.model, run.layer_cut, false);
      const std::size_t params = sx.pretrained().parameter_count();
      rows.push_back({{"d_model", d}, {"parameters", params}, {"shadow_ppl", h.report.ppl},
                      {"victim_ppl", v.report.ppl}, {"victim_rouge1", v.report.rouge1}});
      lines.push_back({std::to_string(d), std::to_string(params), num(h.report.ppl), num(v.report.ppl),
                       num(v.report.rouge1)});
    }
  } else {
    throw ConfigError("unknown ablation axis '" + axis + "' (layer_index, model_size, architecture)");
  }

  const auto csv_path = dir / (axis + ".csv");
  std::ofstream csv(csv_path);
  csv << header << '\n';
  for (const auto& l : lines) {
    for (std::size_t i = 0; i < l.size(); ++i) csv << (i ? "," : "") << l[i];
    csv << '\n';
  }
  json report{{"config_hash", cfg.hash()},
              {"axis", axis},
              {"checkpoints", {{"m_pre", hex64(ex.pretrained().parameter_hash())}}},
              {"rows", rows},
              {"csv", csv_path.string()}};
  write_json(dir / (axis + ".json"), report);
  return report;
}

}  // namespace aia
