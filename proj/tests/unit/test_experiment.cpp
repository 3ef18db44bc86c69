#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "aia/error.hpp"
#include "aia/experiment.hpp"

using namespace aia;
namespace fs = std::filesystem;

namespace {

nlohmann::json tiny_json(const fs::path& out) {
  return {
      {"seed", 3},
      {"output_dir", out.string()},
      {"corpora",
       {{"public", std::string(AIA_DATA) + "/public.txt"},
        {"victim", std::string(AIA_DATA) + "/victim.txt"},
        {"shadow_docs", 12},
        {"heldout_docs", 3},
        {"victim_docs", 4},
        {"probe_docs", 3}}},
      {"model", {{"n_layers", 4}, {"d_model", 8}, {"n_heads", 2}, {"d_ff", 16}, {"max_seq_len", 24}}},
      {"pipeline", {{"stages", 2}, {"attacker_stage", 2}, {"microbatches", 2}}},
      {"pretrain", {{"steps", 4}}},
      {"finetune", {{"epochs", 1}}},
      {"attack", {{"n_layers", 1}, {"max_epochs", 2}}},
      {"pii", {{"records", 6}, {"spt_pairs", 2}, {"spt_epochs", 1}, {"max_new_tokens", 4}}},
      {"ablation", {{"attacker_stages", {2}}, {"model_sizes", {8}}, {"attack_layers", 1}}},
  };
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST(ExperimentConfig, DefaultsRoundTripAndHashIsStable) {
  const ExperimentConfig d;
  const auto back = ExperimentConfig::from_json(d.to_json());
  EXPECT_EQ(back.to_json(), d.to_json());
  EXPECT_EQ(back.hash(), d.hash());
  auto changed = d;
  changed.seed = 2;
  EXPECT_NE(changed.hash(), d.hash());
  EXPECT_EQ(d.attack_arch(), d.model.arch);
}

TEST(ExperimentConfig, UnknownKeysAreRejected) {
  EXPECT_THROW(ExperimentConfig::from_json({{"sede", 1}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json({{"model", {{"layers", 4}}}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json({{"model", {{"arch", "arch-D"}}}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json({{"seed", "one"}}), ConfigError);
  const auto c = ExperimentConfig::from_json({{"attack", {{"arch", "arch-C"}}}});
  EXPECT_EQ(c.attack_arch(), Architecture::C);
  EXPECT_EQ(c.model.n_layers, 12u);
}

TEST(ExperimentConfig, ValidationErrors) {
  const auto base = ExperimentConfig::from_json(tiny_json(fresh_dir("aia_cfg_v")));
  EXPECT_NO_THROW(base.validate());
  auto bad = [&](auto edit) {
    auto c = base;
    edit(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](auto& c) { c.model.d_model = 9; });
  bad([](auto& c) { c.pipeline.stages = 5; });
  bad([](auto& c) { c.pipeline.attacker_stage = 1; });
  bad([](auto& c) { c.corpora.victim_path = c.corpora.public_path; });
  bad([](auto& c) { c.corpora.public_path = "/no/such/file.txt"; });
  bad([](auto& c) { c.metrics = {"rouge", "meteor"}; });
  bad([](auto& c) { c.pii.targets = {"passport"}; });
  bad([](auto& c) { c.pii.spt_pairs = c.pii.records; });
  bad([](auto& c) { c.ablation.attacker_stages = {3}; });
  bad([](auto& c) { c.attack.holdout_fraction = 1.0; });
}

TEST(ExperimentConfig, LoadFromFile) {
  const auto dir = fresh_dir("aia_cfg_file");
  fs::create_directories(dir);
  std::ofstream(dir / "c.json") << tiny_json(dir / "out").dump();
  EXPECT_EQ(load_experiment_config(dir / "c.json").seed, 3u);
  std::ofstream(dir / "broken.json") << "{\"seed\": ";
  EXPECT_THROW(load_experiment_config(dir / "broken.json"), ConfigError);
  EXPECT_THROW(load_experiment_config(dir / "missing.json"), ConfigError);
}

TEST(Experiment, SplitsAreDisjointAndSized) {
  const auto out = fresh_dir("aia_exp_split");
  Experiment ex(ExperimentConfig::from_json(tiny_json(out)));
  EXPECT_TRUE(fs::exists(out / "config.json"));
  EXPECT_EQ(ex.shadow_corpus().size(), 12u);
  EXPECT_EQ(ex.heldout_corpus().size(), 3u);
  EXPECT_EQ(ex.victim_train_corpus().size(), 4u);
  EXPECT_EQ(ex.probe_corpus().size(), 3u);
  const auto sh = ex.shadow_corpus(), held = ex.heldout_corpus();
  for (const auto& d : held.documents()) {
    EXPECT_EQ(std::find(sh.documents().begin(), sh.documents().end(), d), sh.documents().end());
  }
  EXPECT_EQ(ex.pii_records().size(), 6u);
  const Corpus pii = ex.pii_corpus();
  EXPECT_EQ(pii.size(), 6u);
  for (const auto& d : pii.documents()) EXPECT_NO_THROW(ex.vocab().encode_content(d));
}

TEST(Experiment, EndToEndReusesCachedArtifacts) {
  const auto out = fresh_dir("aia_exp_e2e");
  const auto cfg = ExperimentConfig::from_json(tiny_json(out));
  {
    Experiment ex(cfg);
    EXPECT_THROW(cmd_evaluate(ex), ConfigError);
  }
  nlohmann::json first;
  {
    Experiment ex(cfg);
    first = cmd_attack(ex);
  }
  EXPECT_EQ(first["config_hash"], cfg.hash());
  for (const char* k : {"m_pre", "m_vic", "m_att"}) EXPECT_TRUE(first["checkpoints"].contains(k)) << k;
  for (const char* k : {"PPL", "ROUGE-1", "ROUGE-2", "ROUGE-L", "BLEU-1", "BLEU-2", "BLEU-4", "COS"}) {
    EXPECT_TRUE(first["victim"].contains(k)) << k;
    EXPECT_TRUE(first["shadow_heldout"].contains(k)) << k;
  }
  EXPECT_GE(first["victim"]["PPL"].get<double>(), 1.0);
  for (const char* p : {"pretrain/m_pre.ckpt", "victim-text-s2/m_vic.ckpt", "victim-text-s2/activations.aiad",
                        "victim-text-s2/log.jsonl", "attack/report.json", "attack/reconstructions.jsonl"}) {
    EXPECT_TRUE(fs::exists(out / p)) << p;
  }
  const auto ckpt_time = fs::last_write_time(out / "pretrain" / "m_pre.ckpt");

  nlohmann::json second;
  {
    Experiment ex(cfg);
    second = cmd_evaluate(ex);
  }
  EXPECT_EQ(fs::last_write_time(out / "pretrain" / "m_pre.ckpt"), ckpt_time);
  EXPECT_EQ(second["checkpoints"], first["checkpoints"]);
  EXPECT_EQ(second["victim"], first["victim"]);
  const auto a = read_reconstructions(out / "attack" / "reconstructions.jsonl");
  const auto b = read_reconstructions(out / "evaluate" / "reconstructions.jsonl");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].text, b[i].text);

  auto other = cfg;
  other.attack.max_epochs = 3;
  Experiment ex(other);
  const auto third = cmd_attack(ex);
  EXPECT_EQ(third["checkpoints"]["m_vic"], first["checkpoints"]["m_vic"]);
  EXPECT_NE(third["config_hash"], first["config_hash"]);
}

TEST(Experiment, AblateRejectsUnknownAxis) {
  const auto out = fresh_dir("aia_exp_ablate");
  Experiment ex(ExperimentConfig::from_json(tiny_json(out)));
  EXPECT_THROW(cmd_ablate(ex, "depth"), ConfigError);
  EXPECT_THROW(cmd_baselines(ex, {"passport"}), ConfigError);
}

TEST(Experiment, InjectedFaultSurfacesAsPipelineFault) {
  const auto out = fresh_dir("aia_exp_fault");
  Experiment ex(ExperimentConfig::from_json(tiny_json(out)));
  const auto cut = attacker_layer_cut(ex.config().model, 2, 2);
  PipelineConfig pc;
  pc.n_stages = 2;
  pc.attacker_stage = 2;
  pc.microbatches = 2;
  pc.fault_stage = 2;
  const auto windows = make_corpus_windows(ex.victim_train_corpus(), ex.vocab(), 24);
  EXPECT_THROW(run_training(pc, ex.pretrained(), windows, 1), PipelineFault);
  EXPECT_EQ(cut, 2u);
}

TEST(ExperimentConfig, ShippedDefaultMatchesBuiltIn) {
  const auto c = load_experiment_config(std::string(AIA_DATA) + "/../configs/default.json");
  EXPECT_EQ(c.to_json(), ExperimentConfig{}.to_json());
}
