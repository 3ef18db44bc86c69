#include <gtest/gtest.h>

#include <filesystem>

#include "aia/attack.hpp"
#include "aia/error.hpp"
#include "aia/pipeline.hpp"
#include "helpers.hpp"

using namespace aia;

namespace {

struct Setup {
  TransformerModel model;
  std::vector<Window> windows;
};

Setup setup(std::size_t layers, std::uint64_t seed, std::size_t docs = 6) {
  const Corpus c = aia::test::toy_corpus(docs, seed);
  std::vector<Corpus> cs{c};
  const Vocab v = build_vocab(cs);
  auto cfg = aia::test::tiny_config(Architecture::B, layers);
  cfg.vocab_size = v.size();
  return {init_model(cfg, seed), make_corpus_windows(c, v, cfg.max_seq_len)};
}

PipelineConfig pipeline(std::size_t k, std::size_t att, std::size_t m, bool det) {
  PipelineConfig pc;
  pc.n_stages = k;
  pc.attacker_stage = att;
  pc.microbatches = m;
  pc.deterministic_mode = det;
  pc.optimizer.learning_rate = 1e-2;
  pc.shuffle_seed = 4;
  return pc;
}

std::vector<double> losses(const TrainingResult& r) {
  std::vector<double> out;
  for (const auto& e : r.log) out.push_back(e.loss);
  return out;
}

}  // namespace

TEST(Partition, Examples) {
  auto c = aia::test::tiny_config(Architecture::B, 12);
  auto even = partition_model(c, 6);
  ASSERT_EQ(even.size(), 6u);
  for (const auto& s : even) EXPECT_EQ(s.layer_count(), 2u);
  EXPECT_TRUE(even.front().holds_embedding);
  EXPECT_TRUE(even.back().holds_lm_head);
  c.n_layers = 13;
  std::vector<std::size_t> sizes;
  for (const auto& s : partition_model(c, 6)) sizes.push_back(s.layer_count());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 2, 2, 2, 2, 2}));
  const auto one = partition_model(c, 1);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].layer_lo, 1u);
  EXPECT_EQ(one[0].layer_hi, 13u);
  EXPECT_TRUE(one[0].holds_embedding && one[0].holds_lm_head);
  EXPECT_THROW(partition_model(c, 14), ContractError);
}

TEST(Partition, ContiguousCoverProperty) {
  for (std::size_t layers = 1; layers <= 20; ++layers) {
    auto c = aia::test::tiny_config(Architecture::B, layers);
    for (std::size_t k = 1; k <= layers; ++k) {
      const auto p = partition_model(c, k);
      std::size_t next = 1, lo = layers, hi = 0;
      for (const auto& s : p) {
        EXPECT_EQ(s.layer_lo, next);
        next = s.layer_hi + 1;
        lo = std::min(lo, s.layer_count());
        hi = std::max(hi, s.layer_count());
      }
      EXPECT_EQ(next, layers + 1);
      EXPECT_LE(hi - lo, 1u);
    }
  }
}

TEST(Partition, AttackerLayerCut) {
  auto c = aia::test::tiny_config(Architecture::B, 12);
  EXPECT_EQ(attacker_layer_cut(c, 6, 2), 2u);
  EXPECT_EQ(attacker_layer_cut(c, 6, 3), 4u);
  EXPECT_EQ(attacker_layer_cut(c, 6, 6), 10u);
  EXPECT_THROW(attacker_layer_cut(c, 6, 1), ContractError);
  EXPECT_THROW(attacker_layer_cut(c, 6, 7), ContractError);
}

TEST(Tap, CopySemanticsAndIsolation) {
  Message m{MessageKind::Forward, 3, 1, aia::test::random_tensor({4, 8}, 1, false)};
  const auto before = m.payload.clone();
  auto r = tap_activations(3, 3, m);
  ASSERT_TRUE(r.record.has_value());
  EXPECT_TRUE(r.record->tensor.bitwise_equal(m.payload));
  EXPECT_FALSE(r.record->tensor.same_storage(m.payload));
  EXPECT_EQ(r.record->iteration, 3u);
  EXPECT_EQ(r.record->microbatch, 1u);
  EXPECT_EQ(r.record->seq_len, 4u);
  r.record->tensor.mutable_data()[0] += 100.0;
  EXPECT_TRUE(r.forwarded.payload.bitwise_equal(before));
  EXPECT_FALSE(tap_activations(2, 3, m).record.has_value());
  Message b{MessageKind::Backward, 0, 0, aia::test::random_tensor({4, 8}, 2, false)};
  EXPECT_FALSE(tap_activations(3, 3, b).record.has_value());
}

TEST(Tap, DumpRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "aia_tap_test.aiad";
  {
    ActivationTap tap(path, false);
    for (std::uint32_t i = 0; i < 3; ++i) {
      tap.store({i, i + 1, aia::test::random_tensor({2 + i, 4}, i, false), 2 + i});
    }
    tap.finish();
    EXPECT_EQ(tap.count(), 3u);
    EXPECT_TRUE(tap.records().empty());
  }
  const auto back = read_activation_dump(path);
  ASSERT_EQ(back.size(), 3u);
  for (std::uint32_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].iteration, i);
    EXPECT_EQ(back[i].microbatch, i + 1);
    EXPECT_TRUE(back[i].tensor.bitwise_equal(aia::test::random_tensor({2 + i, 4}, i, false)));
  }
  std::filesystem::remove(path);
}

TEST(Tap, WriteFailureIsDeferred) {
  ActivationTap tap(std::filesystem::path("/nonexistent-dir/dump.aiad"));
  EXPECT_NO_THROW(tap.store({0, 0, Tensor::zeros({1, 2}), 1}));
  EXPECT_THROW(tap.finish(), IoError);
}

TEST(Schedule, CoversEveryWindowEachEpoch) {
  PipelineConfig pc = pipeline(2, 2, 4, true);
  const auto s = make_schedule(10, pc, 3);
  ASSERT_EQ(s.size(), 9u);
  for (std::size_t e = 0; e < 3; ++e) {
    std::vector<std::size_t> seen;
    for (const auto& step : s) {
      if (step.epoch != e) continue;
      EXPECT_LE(step.windows.size(), 4u);
      seen.insert(seen.end(), step.windows.begin(), step.windows.end());
    }
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> all(10);
    std::iota(all.begin(), all.end(), 0);
    EXPECT_EQ(seen, all);
  }
  pc.max_steps = 4;
  EXPECT_EQ(make_schedule(10, pc, 3).size(), 4u);
  pc.shuffle = false;
  EXPECT_EQ(make_schedule(10, pc, 1)[0].windows, (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(PipelineTraining, MatchesMonolithicBitwise) {
  const auto s = setup(4, 11);
  for (bool det : {true, false}) {
    auto pc = pipeline(4, 2, 3, det);
    pc.max_steps = 6;
    const auto mono = train_monolithic(pc, s.model, s.windows, 5);
    const auto pipe = run_training(pc, s.model, s.windows, 5);
    ASSERT_EQ(pipe.log.size(), 6u);
    EXPECT_EQ(losses(pipe), losses(mono));
    EXPECT_EQ(pipe.model.parameter_hash(), mono.model.parameter_hash()) << "deterministic=" << det;
    EXPECT_NE(pipe.model.parameter_hash(), s.model.parameter_hash());
  }
}

TEST(PipelineTraining, UnevenPartitionAndShortLastStep) {
  const auto s = setup(5, 12, 5);
  auto pc = pipeline(3, 3, 4, true);
  const auto mono = train_monolithic(pc, s.model, s.windows, 1);
  const auto pipe = run_training(pc, s.model, s.windows, 1);
  EXPECT_EQ(pipe.model.parameter_hash(), mono.model.parameter_hash());
  EXPECT_EQ(losses(pipe), losses(mono));
}

TEST(PipelineTraining, TapIsPassiveAndCounts) {
  auto s = setup(4, 13);
  ASSERT_GE(s.windows.size(), 8u);
  s.windows.resize(8);
  auto pc = pipeline(4, 3, 4, false);
  pc.max_steps = 5;
  ActivationTap tap;
  const auto with = run_training(pc, s.model, s.windows, 10, &tap);
  const auto without = run_training(pc, s.model, s.windows, 10);
  EXPECT_EQ(losses(with), losses(without));
  EXPECT_EQ(with.model.parameter_hash(), without.model.parameter_hash());
  std::size_t expected = 0;
  for (const auto& step : with.schedule) expected += step.windows.size();
  EXPECT_EQ(tap.count(), expected);
  EXPECT_EQ(tap.count(), 20u);
}

TEST(PipelineTraining, RecordsMatchShadowActivationsAtStepZero) {
  const auto s = setup(4, 14);
  auto pc = pipeline(4, 3, 2, true);
  pc.max_steps = 1;
  ActivationTap tap;
  const auto r = run_training(pc, s.model, s.windows, 1, &tap);
  const std::size_t cut = attacker_layer_cut(s.model.config(), 4, 3);
  ASSERT_EQ(tap.records().size(), 2u);
  for (const auto& rec : tap.records()) {
    const auto& w = s.windows[record_window(rec, r.schedule)];
    EXPECT_TRUE(rec.tensor.bitwise_equal(forward_prefix(s.model, w.input, cut)));
  }
}

TEST(PipelineTraining, InjectedFaultNamesTheStage) {
  const auto s = setup(4, 15);
  for (bool det : {true, false}) {
    auto pc = pipeline(4, 2, 2, det);
    pc.fault_stage = 3;
    try {
      run_training(pc, s.model, s.windows, 1);
      ADD_FAILURE() << "no fault raised";
    } catch (const PipelineFault& f) {
      EXPECT_EQ(f.stage(), 3) << "deterministic=" << det;
    }
  }
}

TEST(PipelineTraining, InvalidConfigurations) {
  const auto s = setup(4, 16);
  EXPECT_THROW(run_training(pipeline(5, 2, 2, true), s.model, s.windows, 1), ContractError);
  EXPECT_THROW(run_training(pipeline(4, 1, 2, true), s.model, s.windows, 1), ContractError);
  EXPECT_THROW(run_training(pipeline(4, 2, 0, true), s.model, s.windows, 1), ContractError);
}

TEST(PipelineTraining, LogFileIsJsonLines) {
  const auto s = setup(2, 17);
  auto pc = pipeline(2, 2, 2, true);
  pc.max_steps = 3;
  const auto r = run_training(pc, s.model, s.windows, 1);
  const auto path = std::filesystem::temp_directory_path() / "aia_log_test.jsonl";
  write_training_log(path, r.log);
  std::ifstream is(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<std::size_t>(), n);
    EXPECT_DOUBLE_EQ(j.at("loss").get<double>(), r.log[n].loss);
    ++n;
  }
  EXPECT_EQ(n, 3u);
  std::filesystem::remove(path);
}
