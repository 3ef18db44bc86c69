#include <cstdio>
#include <fstream>

#include "aia/attack.hpp"
#include "aia/error.hpp"
#include "aia/tensor_io.hpp"

namespace aia {

ModelFingerprint fingerprint(const TransformerModel& model) {
  return ModelFingerprint{to_json(model.config()), model.parameter_hash()};
}

ShadowDataset build_shadow_dataset(const TransformerModel& shadow_model, const Corpus& public_corpus,
                                   const Vocab& vocab, std::size_t layer_cut, std::size_t window_length) {
  const auto& c = shadow_model.config();
  if (layer_cut < 1 || layer_cut > c.n_layers) {
    throw IndexError("shadow dataset: layer cut " + std::to_string(layer_cut) + " outside [1, " +
                     std::to_string(c.n_layers) + "]");
  }
  if (public_corpus.size() == 0) throw ContractError("shadow dataset: empty public corpus");
  const std::size_t length = window_length == 0 ? c.max_seq_len : window_length;

  const std::uint64_t before = shadow_model.parameter_hash();
  ShadowDataset ds;
  ds.layer_cut = layer_cut;
  ds.shadow = ModelFingerprint{to_json(c), before};
  NoGradScope no_grad;
  for (const auto& w : make_corpus_windows(public_corpus, vocab, length)) {
    ShadowPair p;
    p.activation = forward_prefix(shadow_model, w.input, layer_cut);
    p.labels = w.input;
    p.document = w.document;
    p.window = w.index;
    ds.pairs.push_back(std::move(p));
  }
  if (ds.pairs.empty()) throw ContractError("shadow dataset: public corpus produced no windows");
  if (shadow_model.parameter_hash() != before) throw ContractError("shadow dataset: shadow model was modified");
  return ds;
}

void save_shadow_dataset(const std::filesystem::path& dir, const ShadowDataset& ds) {
  std::filesystem::create_directories(dir);
  nlohmann::json index;
  index["layer_cut"] = ds.layer_cut;
  index["shadow"] = {{"config", ds.shadow.config}, {"parameter_hash", hex64(ds.shadow.parameter_hash)}};
  auto pairs = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "pair_%06zu.aiat", i);
    save_tensor(dir / name, ds.pairs[i].activation);
    pairs.push_back({{"file", name},
                     {"labels", ds.pairs[i].labels},
                     {"document", ds.pairs[i].document},
                     {"window", ds.pairs[i].window}});
  }
  index["pairs"] = pairs;
  std::ofstream os(dir / "index.json");
  if (!os) throw IoError("cannot write shadow index in " + dir.string());
  os << index.dump(1) << '\n';
}

ShadowDataset load_shadow_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "index.json");
  if (!is) throw IoError("no shadow index in " + dir.string());
  const auto index = nlohmann::json::parse(is);
  ShadowDataset ds;
  ds.layer_cut = index.at("layer_cut").get<std::size_t>();
  ds.shadow.config = index.at("shadow").at("config");
  ds.shadow.parameter_hash = std::stoull(index.at("shadow").at("parameter_hash").get<std::string>(), nullptr, 16);
  for (const auto& p : index.at("pairs")) {
    ShadowPair pair;
    pair.activation = load_tensor(dir / p.at("file").get<std::string>());
    pair.labels = p.at("labels").get<Tokens>();
    pair.document = p.at("document").get<std::size_t>();
    pair.window = p.at("window").get<std::size_t>();
    if (pair.activation.ndim() != 2 || pair.activation.rows() != pair.labels.size()) {
      throw IoError("shadow pair " + p.at("file").get<std::string>() + " is not position-aligned");
    }
    ds.pairs.push_back(std::move(pair));
  }
  return ds;
}

}  // namespace aia
