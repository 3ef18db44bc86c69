#include "aia/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>

#include "aia/error.hpp"
#include "aia/tensor_io.hpp"

namespace aia {

namespace {
constexpr char kMagic[4] = {'A', 'I', 'A', 'C'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header{{"kind", ckpt.kind}, {"config", ckpt.config}, {"meta", ckpt.meta}};
  auto names = nlohmann::json::array();
  for (const auto& [name, _] : ckpt.tensors) names.push_back(name);
  header["tensors"] = names;
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [_, t] : ckpt.tensors) write_tensor(os, t);
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError("bad checkpoint magic in " + path.string());
  if (read_u32(is) != kVersion) throw IoError("unsupported checkpoint version in " + path.string());
  const auto len = read_u64(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw IoError("truncated checkpoint header");
  auto header = nlohmann::json::parse(text);
  Checkpoint ckpt;
  ckpt.kind = header.at("kind").get<std::string>();
  ckpt.config = header.at("config");
  ckpt.meta = header.value("meta", nlohmann::json::object());
  for (const auto& name : header.at("tensors")) ckpt.tensors.emplace_back(name.get<std::string>(), read_tensor(is));
  return ckpt;
}

void assign_parameters(const std::vector<std::pair<std::string, Tensor>>& named,
                       const std::vector<std::pair<std::string, Tensor>>& values) {
  std::map<std::string, Tensor> by_name(values.begin(), values.end());
  for (const auto& [name, t] : named) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint is missing tensor '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_to_string(it->second.shape()) +
                       ", expected " + shape_to_string(t.shape()));
    }
    Tensor dst = t;
    std::copy(it->second.data().begin(), it->second.data().end(), dst.mutable_data().begin());
  }
  if (by_name.size() != named.size()) throw IoError("checkpoint holds unexpected tensors");
}

void save_model(const std::filesystem::path& path, const TransformerModel& model, const nlohmann::json& meta) {
  Checkpoint c{"transformer", to_json(model.config()), meta, model.named_parameters()};
  c.meta["parameter_hash"] = hex64(model.parameter_hash());
  write_checkpoint(path, c);
}

TransformerModel load_model(const std::filesystem::path& path) {
  auto c = read_checkpoint(path);
  if (c.kind != "transformer") throw IoError(path.string() + " is not a transformer checkpoint");
  auto model = init_model(model_config_from_json(c.config), 0);
  assign_parameters(model.named_parameters(), c.tensors);
  return model;
}

void save_attack_model(const std::filesystem::path& path, const AttackModel& model, const nlohmann::json& meta) {
  Checkpoint c{"attack", to_json(model.config()), meta, model.named_parameters()};
  c.meta["parameter_hash"] = hex64(model.parameter_hash());
  write_checkpoint(path, c);
}

AttackModel load_attack_model(const std::filesystem::path& path) {
  auto c = read_checkpoint(path);
  if (c.kind != "attack") throw IoError(path.string() + " is not an attack-model checkpoint");
  auto model = init_attack_model(model_config_from_json(c.config), 0);
  assign_parameters(model.named_parameters(), c.tensors);
  return model;
}

}  // namespace aia
