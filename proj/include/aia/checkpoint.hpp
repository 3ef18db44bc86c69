#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "aia/model.hpp"

namespace aia {

// Checkpoint container: "AIAC", u32 version, u64 header length, a JSON header
// {kind, config, tensors: [names], meta}, then one AIAT tensor per name.
struct Checkpoint {
  std::string kind;  // "transformer" or "attack"
  nlohmann::json config;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

void save_model(const std::filesystem::path& path, const TransformerModel& model,
                const nlohmann::json& meta = nlohmann::json::object());
TransformerModel load_model(const std::filesystem::path& path);

void save_attack_model(const std::filesystem::path& path, const AttackModel& model,
                       const nlohmann::json& meta = nlohmann::json::object());
AttackModel load_attack_model(const std::filesystem::path& path);

// Copies tensor values by name into `named`; every name must be present with
// a matching shape.
void assign_parameters(const std::vector<std::pair<std::string, Tensor>>& named,
                       const std::vector<std::pair<std::string, Tensor>>& values);

}  // namespace aia
