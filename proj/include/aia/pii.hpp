#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace aia {

enum class PiiType { Name, Phone, Email, Fax, Birthday, Ssn, Address, Job, Bitcoin, Uuid };

inline constexpr std::array<PiiType, 10> kAllPiiTypes = {
    PiiType::Name,    PiiType::Phone, PiiType::Email, PiiType::Fax,     PiiType::Birthday,
    PiiType::Ssn,     PiiType::Address, PiiType::Job, PiiType::Bitcoin, PiiType::Uuid};

const char* to_string(PiiType type);
// Throws ContractError for names outside the ten supported types.
PiiType pii_type_from_string(std::string_view name);

struct PiiRecord {
  std::string name;
  std::string phone;
  std::string email;
  std::string fax;
  std::string birthday;
  std::string ssn;
  std::string address;
  std::string job;
  std::string bitcoin;
  std::string uuid;
  std::string rendered;
  int template_id = 0;

  const std::string& value(PiiType type) const;
};

// `n` synthetic records, deterministic in `seed`. Field formats:
//   phone/fax ddd-ddd-dddd, ssn ddd-dd-dddd, birthday YYYY-MM-DD (1940-2005),
//   email lowercase(name without spaces) + 2-4 digits + "@" + domain,
//   bitcoin "1"|"3" + 25-33 base58 chars, uuid 8-4-4-4-12 lowercase hex,
//   address number + street + suffix, job a title of one to three words.
std::vector<PiiRecord> generate_pii_dataset(std::size_t n, std::uint64_t seed);

// Every symbol the generator can emit; lets a vocabulary cover PII text
// before any record is drawn.
std::string pii_charset();

nlohmann::json to_json(const PiiRecord& r);
PiiRecord pii_record_from_json(const nlohmann::json& j);

}  // namespace aia
