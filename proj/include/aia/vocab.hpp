#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aia/ops.hpp"

namespace aia {

std::u32string utf8_decode(std::string_view text);
std::string utf8_encode(std::u32string_view text);
void utf8_append(std::string& out, char32_t cp);

class Corpus;

// Character-level vocabulary. Ids 0..3 are reserved for PAD, BOS, EOS and UNK;
// the remaining ids follow the symbols in codepoint order.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  Vocab() = default;
  // Symbols are de-duplicated and sorted.
  explicit Vocab(std::u32string symbols);

  std::size_t size() const noexcept { return kReserved + symbols_.size(); }
  const std::u32string& symbols() const noexcept { return symbols_; }
  TokenId id_of(char32_t symbol) const;  // kUnk when absent
  bool contains(char32_t symbol) const { return index_.count(symbol) != 0; }

  // BOS + one id per codepoint + EOS.
  Tokens encode(std::string_view text) const;
  // One id per codepoint, no reserved tokens.
  Tokens encode_content(std::string_view text) const;
  // Skips PAD/BOS/EOS; UNK renders as U+FFFD.
  std::string decode(std::span<const TokenId> ids) const;

  std::uint64_t fingerprint() const;

 private:
  std::u32string symbols_;
  std::map<char32_t, TokenId> index_;
};

Vocab build_vocab(std::span<const Corpus> corpora, std::string_view extra_symbols = {});

}  // namespace aia
