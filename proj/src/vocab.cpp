#include "aia/vocab.hpp"

#include <algorithm>

#include "aia/corpus.hpp"
#include "aia/error.hpp"

namespace aia {

std::u32string utf8_decode(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  std::size_t i = 0;
  const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
  while (i < text.size()) {
    const unsigned char c = byte(i);
    std::size_t len = 0;
    char32_t cp = 0;
    if (c < 0x80) {
      len = 1;
      cp = c;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    }
    bool ok = len != 0 && i + len <= text.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      if ((byte(i + k) & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (byte(i + k) & 0x3F);
    }
    if (!ok) {
      out.push_back(U'�');
      i += 1;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

void utf8_append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string utf8_encode(std::u32string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char32_t cp : text) utf8_append(out, cp);
  return out;
}

Vocab::Vocab(std::u32string symbols) : symbols_(std::move(symbols)) {
  std::sort(symbols_.begin(), symbols_.end());
  symbols_.erase(std::unique(symbols_.begin(), symbols_.end()), symbols_.end());
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    index_.emplace(symbols_[i], static_cast<TokenId>(kReserved + i));
  }
}

TokenId Vocab::id_of(char32_t symbol) const {
  auto it = index_.find(symbol);
  return it == index_.end() ? kUnk : it->second;
}

Tokens Vocab::encode_content(std::string_view text) const {
  Tokens ids;
  for (char32_t cp : utf8_decode(text)) ids.push_back(id_of(cp));
  return ids;
}

Tokens Vocab::encode(std::string_view text) const {
  Tokens ids{kBos};
  auto body = encode_content(text);
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(kEos);
  return ids;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= size()) {
      throw IndexError("decode: token id " + std::to_string(id) + " outside [0, " + std::to_string(size()) + ")");
    }
    if (id == kPad || id == kBos || id == kEos) continue;
    if (id == kUnk) {
      utf8_append(out, U'�');
      continue;
    }
    utf8_append(out, symbols_[static_cast<std::size_t>(id) - kReserved]);
  }
  return out;
}

std::uint64_t Vocab::fingerprint() const {
  return hash_bytes(utf8_encode(symbols_));
}

Vocab build_vocab(std::span<const Corpus> corpora, std::string_view extra_symbols) {
  std::size_t docs = 0;
  for (const auto& c : corpora) docs += c.size();
  if (docs == 0) throw ContractError("build_vocab: no documents");
  std::u32string all = utf8_decode(extra_symbols);
  for (const auto& c : corpora) {
    for (const auto& d : c.documents()) all += utf8_decode(d);
  }
  return Vocab(std::move(all));
}

}  // namespace aia
