#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "aia/ops.hpp"

namespace aia {

enum class CorpusRole { Public, Victim, Eval };

const char* to_string(CorpusRole role);
CorpusRole corpus_role_from_string(std::string_view s);

class Corpus {
 public:
  Corpus(std::string name, CorpusRole role, std::vector<std::string> documents);

  const std::string& name() const noexcept { return name_; }
  CorpusRole role() const noexcept { return role_; }
  const std::vector<std::string>& documents() const noexcept { return documents_; }
  std::size_t size() const noexcept { return documents_.size(); }

 private:
  std::string name_;
  CorpusRole role_;
  std::vector<std::string> documents_;
};

// UTF-8 text, one document per blank-line separated block. Lines inside a
// block are joined with single spaces.
Corpus load_corpus(const std::filesystem::path& path, std::string name, CorpusRole role);
std::vector<std::string> parse_documents(std::string_view text);

// Shuffles document indices under `seed` and cuts them by `fractions`
// (largest-remainder rounding). Parts keep the parent's role.
std::vector<Corpus> split_corpus(const Corpus& corpus, std::span<const double> fractions, std::uint64_t seed);

// Throws ContractError when a document appears in both corpora.
void require_disjoint(const Corpus& a, const Corpus& b);

// One training window of a document: `input` are content tokens, `target`
// the same stream shifted left by one, ending in EOS on the last window.
struct Window {
  std::size_t document = 0;
  std::size_t index = 0;  // window position within its document
  Tokens input;
  Tokens target;
};

// Cuts content ids (plus a trailing EOS) into windows of `length` with stride
// `length`.
std::vector<Window> make_windows(const Tokens& content, std::size_t length, std::size_t document = 0);

class Vocab;
std::vector<Window> make_corpus_windows(const Corpus& corpus, const Vocab& vocab, std::size_t length);

}  // namespace aia
