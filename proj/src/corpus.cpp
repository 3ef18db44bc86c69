#include "aia/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "aia/error.hpp"
#include "aia/vocab.hpp"

namespace aia {

const char* to_string(CorpusRole role) {
  switch (role) {
    case CorpusRole::Public: return "public";
    case CorpusRole::Victim: return "victim";
    case CorpusRole::Eval: return "eval";
  }
  return "?";
}

CorpusRole corpus_role_from_string(std::string_view s) {
  if (s == "public") return CorpusRole::Public;
  if (s == "victim") return CorpusRole::Victim;
  if (s == "eval") return CorpusRole::Eval;
  throw ConfigError("unknown corpus role '" + std::string(s) + "'");
}

Corpus::Corpus(std::string name, CorpusRole role, std::vector<std::string> documents)
    : name_(std::move(name)), role_(role), documents_(std::move(documents)) {
  if (documents_.empty()) throw ContractError("corpus '" + name_ + "' has no documents");
}

static std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

std::vector<std::string> parse_documents(std::string_view text) {
  std::vector<std::string> docs;
  std::string current;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = trim(text.substr(pos, nl - pos));
    if (line.empty()) {
      if (!current.empty()) docs.push_back(std::move(current));
      current.clear();
    } else {
      if (!current.empty()) current.push_back(' ');
      current.append(line);
    }
    pos = nl + 1;
  }
  if (!current.empty()) docs.push_back(std::move(current));
  return docs;
}

Corpus load_corpus(const std::filesystem::path& path, std::string name, CorpusRole role) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open corpus " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  auto docs = parse_documents(ss.str());
  if (docs.empty()) throw ConfigError("corpus " + path.string() + " contains no documents");
  return Corpus(std::move(name), role, std::move(docs));
}

std::vector<Corpus> split_corpus(const Corpus& corpus, std::span<const double> fractions, std::uint64_t seed) {
  if (fractions.empty()) throw ContractError("split_corpus: no fractions");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ContractError("split_corpus: fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("split_corpus: fractions must sum to 1");
  const std::size_t n = corpus.size();
  if (n < fractions.size()) throw ContractError("split_corpus: fewer documents than parts");

  // Largest-remainder apportionment, every part at least one document.
  std::vector<std::size_t> counts(fractions.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double exact = fractions[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) counts[remainders[k % remainders.size()].second] += 1;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    while (counts[i] == 0) {
      auto donor = std::max_element(counts.begin(), counts.end());
      *donor -= 1;
      counts[i] += 1;
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Corpus> parts;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(offset),
                                 order.begin() + static_cast<std::ptrdiff_t>(offset + counts[i]));
    std::sort(idx.begin(), idx.end());
    std::vector<std::string> docs;
    for (auto j : idx) docs.push_back(corpus.documents()[j]);
    parts.emplace_back(corpus.name() + "/" + std::to_string(i), corpus.role(), std::move(docs));
    offset += counts[i];
  }
  return parts;
}

void require_disjoint(const Corpus& a, const Corpus& b) {
  std::set<std::string_view> seen(a.documents().begin(), a.documents().end());
  for (const auto& d : b.documents()) {
    if (seen.count(d)) {
      throw ContractError("corpora '" + a.name() + "' and '" + b.name() + "' share a document");
    }
  }
}

std::vector<Window> make_windows(const Tokens& content, std::size_t length, std::size_t document) {
  if (length == 0) throw ContractError("make_windows: zero window length");
  std::vector<Window> windows;
  Tokens stream = content;
  stream.push_back(Vocab::kEos);
  // The input never contains the trailing EOS; it only ever appears as a target.
  for (std::size_t start = 0, index = 0; start + 1 < stream.size(); start += length, ++index) {
    const std::size_t end = std::min(start + length, stream.size() - 1);
    Window w;
    w.document = document;
    w.index = index;
    w.input.assign(stream.begin() + static_cast<std::ptrdiff_t>(start), stream.begin() + static_cast<std::ptrdiff_t>(end));
    w.target.assign(stream.begin() + static_cast<std::ptrdiff_t>(start + 1),
                    stream.begin() + static_cast<std::ptrdiff_t>(end + 1));
    windows.push_back(std::move(w));
  }
  return windows;
}

std::vector<Window> make_corpus_windows(const Corpus& corpus, const Vocab& vocab, std::size_t length) {
  std::vector<Window> all;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    auto ws = make_windows(vocab.encode_content(corpus.documents()[d]), length, d);
    all.insert(all.end(), std::make_move_iterator(ws.begin()), std::make_move_iterator(ws.end()));
  }
  return all;
}

}  // namespace aia
