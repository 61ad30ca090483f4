#include "scpr/data/corpus.hpp"

#include <cctype>
#include <fstream>

#include "scpr/core/error.hpp"
#include "scpr/model/config.hpp"

namespace scpr {

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur += ch;
    }
  }
  flush();
  return out;
}

std::vector<std::string> read_documents(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus '" + path + "'");
  std::vector<std::string> docs;
  for (std::string line; std::getline(in, line);) {
    bool blank = true;
    for (char c : line) blank = blank && std::isspace(static_cast<unsigned char>(c));
    if (!blank) docs.push_back(std::move(line));
  }
  if (docs.empty()) throw DataError("corpus '" + path + "' contains no documents");
  return docs;
}

std::vector<std::vector<int>> encode_documents(const std::vector<std::string>& docs,
                                               const Vocab& vocab, std::size_t chunk) {
  if (chunk == 0) throw ConfigError("chunk length must be positive");
  std::vector<std::vector<int>> seqs;
  for (const auto& doc : docs) {
    const auto ids = vocab.encode(tokenize_words(doc));
    for (std::size_t b = 0; b < ids.size(); b += chunk) {
      std::vector<int> s{kBosId};
      s.insert(s.end(), ids.begin() + static_cast<std::ptrdiff_t>(b),
               ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), b + chunk)));
      seqs.push_back(std::move(s));
    }
  }
  if (seqs.empty()) throw DataError("corpus produced no tokens");
  return seqs;
}

Vocab build_vocab(const std::vector<std::string>& docs, std::size_t cap) {
  std::vector<std::vector<std::string>> toks;
  toks.reserve(docs.size());
  for (const auto& d : docs) toks.push_back(tokenize_words(d));
  return Vocab::build(toks, cap);
}

double unk_rate(const std::vector<std::vector<int>>& sequences) {
  std::size_t n = 0, unk = 0;
  for (const auto& s : sequences)
    for (std::size_t i = 1; i < s.size(); ++i) {
      ++n;
      unk += s[i] == kUnkId;
    }
  return n == 0 ? 0.0 : static_cast<double>(unk) / static_cast<double>(n);
}

}  // namespace scpr
