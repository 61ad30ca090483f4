#include "scpr/data/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "scpr/core/error.hpp"
#include "scpr/model/config.hpp"

namespace scpr {

Vocab::Vocab() {
  add(std::string(kBos));
  add(std::string(kUnk));
  add(std::string(kPad));
}

int Vocab::add(std::string word) {
  auto [it, fresh] = index_.emplace(word, static_cast<int>(words_.size()));
  if (!fresh) throw DataError("duplicate vocabulary entry '" + word + "'");
  words_.push_back(std::move(word));
  return it->second;
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& docs, std::size_t cap) {
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : docs)
    for (const auto& w : doc) ++counts[w];
  Vocab v;
  for (auto reserved : {kBos, kUnk, kPad}) counts.erase(std::string(reserved));
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (auto& [w, n] : ranked) {
    if (cap != 0 && v.size() >= cap) break;
    v.add(w);
  }
  return v;
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary file '" + path + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.size() < kReservedIds || lines[0] != kBos || lines[1] != kUnk || lines[2] != kPad)
    throw DataError("vocabulary file '" + path + "' does not start with " + std::string(kBos) +
                    ", " + std::string(kUnk) + ", " + std::string(kPad));
  Vocab v;
  for (std::size_t i = kReservedIds; i < lines.size(); ++i) {
    if (lines[i].empty()) throw DataError(path + ":" + std::to_string(i + 1) + ": empty word");
    v.add(lines[i]);
  }
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary file '" + path + "'");
  for (const auto& w : words_) out << w << '\n';
  if (!out) throw DataError("failed writing vocabulary file '" + path + "'");
}

bool Vocab::contains(std::string_view word) const { return index_.contains(std::string(word)); }

int Vocab::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(words_.size()));
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string s;
  for (int id : ids) {
    if (!s.empty()) s += ' ';
    s += word(id);
  }
  return s;
}

}  // namespace scpr
