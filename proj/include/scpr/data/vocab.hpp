#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace scpr {

/// Word <-> id map. Ids 0..2 are BOS, UNK and PAD.
class Vocab {
 public:
  static constexpr std::string_view kBos = "<bos>";
  static constexpr std::string_view kUnk = "<unk>";
  static constexpr std::string_view kPad = "<pad>";

  Vocab();

  /// Most frequent words first, ties broken lexicographically; keeps at most
  /// `cap` ids including the reserved ones (0 = no cap).
  static Vocab build(const std::vector<std::vector<std::string>>& docs, std::size_t cap = 0);

  /// One word per line in id order, reserved words first.
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  std::size_t size() const noexcept { return words_.size(); }
  bool contains(std::string_view word) const;
  /// UNK for unknown words.
  int id(std::string_view word) const;
  /// Throws IndexError for ids outside the vocabulary.
  const std::string& word(int id) const;
  const std::vector<std::string>& words() const noexcept { return words_; }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::string decode(const std::vector<int>& ids) const;

 private:
  int add(std::string word);

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace scpr
