#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "scpr/model/config.hpp"

namespace scpr::detail {

inline bool is_content_token(int id) noexcept { return id != kBosId && id != kPadId; }

/// Where each distinct content word of one sequence occurs, words listed in
/// order of first occurrence.
struct Occurrences {
  std::vector<int> words;
  std::vector<std::uint32_t> first;
  std::vector<std::vector<std::uint32_t>> positions;

  /// Number of distinct words occurring at positions <= t.
  std::size_t count_upto(std::size_t t) const {
    return static_cast<std::size_t>(
        std::upper_bound(first.begin(), first.end(), static_cast<std::uint32_t>(t)) -
        first.begin());
  }

  /// Positions <= t of word index w.
  std::span<const std::uint32_t> positions_upto(std::size_t w, std::size_t t) const {
    const auto& p = positions[w];
    auto end = std::upper_bound(p.begin(), p.end(), static_cast<std::uint32_t>(t));
    return {p.data(), static_cast<std::size_t>(end - p.begin())};
  }

  static Occurrences of(std::span<const int> tokens) {
    Occurrences occ;
    std::unordered_map<int, std::size_t> index;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const int id = tokens[t];
      if (!is_content_token(id)) continue;
      auto [it, fresh] = index.emplace(id, occ.words.size());
      if (fresh) {
        occ.words.push_back(id);
        occ.first.push_back(static_cast<std::uint32_t>(t));
        occ.positions.emplace_back();
      }
      occ.positions[it->second].push_back(static_cast<std::uint32_t>(t));
    }
    return occ;
  }
};

}  // namespace scpr::detail
