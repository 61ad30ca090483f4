#pragma once
// Dynamic vocabulary partitions. Case precedence is
//   CONTEXT > ENCODER > RERANK1 > RERANK2 > DEFAULT
// with top-k sets computed over the full vocabulary.

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace scpr {

enum class Branch : std::uint8_t { kDefault, kContext, kEncoder, kRerank1, kRerank2 };

std::string_view branch_name(Branch b) noexcept;

struct VocabPartition {
  std::vector<Branch> branch;
  /// Sorted, duplicate-free id sets.
  std::vector<int> context_set;
  std::vector<int> encoder_set;
  std::vector<int> w1;
  std::vector<int> w2;
  /// Hash of the default-head logits the partition was derived from.
  std::uint64_t fingerprint = 0;

  std::size_t vocab_size() const noexcept { return branch.size(); }
};

/// The k largest scores, ties broken towards the smaller id, returned in
/// ascending id order. k >= V yields every id.
template <typename T>
std::vector<int> topk_ids(std::span<const T> scores, std::size_t k);

/// FNV-1a over the raw bytes of the values.
template <typename T>
std::uint64_t logits_fingerprint(std::span<const T> logits);

/// Requires k1 <= k2. logits_r2 is consulted only when k1 > 0 and may be
/// empty otherwise.
template <typename T>
VocabPartition build_cpr_partition(std::span<const T> logits_v, std::span<const T> logits_r2,
                                   std::span<const int> context_ids, std::size_t k1,
                                   std::size_t k2);

template <typename T>
VocabPartition build_cepr_partition(std::span<const T> logits_v, std::span<const int> context_ids,
                                    std::span<const int> encoder_ids, std::size_t k1);

}  // namespace scpr
