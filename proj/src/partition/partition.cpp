#include "scpr/partition/partition.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <string>

#include "scpr/core/error.hpp"

namespace scpr {
namespace {

std::vector<int> normalise_ids(std::span<const int> ids, std::size_t vocab, const char* what) {
  std::vector<int> out(ids.begin(), ids.end());
  for (int id : out)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw IndexError(std::string(what) + " id " + std::to_string(id) + " outside [0, " +
                       std::to_string(vocab) + ")");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void label(VocabPartition& p, const std::vector<int>& ids, Branch b) {
  for (int id : ids)
    if (p.branch[static_cast<std::size_t>(id)] == Branch::kDefault)
      p.branch[static_cast<std::size_t>(id)] = b;
}

}  // namespace

std::string_view branch_name(Branch b) noexcept {
  switch (b) {
    case Branch::kContext: return "CONTEXT";
    case Branch::kEncoder: return "ENCODER";
    case Branch::kRerank1: return "RERANK1";
    case Branch::kRerank2: return "RERANK2";
    case Branch::kDefault: break;
  }
  return "DEFAULT";
}

template <typename T>
std::vector<int> topk_ids(std::span<const T> scores, std::size_t k) {
  const std::size_t v = scores.size();
  k = std::min(k, v);
  std::vector<int> ids(v);
  std::iota(ids.begin(), ids.end(), 0);
  if (k == 0) return {};
  if (k < v) {
    auto better = [&](int a, int b) {
      const T sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
      return sa > sb || (sa == sb && a < b);
    };
    std::nth_element(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k - 1), ids.end(),
                     better);
    ids.resize(k);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

template <typename T>
std::uint64_t logits_fingerprint(std::span<const T> logits) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(logits.data());
  for (std::size_t i = 0; i < logits.size_bytes(); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename T>
VocabPartition build_cpr_partition(std::span<const T> logits_v, std::span<const T> logits_r2,
                                   std::span<const int> context_ids, std::size_t k1,
                                   std::size_t k2) {
  if (k1 > k2)
    throw ConfigError("reranker sizes require k1 <= k2, got k1=" + std::to_string(k1) +
                      " k2=" + std::to_string(k2));
  const std::size_t vocab = logits_v.size();
  VocabPartition p;
  p.branch.assign(vocab, Branch::kDefault);
  p.fingerprint = logits_fingerprint(logits_v);
  p.context_set = normalise_ids(context_ids, vocab, "context");
  p.w2 = topk_ids(logits_v, k2);
  if (k1 > 0) {
    if (logits_r2.size() != vocab)
      throw DimensionError("build_cpr_partition: second reranker logits have " +
                           std::to_string(logits_r2.size()) + " entries for vocabulary " +
                           std::to_string(vocab));
    std::vector<T> best(vocab);
    for (std::size_t i = 0; i < vocab; ++i) best[i] = std::max(logits_v[i], logits_r2[i]);
    p.w1 = topk_ids(std::span<const T>(best), k1);
  }
  label(p, p.context_set, Branch::kContext);
  label(p, p.w1, Branch::kRerank1);
  label(p, p.w2, Branch::kRerank2);
  return p;
}

template <typename T>
VocabPartition build_cepr_partition(std::span<const T> logits_v, std::span<const int> context_ids,
                                    std::span<const int> encoder_ids, std::size_t k1) {
  const std::size_t vocab = logits_v.size();
  VocabPartition p;
  p.branch.assign(vocab, Branch::kDefault);
  p.fingerprint = logits_fingerprint(logits_v);
  p.context_set = normalise_ids(context_ids, vocab, "context");
  p.encoder_set = normalise_ids(encoder_ids, vocab, "encoder");
  p.w1 = topk_ids(logits_v, k1);
  label(p, p.context_set, Branch::kContext);
  label(p, p.encoder_set, Branch::kEncoder);
  label(p, p.w1, Branch::kRerank1);
  return p;
}

#define SCPR_INSTANTIATE_PARTITION(T)                                                          \
  template std::vector<int> topk_ids<T>(std::span<const T>, std::size_t);                      \
  template std::uint64_t logits_fingerprint<T>(std::span<const T>);                            \
  template VocabPartition build_cpr_partition<T>(std::span<const T>, std::span<const T>,       \
                                                 std::span<const int>, std::size_t,            \
                                                 std::size_t);                                 \
  template VocabPartition build_cepr_partition<T>(std::span<const T>, std::span<const int>,    \
                                                  std::span<const int>, std::size_t);

SCPR_INSTANTIATE_PARTITION(float)
SCPR_INSTANTIATE_PARTITION(double)

#undef SCPR_INSTANTIATE_PARTITION

}  // namespace scpr
