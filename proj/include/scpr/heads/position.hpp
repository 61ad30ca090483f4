#pragma once
// Single-position evaluation of every head, written directly against the
// parameter tensors without the autodiff graph. Used for inspection and as an
// independent cross-check of the batched heads.

#include <span>
#include <string_view>
#include <vector>

#include "scpr/core/graph.hpp"
#include "scpr/partition/partition.hpp"

namespace scpr {

/// Read-only access to the "head." parameters of a model.
template <typename T>
class HeadProjections {
 public:
  explicit HeadProjections(const ParameterSet<T>& params) : params_(&params) {}

  /// True when head.<name>.weight exists.
  bool has(std::string_view name) const;
  /// W x + b of projection head.<name>. Throws ConfigError when missing.
  std::vector<T> apply(std::string_view name, std::span<const T> x) const;
  /// Parameter head.<name>.
  const Tensor<T>& tensor(std::string_view name) const;

 private:
  const ParameterSet<T>* params_;
};

template <typename T>
struct LocalEmbeddingTable {
  /// V x d; row x is the mean projected feature over the occurrences of x.
  Tensor<T> table;
  std::vector<std::size_t> counts;
};

/// h ⊕ gelu(L_h(block)) with use_mi, h otherwise. block is the flattened
/// (rows x cols x d) grid ordered by layer offset then position offset.
template <typename T>
std::vector<T> build_context_feature(std::span<const T> h, std::span<const T> block,
                                     const HeadProjections<T>& proj, bool use_mi);

template <typename T>
std::vector<T> standard_logits(std::span<const T> q, const Tensor<T>& w,
                               const HeadProjections<T>& proj);

/// Row ids[i] of the table averages projection head.<name> applied to row i
/// of features.
template <typename T>
LocalEmbeddingTable<T> local_embedding_table(const Tensor<T>& features, std::span<const int> ids,
                                             std::size_t vocab, const HeadProjections<T>& proj,
                                             std::string_view name = "L_LD");

/// Throws ConsistencyError when the partition was built from other logits.
template <typename T>
std::vector<T> cpr_logits(std::span<const T> q, const Tensor<T>& w, const VocabPartition& partition,
                          const LocalEmbeddingTable<T>& local, const HeadProjections<T>& proj);

/// Throws ModeError when local_enc is null.
template <typename T>
std::vector<T> cepr_logits(std::span<const T> q, const Tensor<T>& w,
                           const VocabPartition& partition, const LocalEmbeddingTable<T>& local_dec,
                           const LocalEmbeddingTable<T>* local_enc,
                           const HeadProjections<T>& proj);

template <typename T>
std::vector<T> softmax_p_logits(std::span<const T> q, const Tensor<T>& w,
                                std::span<const int> context_ids,
                                const LocalEmbeddingTable<T>& local,
                                const HeadProjections<T>& proj);

template <typename T>
std::vector<T> mos_probs(std::span<const T> q, const Tensor<T>& w, const HeadProjections<T>& proj,
                         std::size_t components);

/// source holds one state per row; source_ids the matching token ids (BOS and
/// PAD entries are skipped).
template <typename T>
std::vector<T> copynet_probs(std::span<const T> q, const Tensor<T>& w, const Tensor<T>& source,
                             std::span<const int> source_ids, const HeadProjections<T>& proj);

template <typename T>
std::vector<T> pointer_generator_probs(std::span<const T> q, std::span<const T> h,
                                       const Tensor<T>& w, const Tensor<T>& source,
                                       std::span<const int> source_ids,
                                       const HeadProjections<T>& proj);

template <typename T>
std::vector<T> pointer_sentinel_probs(std::span<const T> q, std::span<const T> h,
                                      const Tensor<T>& w, const Tensor<T>& source,
                                      std::span<const int> source_ids,
                                      const HeadProjections<T>& proj);

}  // namespace scpr
