#pragma once
// Differentiable operations. All matrices are row-major; "rows" of a rank-1
// tensor is 1.

#include <cstdint>
#include <span>
#include <vector>

#include "scpr/core/graph.hpp"

namespace scpr::ops {

/// Flat list of (row, column) coordinates into a matrix.
struct EntryList {
  std::vector<std::uint32_t> rows;
  std::vector<std::uint32_t> cols;

  std::size_t size() const noexcept { return rows.size(); }
  void push(std::uint32_t r, std::uint32_t c) {
    rows.push_back(r);
    cols.push_back(c);
  }
  void append(const EntryList& other) {
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
    cols.insert(cols.end(), other.cols.begin(), other.cols.end());
  }
};

/// Segments over the columns of one row each; segment e covers
/// cols[offsets[e] .. offsets[e+1]) of row rows[e].
struct SegmentList {
  std::vector<std::uint32_t> rows;
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::uint32_t> cols;

  std::size_t size() const noexcept { return rows.size(); }
  void push(std::uint32_t row, std::span<const std::uint32_t> members) {
    rows.push_back(row);
    cols.insert(cols.end(), members.begin(), members.end());
    offsets.push_back(static_cast<std::uint32_t>(cols.size()));
  }
};

/// Block structure of attention-like operations: `batch` independent blocks,
/// each pairing `query_len` rows with `key_len` rows.
struct BlockLayout {
  std::size_t batch = 1;
  std::size_t query_len = 0;
  std::size_t key_len = 0;
};

struct AttentionLayout {
  BlockLayout blocks;
  std::size_t heads = 1;
  bool causal = false;
  /// Valid key count per block; empty means every key is valid.
  std::vector<std::size_t> key_valid;
};

// Linear algebra ------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
/// a * b^T
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b);
/// x * w^T (+ bias). w is out x in, bias has `out` elements.
template <typename T>
Var<T> linear(Var<T> x, Var<T> w);
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias);
/// Per block b: a_b * b_b^T with a_b = rows [b*query_len, (b+1)*query_len) of a
/// and b_b the matching key_len rows of b. Result is (batch*query_len) x key_len.
template <typename T>
Var<T> block_matmul_nt(Var<T> a, Var<T> b, BlockLayout layout);

// Elementwise ---------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
/// alpha * a + beta
template <typename T>
Var<T> affine(Var<T> a, T alpha, T beta);
/// a + bias broadcast over rows.
template <typename T>
Var<T> add_bias(Var<T> a, Var<T> bias);
/// a + s where s holds a single element.
template <typename T>
Var<T> add_scalar(Var<T> a, Var<T> s);
/// a_ij * c_i where c is rows x 1.
template <typename T>
Var<T> mul_col(Var<T> a, Var<T> c);
/// a_ij - values_i (values are constants).
template <typename T>
Var<T> sub_row_values(Var<T> a, std::span<const T> values);
/// Rows with keep[i] == 0 are replaced by `fill`.
template <typename T>
Var<T> fill_rows(Var<T> a, std::span<const std::uint8_t> keep, T fill);

template <typename T>
Var<T> gelu(Var<T> x);
template <typename T>
Var<T> tanh(Var<T> x);
template <typename T>
Var<T> sigmoid(Var<T> x);
template <typename T>
Var<T> exp(Var<T> x);
/// log(max(x, floor)); gradient is zero where the floor is active.
template <typename T>
Var<T> log_floor(Var<T> x, T floor);

// Row-wise normalisers ------------------------------------------------------

template <typename T>
Var<T> log_softmax(Var<T> x);
template <typename T>
Var<T> softmax(Var<T> x);
/// Softmax over entries with mask != 0; fully masked rows become zero.
template <typename T>
Var<T> masked_softmax(Var<T> x, std::span<const std::uint8_t> mask);
/// a / rowsum(a)
template <typename T>
Var<T> normalize_rows(Var<T> a);
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));

// Reductions and losses -----------------------------------------------------

template <typename T>
Var<T> sum(Var<T> a);
template <typename T>
Var<T> row_sum(Var<T> a);
/// Mean of -logp[r, target[r]] over rows whose target is >= 0.
template <typename T>
Var<T> nll(Var<T> logp, std::span<const int> targets);
/// Mean over rows of -sum_x target[r,x] * logp[r,x].
template <typename T>
Var<T> soft_cross_entropy(Var<T> logp, const Tensor<T>& target);

// Indexing ------------------------------------------------------------------

template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const int> ids);

template <typename T>
struct ScatterMean {
  Var<T> mean;
  std::vector<std::size_t> counts;
};
/// Averages the rows of `values` sharing an id into a vocab x d table; ids
/// absent from the list give zero rows and count 0.
template <typename T>
ScatterMean<T> scatter_mean(Var<T> values, std::span<const int> ids, std::size_t vocab);

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end);
/// Within consecutive blocks of seq_len rows, row t takes row t - shift of the
/// same block, or zeros when t < shift.
template <typename T>
Var<T> shift_rows(Var<T> a, std::size_t shift, std::size_t seq_len);

/// out[e] = dot(a[rows[e]], b[cols[e]])
template <typename T>
Var<T> row_dots(Var<T> a, Var<T> b, const EntryList& entries);
template <typename T>
Var<T> gather_entries(Var<T> m, const EntryList& entries);
/// Copy of base with base[rows[e], cols[e]] replaced by values[e].
template <typename T>
Var<T> overwrite_entries(Var<T> base, const EntryList& entries, Var<T> values);
/// out[e] = mean of s[rows[e], c] over the segment's columns.
template <typename T>
Var<T> segment_mean(Var<T> s, const SegmentList& segments);
/// base + src scattered: out[r, col_ids[r*S+j]] += src[r, j] for col_ids >= 0.
template <typename T>
Var<T> scatter_add_cols(Var<T> base, Var<T> src, std::span<const int> col_ids);

// Attention -----------------------------------------------------------------

/// Multi-head scaled dot-product attention over blocks. q is
/// (batch*query_len) x d, k and v are (batch*key_len) x d.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionLayout& layout);

/// score[r, j] = v . tanh(f[r] + h[block(r)*key_len + j] + bias)
template <typename T>
Var<T> additive_scores(Var<T> f, Var<T> h, Var<T> bias, Var<T> v, BlockLayout layout);

}  // namespace scpr::ops
