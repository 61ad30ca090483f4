#include "scpr/heads/position.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "occurrences.hpp"
#include "scpr/simd/kernels.hpp"

namespace scpr {
namespace {

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  return simd::dot<T>(a.data(), b.data(), a.size());
}

template <typename T>
std::vector<T> softmax(std::span<const T> x) {
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : x) mx = std::max(mx, v);
  std::vector<T> p(x.size());
  T s{0};
  for (std::size_t i = 0; i < x.size(); ++i) s += (p[i] = std::exp(x[i] - mx));
  for (auto& v : p) v /= s;
  return p;
}

template <typename T>
T gelu(T v) {
  const T c = T(0.7978845608028654);
  return T(0.5) * v * (T(1) + std::tanh(c * (v + T(0.044715) * v * v * v)));
}

template <typename T>
T sigmoid(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <typename T>
void check_embedding(std::span<const T> f, const Tensor<T>& w) {
  if (w.cols() != f.size())
    throw DimensionError("embedding width " + std::to_string(w.cols()) +
                         " does not match projected feature width " + std::to_string(f.size()));
}

template <typename T>
T local_term(const HeadProjections<T>& proj, std::string_view name, std::span<const T> q,
             const LocalEmbeddingTable<T>& local, int id) {
  if (!proj.has(name)) return T{0};
  const auto f = proj.apply(name, q);
  return dot<T>(f, local.table.row(static_cast<std::size_t>(id)));
}

}  // namespace

template <typename T>
bool HeadProjections<T>::has(std::string_view name) const {
  return params_->find("head." + std::string(name) + ".weight") != nullptr;
}

template <typename T>
const Tensor<T>& HeadProjections<T>::tensor(std::string_view name) const {
  const auto* p = params_->find("head." + std::string(name));
  if (p == nullptr) throw ConfigError("head parameter '" + std::string(name) + "' not present");
  return p->value;
}

template <typename T>
std::vector<T> HeadProjections<T>::apply(std::string_view name, std::span<const T> x) const {
  const Tensor<T>& w = tensor(std::string(name) + ".weight");
  const Tensor<T>& b = tensor(std::string(name) + ".bias");
  if (w.cols() != x.size())
    throw DimensionError("projection " + std::string(name) + " expects width " +
                         std::to_string(w.cols()) + ", got " + std::to_string(x.size()));
  std::vector<T> y(w.rows());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = dot<T>(w.row(i), x) + b[i];
  return y;
}

template <typename T>
std::vector<T> build_context_feature(std::span<const T> h, std::span<const T> block,
                                     const HeadProjections<T>& proj, bool use_mi) {
  std::vector<T> q(h.begin(), h.end());
  if (!use_mi) return q;
  const Tensor<T>& w = proj.tensor("L_h.weight");
  if (block.size() != w.cols())
    throw DimensionError("Mi block has " + std::to_string(block.size()) + " values, L_h expects " +
                         std::to_string(w.cols()));
  for (T v : proj.apply("L_h", block)) q.push_back(gelu(v));
  return q;
}

template <typename T>
std::vector<T> standard_logits(std::span<const T> q, const Tensor<T>& w,
                               const HeadProjections<T>& proj) {
  const auto f = proj.apply("L_V", q);
  check_embedding<T>(f, w);
  std::vector<T> logits(w.rows());
  simd::gemm<T>(1, w.rows(), f.size(), {f.data(), f.size(), 1}, {w.data(), 1, w.cols()},
                logits.data(), w.rows(), false);
  return logits;
}

template <typename T>
LocalEmbeddingTable<T> local_embedding_table(const Tensor<T>& features, std::span<const int> ids,
                                             std::size_t vocab, const HeadProjections<T>& proj,
                                             std::string_view name) {
  if (features.rows() != ids.size())
    throw DimensionError("local table: " + std::to_string(features.rows()) + " features for " +
                         std::to_string(ids.size()) + " ids");
  const std::size_t d = proj.tensor(std::string(name) + ".weight").rows();
  LocalEmbeddingTable<T> out{Tensor<T>::matrix(vocab, d), std::vector<std::size_t>(vocab, 0)};
  std::vector<std::vector<T>> projected;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw IndexError("local table id " + std::to_string(ids[i]) + " out of range");
    ++out.counts[static_cast<std::size_t>(ids[i])];
    projected.push_back(proj.apply(name, features.row(i)));
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto id = static_cast<std::size_t>(ids[i]);
    const T inv = T(1) / static_cast<T>(out.counts[id]);
    for (std::size_t c = 0; c < d; ++c) out.table.at(id, c) += projected[i][c] * inv;
  }
  return out;
}

template <typename T>
std::vector<T> cepr_logits(std::span<const T> q, const Tensor<T>& w,
                           const VocabPartition& partition, const LocalEmbeddingTable<T>& local_dec,
                           const LocalEmbeddingTable<T>* local_enc,
                           const HeadProjections<T>& proj) {
  std::vector<T> logits = standard_logits(q, w, proj);
  if (partition.vocab_size() != logits.size() ||
      logits_fingerprint<T>(logits) != partition.fingerprint)
    throw ConsistencyError("partition was built from different default logits");
  std::vector<T> f_c, f_e, f_r1, f_r2;
  for (std::size_t x = 0; x < logits.size(); ++x) {
    const auto row = w.row(x);
    switch (partition.branch[x]) {
      case Branch::kDefault:
        break;
      case Branch::kContext:
        if (f_c.empty()) f_c = proj.apply("L_C", q);
        logits[x] = dot<T>(f_c, row) + local_term(proj, "L_PD", q, local_dec, static_cast<int>(x));
        break;
      case Branch::kEncoder:
        if (local_enc == nullptr) throw ModeError("encoder partition without encoder states");
        if (f_e.empty()) f_e = proj.apply("L_E", q);
        logits[x] = dot<T>(f_e, row) + local_term(proj, "L_PE", q, *local_enc, static_cast<int>(x));
        break;
      case Branch::kRerank1:
        if (f_r1.empty()) f_r1 = proj.apply("L_R1", q);
        logits[x] = dot<T>(f_r1, row);
        break;
      case Branch::kRerank2:
        if (f_r2.empty()) f_r2 = proj.apply("L_R2", q);
        logits[x] = dot<T>(f_r2, row);
        break;
    }
  }
  return logits;
}

template <typename T>
std::vector<T> cpr_logits(std::span<const T> q, const Tensor<T>& w, const VocabPartition& partition,
                          const LocalEmbeddingTable<T>& local, const HeadProjections<T>& proj) {
  return cepr_logits<T>(q, w, partition, local, nullptr, proj);
}

template <typename T>
std::vector<T> softmax_p_logits(std::span<const T> q, const Tensor<T>& w,
                                std::span<const int> context_ids,
                                const LocalEmbeddingTable<T>& local,
                                const HeadProjections<T>& proj) {
  std::vector<T> logits = standard_logits(q, w, proj);
  std::vector<int> ctx(context_ids.begin(), context_ids.end());
  std::sort(ctx.begin(), ctx.end());
  ctx.erase(std::unique(ctx.begin(), ctx.end()), ctx.end());
  const auto f = proj.apply("L_PD", q);
  for (int id : ctx) {
    if (id < 0 || static_cast<std::size_t>(id) >= logits.size())
      throw IndexError("context id " + std::to_string(id) + " out of range");
    logits[static_cast<std::size_t>(id)] += dot<T>(f, local.table.row(static_cast<std::size_t>(id)));
  }
  return logits;
}

template <typename T>
std::vector<T> mos_probs(std::span<const T> q, const Tensor<T>& w, const HeadProjections<T>& proj,
                         std::size_t components) {
  if (components == 0) throw ConfigError("mixture needs at least one component");
  const auto gate = softmax<T>(proj.apply("mos.gate", q));
  if (gate.size() != components)
    throw DimensionError("mixture gate has " + std::to_string(gate.size()) + " outputs, expected " +
                         std::to_string(components));
  std::vector<T> probs(w.rows(), T{0});
  for (std::size_t c = 0; c < components; ++c) {
    const auto f = proj.apply("mos.L_" + std::to_string(c), q);
    check_embedding<T>(f, w);
    std::vector<T> logits(w.rows());
    for (std::size_t x = 0; x < w.rows(); ++x) logits[x] = dot<T>(f, w.row(x));
    const auto p = softmax<T>(logits);
    for (std::size_t x = 0; x < probs.size(); ++x) probs[x] += gate[c] * p[x];
  }
  return probs;
}

namespace {

template <typename T>
std::vector<std::size_t> valid_sources(const Tensor<T>& source, std::span<const int> ids) {
  if (source.rows() != ids.size() && !(ids.empty() && source.empty()))
    throw DimensionError("pointer source has " + std::to_string(source.rows()) + " states for " +
                         std::to_string(ids.size()) + " ids");
  std::vector<std::size_t> rows;
  for (std::size_t j = 0; j < ids.size(); ++j)
    if (detail::is_content_token(ids[j])) rows.push_back(j);
  return rows;
}

}  // namespace

template <typename T>
std::vector<T> copynet_probs(std::span<const T> q, const Tensor<T>& w, const Tensor<T>& source,
                             std::span<const int> source_ids, const HeadProjections<T>& proj) {
  const auto logits = standard_logits(q, w, proj);
  const auto rows = valid_sources(source, source_ids);
  std::vector<T> scores;
  if (!rows.empty()) {
    const auto f = proj.apply("L_PE", q);
    const T b = proj.tensor("b")[0];
    for (std::size_t j : rows) scores.push_back(dot<T>(f, proj.apply("L_LE", source.row(j))) + b);
  }
  T shift = -std::numeric_limits<T>::infinity();
  for (T v : logits) shift = std::max(shift, v);
  for (T v : scores) shift = std::max(shift, v);
  std::vector<T> mass(logits.size());
  for (std::size_t x = 0; x < logits.size(); ++x) mass[x] = std::exp(logits[x] - shift);
  for (std::size_t i = 0; i < rows.size(); ++i)
    mass[static_cast<std::size_t>(source_ids[rows[i]])] += std::exp(scores[i] - shift);
  T total{0};
  for (T v : mass) total += v;
  if (!std::isfinite(total) || total <= T(0)) throw NumericError("copy mass overflowed");
  for (auto& v : mass) v /= total;
  return mass;
}

template <typename T>
std::vector<T> pointer_generator_probs(std::span<const T> q, std::span<const T> h,
                                       const Tensor<T>& w, const Tensor<T>& source,
                                       std::span<const int> source_ids,
                                       const HeadProjections<T>& proj) {
  auto probs = softmax<T>(standard_logits(q, w, proj));
  const auto rows = valid_sources(source, source_ids);
  if (rows.empty()) return probs;
  const T p_gen = sigmoid(dot<T>(proj.tensor("ptr_q").span(), h) + proj.tensor("b_ptr")[0]);
  const auto f = proj.apply("L_PE", q);
  const auto& v = proj.tensor("v");
  const auto& bvec = proj.tensor("b_vec");
  std::vector<T> scores;
  for (std::size_t j : rows) {
    const auto hj = proj.apply("L_LE", source.row(j));
    T e{0};
    for (std::size_t c = 0; c < f.size(); ++c) e += v[c] * std::tanh(f[c] + hj[c] + bvec[c]);
    scores.push_back(e);
  }
  const auto attn = softmax<T>(scores);
  for (auto& p : probs) p *= p_gen;
  for (std::size_t i = 0; i < rows.size(); ++i)
    probs[static_cast<std::size_t>(source_ids[rows[i]])] += (T(1) - p_gen) * attn[i];
  return probs;
}

template <typename T>
std::vector<T> pointer_sentinel_probs(std::span<const T> q, std::span<const T> h,
                                      const Tensor<T>& w, const Tensor<T>& source,
                                      std::span<const int> source_ids,
                                      const HeadProjections<T>& proj) {
  auto probs = softmax<T>(standard_logits(q, w, proj));
  const auto rows = valid_sources(source, source_ids);
  std::vector<T> z{dot<T>(proj.tensor("sentinel_q").span(), h)};
  if (!rows.empty()) {
    const auto f = proj.apply("L_PE", q);
    const T b = proj.tensor("b")[0];
    for (std::size_t j : rows) {
      auto u = proj.apply("L_LE", source.row(j));
      for (auto& x : u) x = std::tanh(x);
      z.push_back(dot<T>(f, u) + b);
    }
  }
  const auto a = softmax<T>(z);
  for (auto& p : probs) p *= a[0];
  for (std::size_t i = 0; i < rows.size(); ++i)
    probs[static_cast<std::size_t>(source_ids[rows[i]])] += a[i + 1];
  return probs;
}

#define SCPR_INSTANTIATE_POSITION(T)                                                            \
  template class HeadProjections<T>;                                                            \
  template std::vector<T> build_context_feature<T>(std::span<const T>, std::span<const T>,      \
                                                   const HeadProjections<T>&, bool);            \
  template std::vector<T> standard_logits<T>(std::span<const T>, const Tensor<T>&,              \
                                             const HeadProjections<T>&);                        \
  template LocalEmbeddingTable<T> local_embedding_table<T>(                                     \
      const Tensor<T>&, std::span<const int>, std::size_t, const HeadProjections<T>&,           \
      std::string_view);                                                                        \
  template std::vector<T> cpr_logits<T>(std::span<const T>, const Tensor<T>&,                   \
                                        const VocabPartition&, const LocalEmbeddingTable<T>&,   \
                                        const HeadProjections<T>&);                             \
  template std::vector<T> cepr_logits<T>(std::span<const T>, const Tensor<T>&,                  \
                                         const VocabPartition&, const LocalEmbeddingTable<T>&,  \
                                         const LocalEmbeddingTable<T>*,                         \
                                         const HeadProjections<T>&);                            \
  template std::vector<T> softmax_p_logits<T>(std::span<const T>, const Tensor<T>&,             \
                                              std::span<const int>,                             \
                                              const LocalEmbeddingTable<T>&,                    \
                                              const HeadProjections<T>&);                       \
  template std::vector<T> mos_probs<T>(std::span<const T>, const Tensor<T>&,                    \
                                       const HeadProjections<T>&, std::size_t);                 \
  template std::vector<T> copynet_probs<T>(std::span<const T>, const Tensor<T>&,                \
                                           const Tensor<T>&, std::span<const int>,              \
                                           const HeadProjections<T>&);                          \
  template std::vector<T> pointer_generator_probs<T>(std::span<const T>, std::span<const T>,    \
                                                     const Tensor<T>&, const Tensor<T>&,        \
                                                     std::span<const int>,                      \
                                                     const HeadProjections<T>&);                \
  template std::vector<T> pointer_sentinel_probs<T>(std::span<const T>, std::span<const T>,     \
                                                    const Tensor<T>&, const Tensor<T>&,         \
                                                    std::span<const int>,                       \
                                                    const HeadProjections<T>&);

SCPR_INSTANTIATE_POSITION(float)
SCPR_INSTANTIATE_POSITION(double)

#undef SCPR_INSTANTIATE_POSITION

}  // namespace scpr
