#include "scpr/heads/head.hpp"

#include <algorithm>
#include <string>

#include "occurrences.hpp"
#include "scpr/core/ops.hpp"
#include "scpr/partition/partition.hpp"
#include "scpr/simd/kernels.hpp"

namespace scpr {

namespace {

struct KindName {
  HeadKind kind;
  std::string_view name;
};

constexpr KindName kKindNames[] = {
    {HeadKind::kSoftmax, "softmax"},       {HeadKind::kMos, "mos"},
    {HeadKind::kContext, "c"},             {HeadKind::kRerank, "r"},
    {HeadKind::kPointer, "p"},             {HeadKind::kCpr, "cpr"},
    {HeadKind::kCepr, "cepr"},             {HeadKind::kCopyNet, "copynet"},
    {HeadKind::kPointerGenerator, "pointer_gen"}, {HeadKind::kPointerSentinel, "pointer_sentinel"},
};

constexpr double kLocalInitScale = 1e-10;
constexpr double kProbFloor = 1e-12;

}  // namespace

std::string_view head_kind_name(HeadKind kind) noexcept {
  for (const auto& kn : kKindNames)
    if (kn.kind == kind) return kn.name;
  return "softmax";
}

HeadKind parse_head_kind(std::string_view name) {
  for (const auto& kn : kKindNames)
    if (kn.name == name) return kn.kind;
  throw ConfigError("unknown head kind '" + std::string(name) + "'");
}

void HeadConfig::validate(const ModelConfig& model) const {
  if (use_mi) {
    if (mi_rows == 0 || mi_cols == 0) throw ConfigError("head.mi_rows and head.mi_cols must be >= 1");
    if (mi_rows > model.n_layers + 1)
      throw ConfigError("head.mi_rows (" + std::to_string(mi_rows) + ") exceeds the " +
                        std::to_string(model.n_layers + 1) + " available layer states");
  }
  switch (kind) {
    case HeadKind::kRerank:
      if (k2 == 0) throw ConfigError("reranker head requires head.k2 >= 1");
      [[fallthrough]];
    case HeadKind::kCpr:
      if (k1 > k2)
        throw ConfigError("reranker sizes require k1 <= k2, got k1=" + std::to_string(k1) +
                          " k2=" + std::to_string(k2));
      break;
    case HeadKind::kCepr:
      if (!model.seq2seq) throw ModeError("the CEPR head requires a seq2seq model");
      break;
    case HeadKind::kMos:
      if (mos_components == 0) throw ConfigError("head.mos_components must be >= 1");
      break;
    default:
      break;
  }
}

std::string HeadConfig::label() const {
  std::string s;
  switch (kind) {
    case HeadKind::kSoftmax: s = "Softmax"; break;
    case HeadKind::kMos: s = "MoS-" + std::to_string(mos_components); break;
    case HeadKind::kContext: s = "Softmax + C"; break;
    case HeadKind::kRerank:
      s = k1 == 0 ? "Softmax + R:" + std::to_string(k2)
                  : "Softmax + R:" + std::to_string(k1) + "," + std::to_string(k2);
      break;
    case HeadKind::kPointer: s = "Softmax + P"; break;
    case HeadKind::kCpr:
      s = "Softmax + CPR:" + std::to_string(k1) + "," + std::to_string(k2);
      break;
    case HeadKind::kCepr: s = "Softmax + CEPR:" + std::to_string(k1); break;
    case HeadKind::kCopyNet: s = "CopyNet"; break;
    case HeadKind::kPointerGenerator: s = "Pointer Generator"; break;
    case HeadKind::kPointerSentinel: s = "Pointer Sentinel"; break;
  }
  if (use_mi) s += " + Mi";
  return s;
}

template <typename T>
typename OutputHead<T>::Proj OutputHead<T>::make_proj(ParameterSet<T>& ps, const std::string& name,
                                                      std::size_t out, std::size_t in,
                                                      double scale) {
  Tensor<T> w = Tensor<T>::matrix(out, in);
  for (std::size_t i = 0; i < std::min(out, in); ++i) w.at(i, i) = static_cast<T>(scale);
  Proj p;
  p.w = &ps.add("head." + name + ".weight", std::move(w));
  p.b = &ps.add("head." + name + ".bias", Tensor<T>(Shape{out}));
  return p;
}

template <typename T>
OutputHead<T>::OutputHead(const HeadConfig& cfg, const ModelConfig& model, ParameterSet<T>& ps,
                          Rng& rng)
    : cfg_(cfg), model_(model), d_(model.d_model) {
  cfg_.validate(model_);
  dq_ = cfg_.use_mi ? 2 * d_ : d_;
  std::normal_distribution<double> noise(0.0, 0.02);
  auto random_tensor = [&](Shape shape) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(noise(rng));
    return t;
  };

  if (cfg_.use_mi) l_h_ = make_proj(ps, "L_h", d_, cfg_.mi_rows * cfg_.mi_cols * d_, 1.0);
  const HeadKind k = cfg_.kind;
  if (k != HeadKind::kMos) l_v_ = make_proj(ps, "L_V", d_, dq_, 1.0);
  switch (k) {
    case HeadKind::kSoftmax:
      break;
    case HeadKind::kMos:
      for (std::size_t c = 0; c < cfg_.mos_components; ++c) {
        Proj p = make_proj(ps, "mos.L_" + std::to_string(c), d_, dq_, 1.0);
        for (auto& v : p.w->value.values()) v += static_cast<T>(noise(rng));
        mos_.push_back(p);
      }
      mos_gate_.w = &ps.add("head.mos.gate.weight", random_tensor({cfg_.mos_components, dq_}));
      mos_gate_.b = &ps.add("head.mos.gate.bias", Tensor<T>(Shape{cfg_.mos_components}));
      break;
    case HeadKind::kContext:
      l_c_ = make_proj(ps, "L_C", d_, dq_, 1.0);
      break;
    case HeadKind::kRerank:
      if (cfg_.k1 > 0) l_r1_ = make_proj(ps, "L_R1", d_, dq_, 1.0);
      l_r2_ = make_proj(ps, "L_R2", d_, dq_, 1.0);
      break;
    case HeadKind::kPointer:
      l_pd_ = make_proj(ps, "L_PD", d_, dq_, kLocalInitScale);
      l_ld_ = make_proj(ps, "L_LD", d_, dq_, kLocalInitScale);
      break;
    case HeadKind::kCpr:
      l_c_ = make_proj(ps, "L_C", d_, dq_, 1.0);
      l_pd_ = make_proj(ps, "L_PD", d_, dq_, kLocalInitScale);
      l_ld_ = make_proj(ps, "L_LD", d_, dq_, kLocalInitScale);
      if (cfg_.k1 > 0) l_r1_ = make_proj(ps, "L_R1", d_, dq_, 1.0);
      if (cfg_.k2 > 0) l_r2_ = make_proj(ps, "L_R2", d_, dq_, 1.0);
      break;
    case HeadKind::kCepr:
      l_c_ = make_proj(ps, "L_C", d_, dq_, 1.0);
      l_e_ = make_proj(ps, "L_E", d_, dq_, 1.0);
      l_pd_ = make_proj(ps, "L_PD", d_, dq_, kLocalInitScale);
      l_ld_ = make_proj(ps, "L_LD", d_, dq_, kLocalInitScale);
      l_pe_ = make_proj(ps, "L_PE", d_, dq_, kLocalInitScale);
      l_le_ = make_proj(ps, "L_LE", d_, d_, kLocalInitScale);
      if (cfg_.k1 > 0) l_r1_ = make_proj(ps, "L_R1", d_, dq_, 1.0);
      break;
    case HeadKind::kCopyNet:
      l_pe_ = make_proj(ps, "L_PE", d_, dq_, kLocalInitScale);
      l_le_ = make_proj(ps, "L_LE", d_, d_, kLocalInitScale);
      bias_ = &ps.add("head.b", Tensor<T>(Shape{1}, static_cast<T>(cfg_.copy_bias)));
      break;
    case HeadKind::kPointerGenerator:
      l_pe_ = make_proj(ps, "L_PE", d_, dq_, kLocalInitScale);
      l_le_ = make_proj(ps, "L_LE", d_, d_, kLocalInitScale);
      attn_v_ = &ps.add("head.v", random_tensor({d_}));
      attn_b_ = &ps.add("head.b_vec", Tensor<T>(Shape{d_}));
      ptr_gate_ = &ps.add("head.ptr_q", random_tensor({1, d_}));
      ptr_bias_ = &ps.add("head.b_ptr", Tensor<T>(Shape{1}, static_cast<T>(cfg_.ptr_bias)));
      break;
    case HeadKind::kPointerSentinel:
      l_pe_ = make_proj(ps, "L_PE", d_, dq_, kLocalInitScale);
      l_le_ = make_proj(ps, "L_LE", d_, d_, kLocalInitScale);
      sentinel_ = &ps.add("head.sentinel_q", random_tensor({1, d_}));
      bias_ = &ps.add("head.b", Tensor<T>(Shape{1}, static_cast<T>(cfg_.sentinel_bias)));
      break;
  }
}

template <typename T>
Var<T> OutputHead<T>::apply(Graph<T>& g, const Proj& p, Var<T> x) const {
  return ops::linear(x, g.parameter(*p.w), g.parameter(*p.b));
}

template <typename T>
Var<T> OutputHead<T>::context_feature(Graph<T>& g, const HeadInput<T>& in) const {
  const auto& layers = in.states.layers;
  if (layers.empty()) throw DimensionError("head input carries no hidden states");
  Var<T> h = layers.back();
  if (h.cols() != d_)
    throw DimensionError("hidden states have width " + std::to_string(h.cols()) +
                         ", head expects " + std::to_string(d_));
  if (!cfg_.use_mi) return h;
  if (cfg_.mi_rows > layers.size())
    throw DimensionError("Mi block needs " + std::to_string(cfg_.mi_rows) + " layer states, got " +
                         std::to_string(layers.size()));
  const std::size_t top = layers.size() - 1;
  std::vector<Var<T>> parts;
  for (std::size_t m = 0; m < cfg_.mi_rows; ++m)
    for (std::size_t i = 0; i < cfg_.mi_cols; ++i)
      parts.push_back(i == 0 ? layers[top - m] : ops::shift_rows(layers[top - m], i, in.batch->seq_len));
  Var<T> block = ops::concat_cols(parts);
  return ops::concat_cols<T>({h, ops::gelu(apply(g, l_h_, block))});
}

template <typename T>
HeadOutput<T> OutputHead<T>::forward(Graph<T>& g, const HeadInput<T>& in) const {
  if (in.batch == nullptr) throw DimensionError("head input has no token batch");
  if (in.embedding.rows() != model_.vocab_size || in.embedding.cols() != d_)
    throw DimensionError("output embedding " + shape_string(in.embedding.shape()) +
                         " does not match vocabulary " + std::to_string(model_.vocab_size) +
                         " x " + std::to_string(d_));
  Var<T> q = context_feature(g, in);
  if (cfg_.kind == HeadKind::kMos) return mos_forward(g, in, q);
  if (is_logit_head(cfg_.kind)) return logit_forward(g, in, q);
  return pointer_forward(g, in, q);
}

template <typename T>
HeadOutput<T> OutputHead<T>::logit_forward(Graph<T>& g, const HeadInput<T>& in, Var<T> q) const {
  const TokenBatch& batch = *in.batch;
  const std::size_t seq = batch.seq_len, vocab = model_.vocab_size;
  const HeadKind kind = cfg_.kind;
  Var<T> w = in.embedding;
  Var<T> logits_v = ops::matmul_nt(apply(g, l_v_, q), w);
  HeadOutput<T> out;
  if (kind == HeadKind::kSoftmax) {
    out.logits = logits_v;
    out.log_probs = ops::log_softmax(logits_v);
    return out;
  }

  const bool uses_context = kind != HeadKind::kRerank;
  const bool partitioned =
      kind == HeadKind::kRerank || kind == HeadKind::kCpr || kind == HeadKind::kCepr;
  const bool cepr = kind == HeadKind::kCepr;
  const std::size_t k1 = partitioned ? cfg_.k1 : 0;
  const std::size_t k2 = partitioned && !cepr ? cfg_.k2 : 0;
  if (cepr && !in.states.encoder.valid()) throw ModeError("CEPR head needs encoder states");

  Var<T> f_r1 = k1 > 0 ? apply(g, l_r1_, q) : Var<T>{};
  Var<T> f_r2 = k2 > 0 ? apply(g, l_r2_, q) : Var<T>{};
  Tensor<T> logits_r2;
  if (k1 > 0 && !cepr) {
    logits_r2 = Tensor<T>::matrix(batch.rows(), vocab);
    simd::gemm<T>(batch.rows(), vocab, d_, {f_r2.value().data(), d_, 1},
                  {w.value().data(), 1, d_}, logits_r2.data(), vocab, false);
  }

  ops::EntryList e_c, e_e, e_r1, e_r2;
  ops::SegmentList s_c, s_e;
  std::vector<int> ctx_ids;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const auto dec = detail::Occurrences::of(
        std::span<const int>(batch.tokens).subspan(b * seq, seq));
    detail::Occurrences enc;
    std::vector<int> enc_ids;
    if (cepr) {
      enc = detail::Occurrences::of(
          std::span<const int>(batch.enc_tokens).subspan(b * batch.enc_len, batch.enc_len));
      enc_ids = enc.words;
    }
    for (std::size_t t = 0; t < seq; ++t) {
      const auto r = static_cast<std::uint32_t>(b * seq + t);
      const std::size_t n_ctx = uses_context ? dec.count_upto(t) : 0;
      for (std::size_t i = 0; i < n_ctx; ++i) {
        e_c.push(r, static_cast<std::uint32_t>(dec.words[i]));
        s_c.push(r, dec.positions_upto(i, t));
      }
      if (!partitioned) continue;
      ctx_ids.assign(dec.words.begin(), dec.words.begin() + static_cast<std::ptrdiff_t>(n_ctx));
      const auto lv = logits_v.value().row(r);
      const VocabPartition part =
          cepr ? build_cepr_partition<T>(lv, ctx_ids, enc_ids, k1)
               : build_cpr_partition<T>(lv, k1 > 0 ? logits_r2.row(r) : std::span<const T>{},
                                        ctx_ids, k1, k2);
      for (std::size_t i = 0; i < enc.words.size(); ++i)
        if (part.branch[static_cast<std::size_t>(enc.words[i])] == Branch::kEncoder) {
          e_e.push(r, static_cast<std::uint32_t>(enc.words[i]));
          s_e.push(r, enc.positions[i]);
        }
      for (int id : part.w1)
        if (part.branch[static_cast<std::size_t>(id)] == Branch::kRerank1)
          e_r1.push(r, static_cast<std::uint32_t>(id));
      for (int id : part.w2)
        if (part.branch[static_cast<std::size_t>(id)] == Branch::kRerank2)
          e_r2.push(r, static_cast<std::uint32_t>(id));
    }
  }

  std::vector<Var<T>> values;
  ops::EntryList all;
  const ops::BlockLayout self_layout{batch.batch, seq, seq};
  if (e_c.size() > 0) {
    Var<T> v = kind == HeadKind::kPointer ? ops::gather_entries(logits_v, e_c)
                                          : ops::row_dots(apply(g, l_c_, q), w, e_c);
    if (kind != HeadKind::kContext) {
      Var<T> local = ops::block_matmul_nt(apply(g, l_pd_, q), apply(g, l_ld_, q), self_layout);
      v = ops::add(v, ops::segment_mean(local, s_c));
    }
    values.push_back(v);
    all.append(e_c);
  }
  if (e_e.size() > 0) {
    const ops::BlockLayout enc_layout{batch.batch, seq, batch.enc_len};
    Var<T> local = ops::block_matmul_nt(apply(g, l_pe_, q), apply(g, l_le_, in.states.encoder),
                                        enc_layout);
    values.push_back(ops::add(ops::row_dots(apply(g, l_e_, q), w, e_e), ops::segment_mean(local, s_e)));
    all.append(e_e);
  }
  if (e_r1.size() > 0) {
    values.push_back(ops::row_dots(f_r1, w, e_r1));
    all.append(e_r1);
  }
  if (e_r2.size() > 0) {
    values.push_back(ops::row_dots(f_r2, w, e_r2));
    all.append(e_r2);
  }

  out.logits = values.empty() ? logits_v
                              : ops::overwrite_entries(
                                    logits_v, all,
                                    values.size() == 1 ? values.front() : ops::concat_cols(values));
  out.log_probs = ops::log_softmax(out.logits);
  return out;
}

template <typename T>
HeadOutput<T> OutputHead<T>::mos_forward(Graph<T>& g, const HeadInput<T>& in, Var<T> q) const {
  Var<T> w = in.embedding;
  Var<T> gate = ops::softmax(apply(g, mos_gate_, q));
  Var<T> mix;
  for (std::size_t c = 0; c < mos_.size(); ++c) {
    Var<T> p = ops::softmax(ops::matmul_nt(apply(g, mos_[c], q), w));
    Var<T> term = ops::mul_col(p, ops::slice_cols(gate, c, c + 1));
    mix = c == 0 ? term : ops::add(mix, term);
  }
  HeadOutput<T> out;
  out.log_probs = ops::log_floor(mix, static_cast<T>(kProbFloor));
  return out;
}

template <typename T>
HeadOutput<T> OutputHead<T>::pointer_forward(Graph<T>& g, const HeadInput<T>& in, Var<T> q) const {
  const TokenBatch& batch = *in.batch;
  const std::size_t seq = batch.seq_len, rows = batch.rows(), vocab = model_.vocab_size;
  const bool from_encoder = model_.seq2seq;
  if (from_encoder && !in.states.encoder.valid())
    throw ModeError("pointer head on a seq2seq model needs encoder states");
  Var<T> h = in.states.layers.back();
  Var<T> source = from_encoder ? in.states.encoder : h;
  const std::size_t src_len = from_encoder ? batch.enc_len : seq;
  const std::vector<int>& src_tokens = from_encoder ? batch.enc_tokens : batch.tokens;

  std::vector<std::uint8_t> mask(rows * src_len, 0);
  std::vector<int> col_ids(rows * src_len, -1);
  std::vector<std::uint8_t> has_source(rows, 0);
  bool any_source = false;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t b = r / seq, t = r % seq;
    const std::size_t limit = from_encoder ? src_len : t + 1;
    for (std::size_t j = 0; j < limit; ++j) {
      const int id = src_tokens[b * src_len + j];
      if (!detail::is_content_token(id)) continue;
      mask[r * src_len + j] = 1;
      col_ids[r * src_len + j] = id;
      has_source[r] = 1;
      any_source = true;
    }
  }

  Var<T> w = in.embedding;
  Var<T> logits_v = ops::matmul_nt(apply(g, l_v_, q), w);
  HeadOutput<T> out;
  if (!any_source) {
    out.log_probs = ops::log_softmax(logits_v);
    return out;
  }
  const ops::BlockLayout layout{batch.batch, seq, src_len};
  const std::span<const int> ids(col_ids);
  Var<T> probs;
  switch (cfg_.kind) {
    case HeadKind::kCopyNet: {
      Var<T> s = ops::add_scalar(
          ops::block_matmul_nt(apply(g, l_pe_, q), apply(g, l_le_, source), layout),
          g.parameter(*bias_));
      std::vector<std::uint8_t> full(rows * (vocab + src_len), 1);
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(mask.data() + r * src_len, src_len, full.data() + r * (vocab + src_len) + vocab);
      Var<T> p = ops::masked_softmax(ops::concat_cols<T>({logits_v, s}),
                                     std::span<const std::uint8_t>(full));
      probs = ops::scatter_add_cols(ops::slice_cols(p, 0, vocab),
                                    ops::slice_cols(p, vocab, vocab + src_len), ids);
      break;
    }
    case HeadKind::kPointerGenerator: {
      Var<T> scores = ops::additive_scores(apply(g, l_pe_, q), apply(g, l_le_, source),
                                           g.parameter(*attn_b_), g.parameter(*attn_v_), layout);
      Var<T> attn = ops::masked_softmax(scores, std::span<const std::uint8_t>(mask));
      Var<T> p_gen = ops::sigmoid(
          ops::add_bias(ops::matmul_nt(h, g.parameter(*ptr_gate_)), g.parameter(*ptr_bias_)));
      p_gen = ops::fill_rows(p_gen, std::span<const std::uint8_t>(has_source), T{1});
      probs = ops::scatter_add_cols(ops::mul_col(ops::softmax(logits_v), p_gen),
                                    ops::mul_col(attn, ops::affine(p_gen, T{-1}, T{1})), ids);
      break;
    }
    default: {
      Var<T> sentinel = ops::matmul_nt(h, g.parameter(*sentinel_));
      Var<T> ptr = ops::add_scalar(
          ops::block_matmul_nt(apply(g, l_pe_, q), ops::tanh(apply(g, l_le_, source)), layout),
          g.parameter(*bias_));
      std::vector<std::uint8_t> full(rows * (1 + src_len), 1);
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(mask.data() + r * src_len, src_len, full.data() + r * (1 + src_len) + 1);
      Var<T> z = ops::masked_softmax(ops::concat_cols<T>({sentinel, ptr}),
                                     std::span<const std::uint8_t>(full));
      probs = ops::scatter_add_cols(ops::mul_col(ops::softmax(logits_v), ops::slice_cols(z, 0, 1)),
                                    ops::slice_cols(z, 1, 1 + src_len), ids);
      break;
    }
  }
  out.log_probs = ops::log_floor(probs, static_cast<T>(kProbFloor));
  return out;
}

template class OutputHead<float>;
template class OutputHead<double>;

}  // namespace scpr
