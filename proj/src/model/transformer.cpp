#include "scpr/model/transformer.hpp"

#include <string>

#include "scpr/core/ops.hpp"

namespace scpr {

void ModelConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(kReservedIds))
    throw ConfigError("model.vocab_size must exceed the " + std::to_string(kReservedIds) +
                      " reserved ids");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    throw ConfigError("model.d_model (" + std::to_string(d_model) +
                      ") must be a positive multiple of model.n_heads (" +
                      std::to_string(n_heads) + ")");
  if (n_layers == 0) throw ConfigError("model.n_layers must be at least 1");
  if (max_seq_len == 0) throw ConfigError("model.max_seq_len must be at least 1");
}

void TokenBatch::validate() const {
  if (tokens.size() != batch * seq_len || targets.size() != batch * seq_len)
    throw DimensionError("token batch holds " + std::to_string(tokens.size()) + " tokens and " +
                         std::to_string(targets.size()) + " targets for " +
                         std::to_string(batch) + "x" + std::to_string(seq_len));
  if (enc_tokens.size() != batch * enc_len)
    throw DimensionError("token batch holds " + std::to_string(enc_tokens.size()) +
                         " encoder tokens for " + std::to_string(batch) + "x" +
                         std::to_string(enc_len));
}

namespace {

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

constexpr double kInitStd = 0.02;

}  // namespace

template <typename T>
typename Transformer<T>::Linear Transformer<T>::make_linear(ParameterSet<T>& ps,
                                                            const std::string& name,
                                                            std::size_t out, std::size_t in,
                                                            Rng& rng) {
  Linear l;
  l.w = &ps.add(name + ".weight", normal_tensor<T>({out, in}, kInitStd, rng));
  l.b = &ps.add(name + ".bias", Tensor<T>(Shape{out}));
  return l;
}

template <typename T>
typename Transformer<T>::Norm Transformer<T>::make_norm(ParameterSet<T>& ps,
                                                        const std::string& name) {
  Norm n;
  n.gamma = &ps.add(name + ".gamma", Tensor<T>(Shape{cfg_.d_model}, T{1}));
  n.beta = &ps.add(name + ".beta", Tensor<T>(Shape{cfg_.d_model}));
  return n;
}

template <typename T>
typename Transformer<T>::Attention Transformer<T>::make_attention(ParameterSet<T>& ps,
                                                                  const std::string& name,
                                                                  Rng& rng) {
  const std::size_t d = cfg_.d_model;
  return Attention{make_linear(ps, name + ".q", d, d, rng), make_linear(ps, name + ".k", d, d, rng),
                   make_linear(ps, name + ".v", d, d, rng), make_linear(ps, name + ".o", d, d, rng)};
}

template <typename T>
typename Transformer<T>::Block Transformer<T>::make_block(ParameterSet<T>& ps,
                                                          const std::string& name, bool cross,
                                                          Rng& rng) {
  const std::size_t d = cfg_.d_model;
  Block b{};
  b.ln1 = make_norm(ps, name + ".ln1");
  b.self = make_attention(ps, name + ".attn", rng);
  if (cross) {
    b.ln_cross = make_norm(ps, name + ".ln_cross");
    b.cross = make_attention(ps, name + ".cross", rng);
  }
  b.ln2 = make_norm(ps, name + ".ln2");
  b.fc = make_linear(ps, name + ".mlp.fc", 4 * d, d, rng);
  b.proj = make_linear(ps, name + ".mlp.proj", d, 4 * d, rng);
  return b;
}

template <typename T>
Transformer<T>::Transformer(const ModelConfig& cfg, ParameterSet<T>& params, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model;
  tok_emb_ = &params.add("model.tok_emb", normal_tensor<T>({cfg_.vocab_size, d}, kInitStd, rng));
  pos_emb_ = &params.add("model.pos_emb", normal_tensor<T>({cfg_.max_seq_len, d}, kInitStd, rng));
  out_emb_ = cfg_.tie_embeddings
                 ? tok_emb_
                 : &params.add("model.out_emb",
                               normal_tensor<T>({cfg_.vocab_size, d}, kInitStd, rng));
  if (cfg_.seq2seq) {
    for (std::size_t l = 0; l < cfg_.n_layers; ++l)
      enc_blocks_.push_back(make_block(params, "model.enc.block" + std::to_string(l), false, rng));
    enc_ln_f_ = make_norm(params, "model.enc.ln_f");
  }
  for (std::size_t l = 0; l < cfg_.n_layers; ++l)
    blocks_.push_back(make_block(params, "model.block" + std::to_string(l), cfg_.seq2seq, rng));
  ln_f_ = make_norm(params, "model.ln_f");
}

template <typename T>
Var<T> Transformer<T>::apply(Graph<T>& g, const Linear& l, Var<T> x) const {
  return ops::linear(x, g.parameter(*l.w), g.parameter(*l.b));
}

template <typename T>
Var<T> Transformer<T>::apply(Graph<T>& g, const Norm& n, Var<T> x) const {
  return ops::layer_norm(x, g.parameter(*n.gamma), g.parameter(*n.beta));
}

template <typename T>
Var<T> Transformer<T>::attend(Graph<T>& g, const Attention& a, Var<T> x, Var<T> memory,
                              const std::vector<std::size_t>& key_valid, std::size_t batch,
                              std::size_t tq, std::size_t tk, bool causal) const {
  ops::AttentionLayout layout{{batch, tq, tk}, cfg_.n_heads, causal, key_valid};
  auto ctx = ops::attention(apply(g, a.q, x), apply(g, a.k, memory), apply(g, a.v, memory), layout);
  return apply(g, a.o, ctx);
}

template <typename T>
Var<T> Transformer<T>::run_block(Graph<T>& g, const Block& blk, Var<T> x, Var<T> memory,
                                 const std::vector<std::size_t>& memory_valid,
                                 const TokenBatch& batch, bool causal, bool cross) const {
  const std::size_t t = x.rows() / batch.batch;
  const std::vector<std::size_t> self_valid =
      causal ? std::vector<std::size_t>{} : memory_valid;
  auto h = apply(g, blk.ln1, x);
  x = ops::add(x, attend(g, blk.self, h, h, self_valid, batch.batch, t, t, causal));
  if (cross) {
    h = apply(g, blk.ln_cross, x);
    x = ops::add(x, attend(g, blk.cross, h, memory, memory_valid, batch.batch, t, batch.enc_len,
                           false));
  }
  h = apply(g, blk.ln2, x);
  return ops::add(x, apply(g, blk.proj, ops::gelu(apply(g, blk.fc, h))));
}

template <typename T>
Var<T> Transformer<T>::embed(Graph<T>& g, const std::vector<int>& ids, std::size_t seq_len) const {
  if (seq_len > cfg_.max_seq_len)
    throw LengthError("sequence length " + std::to_string(seq_len) + " exceeds max_seq_len " +
                      std::to_string(cfg_.max_seq_len));
  std::vector<int> positions(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i % seq_len);
  return ops::add(ops::gather_rows(g.parameter(*tok_emb_), std::span<const int>(ids)),
                  ops::gather_rows(g.parameter(*pos_emb_), std::span<const int>(positions)));
}

namespace {

std::vector<std::size_t> encoder_valid(const TokenBatch& batch) {
  std::vector<std::size_t> valid(batch.batch, 0);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    std::size_t n = batch.enc_len;
    while (n > 0 && batch.enc_tokens[b * batch.enc_len + n - 1] == kPadId) --n;
    valid[b] = n;
  }
  return valid;
}

}  // namespace

template <typename T>
Var<T> Transformer<T>::encode(Graph<T>& g, const TokenBatch& batch) const {
  if (!cfg_.seq2seq) throw ModeError("encoder states requested from a decoder-only model");
  batch.validate();
  if (batch.enc_len == 0) return g.constant(Tensor<T>::matrix(0, cfg_.d_model));
  const auto valid = encoder_valid(batch);
  Var<T> x = embed(g, batch.enc_tokens, batch.enc_len);
  TokenBatch shape_only;
  shape_only.batch = batch.batch;
  for (const auto& blk : enc_blocks_) x = run_block(g, blk, x, x, valid, shape_only, false, false);
  return apply(g, enc_ln_f_, x);
}

template <typename T>
TransformerOutput<T> Transformer<T>::forward(Graph<T>& g, const TokenBatch& batch) const {
  batch.validate();
  if (batch.rows() == 0) throw DataError("empty token batch");
  TransformerOutput<T> out;
  std::vector<std::size_t> valid;
  if (cfg_.seq2seq) {
    out.encoder = encode(g, batch);
    valid = encoder_valid(batch);
  } else if (batch.enc_len != 0) {
    throw ModeError("encoder input supplied to a decoder-only model");
  }
  Var<T> x = embed(g, batch.tokens, batch.seq_len);
  out.layers.push_back(x);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    x = run_block(g, blocks_[l], x, out.encoder, valid, batch, true,
                  cfg_.seq2seq && batch.enc_len > 0);
    out.layers.push_back(x);
  }
  out.layers.back() = apply(g, ln_f_, x);
  return out;
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace scpr
