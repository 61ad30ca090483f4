#pragma once
// GPT-2 style pre-layer-norm transformer with learned absolute positions, and
// an encoder-decoder variant whose decoder blocks add cross-attention.

#include <cstdint>
#include <random>
#include <vector>

#include "scpr/core/graph.hpp"
#include "scpr/model/config.hpp"

namespace scpr {

using Rng = std::mt19937_64;

template <typename T>
struct TransformerOutput {
  /// layers[0] is the embedding output, layers[l] the residual stream after
  /// block l, and layers.back() the final layer-normed state h^M. All are
  /// (batch*seq_len) x d_model.
  std::vector<Var<T>> layers;
  /// Encoder final states, (batch*enc_len) x d_model; invalid when the model
  /// is decoder-only.
  Var<T> encoder;
};

template <typename T>
class Transformer {
 public:
  /// Registers parameters under "model." and initialises them from rng.
  Transformer(const ModelConfig& cfg, ParameterSet<T>& params, Rng& rng);

  const ModelConfig& config() const noexcept { return cfg_; }

  /// Decoder-only forward pass; runs the encoder first in seq2seq mode.
  TransformerOutput<T> forward(Graph<T>& g, const TokenBatch& batch) const;

  /// Encoder states only. Throws ModeError for decoder-only models.
  Var<T> encode(Graph<T>& g, const TokenBatch& batch) const;

  Parameter<T>& token_embedding() const noexcept { return *tok_emb_; }
  /// Same Parameter as token_embedding() when embeddings are tied.
  Parameter<T>& output_embedding() const noexcept { return *out_emb_; }

 private:
  struct Linear {
    Parameter<T>* w;
    Parameter<T>* b;
  };
  struct Norm {
    Parameter<T>* gamma;
    Parameter<T>* beta;
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct Block {
    Norm ln1;
    Attention self;
    Norm ln_cross;
    Attention cross;
    Norm ln2;
    Linear fc, proj;
  };

  Linear make_linear(ParameterSet<T>& ps, const std::string& name, std::size_t out,
                     std::size_t in, Rng& rng);
  Norm make_norm(ParameterSet<T>& ps, const std::string& name);
  Attention make_attention(ParameterSet<T>& ps, const std::string& name, Rng& rng);
  Block make_block(ParameterSet<T>& ps, const std::string& name, bool cross, Rng& rng);

  Var<T> apply(Graph<T>& g, const Linear& l, Var<T> x) const;
  Var<T> apply(Graph<T>& g, const Norm& n, Var<T> x) const;
  Var<T> attend(Graph<T>& g, const Attention& a, Var<T> x, Var<T> memory,
                const std::vector<std::size_t>& key_valid, std::size_t batch, std::size_t tq,
                std::size_t tk, bool causal) const;
  Var<T> run_block(Graph<T>& g, const Block& blk, Var<T> x, Var<T> memory,
                   const std::vector<std::size_t>& memory_valid, const TokenBatch& batch,
                   bool causal, bool cross) const;
  Var<T> embed(Graph<T>& g, const std::vector<int>& ids, std::size_t seq_len) const;

  ModelConfig cfg_;
  Parameter<T>* tok_emb_ = nullptr;
  Parameter<T>* out_emb_ = nullptr;
  Parameter<T>* pos_emb_ = nullptr;
  std::vector<Block> blocks_;
  Norm ln_f_{};
  std::vector<Block> enc_blocks_;
  Norm enc_ln_f_{};
};

}  // namespace scpr
