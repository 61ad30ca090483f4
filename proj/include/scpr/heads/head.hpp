#pragma once
// Next-token output heads. Logit-space heads (softmax, C, R, P, CPR, CEPR)
// produce logits and pass them through log_softmax; probability-space heads
// (MoS, CopyNet, pointer generator, pointer sentinel) mix distributions and
// take a floored log.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "scpr/core/graph.hpp"
#include "scpr/model/config.hpp"
#include "scpr/model/transformer.hpp"

namespace scpr {

enum class HeadKind {
  kSoftmax,
  kMos,
  kContext,
  kRerank,
  kPointer,
  kCpr,
  kCepr,
  kCopyNet,
  kPointerGenerator,
  kPointerSentinel,
};

/// Lower-case config spelling: softmax, mos, c, r, p, cpr, cepr, copynet,
/// pointer_gen, pointer_sentinel.
std::string_view head_kind_name(HeadKind kind) noexcept;
/// Throws ConfigError for unknown names.
HeadKind parse_head_kind(std::string_view name);

inline bool is_logit_head(HeadKind k) noexcept {
  return k != HeadKind::kMos && k != HeadKind::kCopyNet && k != HeadKind::kPointerGenerator &&
         k != HeadKind::kPointerSentinel;
}

struct HeadConfig {
  HeadKind kind = HeadKind::kSoftmax;
  std::size_t k1 = 20;
  std::size_t k2 = 100;
  bool use_mi = false;
  std::size_t mi_rows = 3;
  std::size_t mi_cols = 3;
  std::size_t mos_components = 3;
  double copy_bias = -20.0;
  double ptr_bias = 0.0;
  double sentinel_bias = 0.0;

  /// Throws ConfigError (or ModeError for encoder heads on decoder-only
  /// models) when the fields do not fit the kind or the model.
  void validate(const ModelConfig& model) const;
  /// Display name such as "Softmax + CPR:20,100 + Mi".
  std::string label() const;
};

template <typename T>
struct HeadInput {
  const TokenBatch* batch = nullptr;
  TransformerOutput<T> states;
  /// Output word embeddings, V x d.
  Var<T> embedding;
};

template <typename T>
struct HeadOutput {
  /// (batch*seq_len) x V log-probabilities.
  Var<T> log_probs;
  /// Final logits for logit-space heads; invalid otherwise.
  Var<T> logits;
};

template <typename T>
class OutputHead {
 public:
  /// Registers parameters under "head." with the prescribed initialisation.
  OutputHead(const HeadConfig& cfg, const ModelConfig& model, ParameterSet<T>& params, Rng& rng);

  const HeadConfig& config() const noexcept { return cfg_; }
  std::size_t feature_dim() const noexcept { return dq_; }

  HeadOutput<T> forward(Graph<T>& g, const HeadInput<T>& in) const;

  /// q = h ⊕ gelu(L_h(block)) with Mi, q = h otherwise.
  Var<T> context_feature(Graph<T>& g, const HeadInput<T>& in) const;

 private:
  struct Proj {
    Parameter<T>* w = nullptr;
    Parameter<T>* b = nullptr;
    bool present() const noexcept { return w != nullptr; }
  };

  Proj make_proj(ParameterSet<T>& ps, const std::string& name, std::size_t out, std::size_t in,
                 double scale);
  Var<T> apply(Graph<T>& g, const Proj& p, Var<T> x) const;

  HeadOutput<T> logit_forward(Graph<T>& g, const HeadInput<T>& in, Var<T> q) const;
  HeadOutput<T> mos_forward(Graph<T>& g, const HeadInput<T>& in, Var<T> q) const;
  HeadOutput<T> pointer_forward(Graph<T>& g, const HeadInput<T>& in, Var<T> q) const;

  HeadConfig cfg_;
  ModelConfig model_;
  std::size_t d_ = 0;
  std::size_t dq_ = 0;
  Proj l_h_, l_v_, l_c_, l_e_, l_pd_, l_pe_, l_r1_, l_r2_, l_ld_, l_le_;
  std::vector<Proj> mos_;
  Proj mos_gate_;
  Parameter<T>* bias_ = nullptr;
  Parameter<T>* ptr_gate_ = nullptr;
  Parameter<T>* ptr_bias_ = nullptr;
  Parameter<T>* attn_v_ = nullptr;
  Parameter<T>* attn_b_ = nullptr;
  Parameter<T>* sentinel_ = nullptr;
};

}  // namespace scpr
