#pragma once

#include <cstddef>
#include <vector>

namespace scpr {

inline constexpr int kBosId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kPadId = 2;
inline constexpr int kReservedIds = 3;

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t max_seq_len = 256;
  bool seq2seq = false;
  bool tie_embeddings = true;

  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

/// Tokenised sequences laid out row-major as batch x seq_len. Row t of a
/// sequence holds input token tokens[t] and the id to predict at that
/// position, targets[t] (-1 where no prediction is scored). tokens[0] of each
/// sequence is BOS.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<int> tokens;
  std::vector<int> targets;

  /// Encoder input (seq2seq only), batch x enc_len, padded with PAD.
  std::size_t enc_len = 0;
  std::vector<int> enc_tokens;

  std::size_t rows() const noexcept { return batch * seq_len; }
  /// Throws DimensionError when the vectors disagree with the extents.
  void validate() const;
};

}  // namespace scpr
