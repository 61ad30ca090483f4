#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "scpr/data/synth.hpp"
#include "scpr/model/config.hpp"

namespace scpr {

/// k indices drawn uniformly with replacement from [0, n); a pure function of
/// (seed, step).
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::uint64_t seed,
                                        std::size_t step);

/// Sequences [BOS, w_1 .. w_n] become inputs [BOS .. w_{n-1}] and targets
/// [w_1 .. w_n], right-padded with PAD / -1 to the longest pick.
TokenBatch make_lm_batch(const std::vector<std::vector<int>>& sequences,
                         std::span<const std::size_t> picks);

/// A record encoded for a model vocabulary.
struct EncodedRecord {
  /// BOS followed by the context ids.
  std::vector<int> tokens;
  std::vector<std::pair<int, double>> target;
  std::vector<int> forbidden;
  std::string split;
};

/// Throws DataError when a target or forbidden word is not in the vocabulary.
EncodedRecord encode_record(const SyntheticRecord& r, const Vocab& vocab);
std::vector<EncodedRecord> encode_records(const std::vector<SyntheticRecord>& records,
                                          const Vocab& vocab);

/// Records right-padded into one batch; the answer is predicted at the last
/// context position of each record.
struct RecordBatch {
  TokenBatch batch;
  std::vector<int> answer_rows;
  std::vector<const EncodedRecord*> records;
};

RecordBatch make_record_batch(const std::vector<EncodedRecord>& records,
                              std::span<const std::size_t> picks);

}  // namespace scpr
