#include "scpr/train/batching.hpp"

#include <algorithm>
#include <random>

#include "scpr/core/error.hpp"

namespace scpr {

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::uint64_t seed,
                                        std::size_t step) {
  if (n == 0) throw DataError("cannot sample from an empty data set");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> out(k);
  for (auto& i : out) i = pick(rng);
  return out;
}

TokenBatch make_lm_batch(const std::vector<std::vector<int>>& sequences,
                         std::span<const std::size_t> picks) {
  if (picks.empty()) throw DataError("empty batch");
  std::size_t len = 0;
  for (std::size_t i : picks) {
    if (i >= sequences.size()) throw IndexError("sequence index out of range");
    if (sequences[i].size() < 2) throw DataError("sequence too short to predict a token");
    len = std::max(len, sequences[i].size() - 1);
  }
  TokenBatch b;
  b.batch = picks.size();
  b.seq_len = len;
  b.tokens.assign(b.batch * len, kPadId);
  b.targets.assign(b.batch * len, -1);
  for (std::size_t r = 0; r < picks.size(); ++r) {
    const auto& s = sequences[picks[r]];
    for (std::size_t t = 0; t + 1 < s.size(); ++t) {
      b.tokens[r * len + t] = s[t];
      b.targets[r * len + t] = s[t + 1];
    }
  }
  return b;
}

EncodedRecord encode_record(const SyntheticRecord& r, const Vocab& vocab) {
  auto known = [&](const std::string& w) {
    if (!vocab.contains(w)) throw DataError("word '" + w + "' is not in the model vocabulary");
    return vocab.id(w);
  };
  EncodedRecord e;
  e.tokens.push_back(kBosId);
  for (const auto& w : r.context) e.tokens.push_back(vocab.id(w));
  for (const auto& [w, p] : r.target) e.target.emplace_back(known(w), p.value());
  for (const auto& w : r.forbidden) e.forbidden.push_back(known(w));
  e.split = r.split;
  return e;
}

std::vector<EncodedRecord> encode_records(const std::vector<SyntheticRecord>& records,
                                          const Vocab& vocab) {
  std::vector<EncodedRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(encode_record(r, vocab));
  return out;
}

RecordBatch make_record_batch(const std::vector<EncodedRecord>& records,
                              std::span<const std::size_t> picks) {
  if (picks.empty()) throw DataError("empty batch");
  std::size_t len = 0;
  for (std::size_t i : picks) {
    if (i >= records.size()) throw IndexError("record index out of range");
    len = std::max(len, records[i].tokens.size());
  }
  RecordBatch rb;
  TokenBatch& b = rb.batch;
  b.batch = picks.size();
  b.seq_len = len;
  b.tokens.assign(b.batch * len, kPadId);
  b.targets.assign(b.batch * len, -1);
  for (std::size_t r = 0; r < picks.size(); ++r) {
    const auto& rec = records[picks[r]];
    std::copy(rec.tokens.begin(), rec.tokens.end(), b.tokens.begin() + static_cast<std::ptrdiff_t>(r * len));
    rb.answer_rows.push_back(static_cast<int>(r * len + rec.tokens.size() - 1));
    rb.records.push_back(&rec);
  }
  return rb;
}

}  // namespace scpr
