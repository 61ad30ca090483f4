#pragma once

#include <random>
#include <vector>

#include "scpr/core/grad_check.hpp"
#include "scpr/core/ops.hpp"

namespace scpr::test {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

/// Scalar loss sum(y * r) with fixed random r, which exercises every output
/// coordinate's gradient.
inline Var<double> weighted_sum(Var<double> y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Tensor<double> r = random_tensor<double>(y.shape(), rng);
  Graph<double>& g = y.graph();
  return ops::sum(ops::mul(y, g.constant(std::move(r))));
}

}  // namespace scpr::test

#include "scpr/model/language_model.hpp"

namespace scpr::test {

/// Random decoder (and optionally encoder) batch over content ids; sequences
/// start with BOS and each target is the next input token.
inline TokenBatch random_batch(std::mt19937_64& rng, std::size_t batch, std::size_t seq,
                               std::size_t vocab, std::size_t enc_len = 0,
                               std::size_t content_lo = kReservedIds) {
  std::uniform_int_distribution<int> tok(static_cast<int>(content_lo), static_cast<int>(vocab) - 1);
  TokenBatch b;
  b.batch = batch;
  b.seq_len = seq;
  b.enc_len = enc_len;
  for (std::size_t s = 0; s < batch; ++s) {
    std::vector<int> seqv(seq + 1);
    seqv[0] = kBosId;
    for (std::size_t t = 1; t <= seq; ++t) seqv[t] = tok(rng);
    for (std::size_t t = 0; t < seq; ++t) {
      b.tokens.push_back(seqv[t]);
      b.targets.push_back(seqv[t + 1]);
    }
    for (std::size_t j = 0; j < enc_len; ++j) b.enc_tokens.push_back(tok(rng));
  }
  return b;
}

/// Adds uniform noise to every parameter whose name starts with prefix.
template <typename T>
void perturb(ParameterSet<T>& ps, const std::string& prefix, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps[i].name.rfind(prefix, 0) == 0)
      for (auto& v : ps[i].value.values()) v += static_cast<T>(dist(rng));
}

}  // namespace scpr::test
