#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scpr/model/language_model.hpp"
#include "scpr/train/batching.hpp"

namespace scpr {

inline constexpr double kKlFloor = 1e-12;

/// Next-token distribution after `tokens` (which should start with BOS). Only
/// the last max_seq_len tokens are used.
template <typename T>
std::vector<double> next_token_probs(const LanguageModel<T>& lm, std::span<const int> tokens);

/// exp of the mean NLL over every non-padding target. Throws DataError when
/// there is nothing to score.
template <typename T>
double perplexity(const LanguageModel<T>& lm, const std::vector<std::vector<int>>& sequences,
                  std::size_t batch_size = 8);

/// KL(truth || model) over the full vocabulary with model probabilities
/// floored at `floor`.
double kl_divergence(std::span<const std::pair<int, double>> truth, std::span<const double> model,
                     double floor = kKlFloor);

struct SplitMetric {
  std::string split;
  double value = 0;
  std::size_t count = 0;
};

/// Distribution at the answer row of each record.
template <typename T>
std::vector<std::vector<double>> answer_probs(const LanguageModel<T>& lm,
                                              const std::vector<EncodedRecord>& records,
                                              std::size_t batch_size = 32);

/// Mean KL per split (in order of first appearance) followed by "all".
template <typename T>
std::vector<SplitMetric> synthetic_kl(const LanguageModel<T>& lm,
                                      const std::vector<EncodedRecord>& records);

/// Mean probability mass on forbidden ids over records that list any.
/// Throws DataError when no record does.
template <typename T>
double repeat_prob(const LanguageModel<T>& lm, const std::vector<EncodedRecord>& records);

/// Samples `length` tokens, each from the renormalised K most probable ids
/// (ties to the smaller id). K = 1 is greedy decoding. Throws ConfigError for
/// K = 0.
template <typename T>
std::vector<int> generate_topk(const LanguageModel<T>& lm, std::span<const int> prompt,
                               std::size_t k, std::size_t length, std::uint64_t seed);

/// The n most probable ids after the prompt, most probable first.
template <typename T>
std::vector<std::pair<int, double>> inspect_topn(const LanguageModel<T>& lm,
                                                 std::span<const int> prompt, std::size_t n = 5);

/// |distinct generated ids that occur in the context| / |distinct generated
/// ids|; 0 for an empty generation.
double copy_rate(std::span<const int> generated, std::span<const int> context);
/// Mean copy_rate over aligned lists. Throws DataError when the sizes differ.
double mean_copy_rate(const std::vector<std::vector<int>>& generated,
                      const std::vector<std::vector<int>>& contexts);

/// `metric=<name> value=<f> split=<name>`
void write_metric(std::ostream& out, const std::string& name, double value,
                  const std::string& split);

}  // namespace scpr
