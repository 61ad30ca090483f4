#pragma once
// Head-only cost: wall time of one forward pass of an output head over a
// batch of frozen random hidden states, and a closed-form multiply-add count.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "scpr/heads/head.hpp"

namespace scpr {

struct BenchSpec {
  std::vector<std::size_t> vocab_sizes{1000, 10000};
  std::vector<std::size_t> d_models{128};
  std::vector<HeadConfig> heads;
  /// Distinct context words; the timed batch is one sequence of this length.
  std::size_t context = 200;
  std::size_t reps = 30;
  std::size_t warmup = 3;
  std::uint64_t seed = 1;

  /// Throws ConfigError for fewer than 10 repetitions or 3 warmup runs.
  void validate() const;
};

struct BenchResult {
  HeadConfig head;
  std::size_t vocab = 0;
  std::size_t d_model = 0;
  double median_us = 0;
  double iqr_us = 0;
  /// Multiply-adds for one query row whose context holds `context` words.
  std::uint64_t flops = 0;
  std::vector<double> samples_us;
};

/// Per-row multiply-add count of a head: the vocabulary-sized products
/// (one per full-vocabulary logit pass), the feature projections and the
/// per-word dot products of the context, reranker and local terms.
std::uint64_t head_flops(const HeadConfig& head, std::size_t vocab, std::size_t d,
                         std::size_t context);

/// Median and interquartile range (linear interpolation) of samples.
std::pair<double, double> median_iqr(std::vector<double> samples);

BenchResult bench_head(const HeadConfig& head, std::size_t vocab, std::size_t d,
                       const BenchSpec& spec);
std::vector<BenchResult> bench_heads(const BenchSpec& spec);

/// `bench head=<kind> V=<n> d=<n> median_us=<f> flops=<n> iqr_us=<f>`
void write_bench(std::ostream& out, const BenchResult& r);

}  // namespace scpr
