#include "scpr/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <unordered_set>

#include "scpr/core/ops.hpp"

namespace scpr {

template <typename T>
std::vector<double> next_token_probs(const LanguageModel<T>& lm, std::span<const int> tokens) {
  if (tokens.empty()) throw DataError("empty prompt");
  const std::size_t max_len = lm.model_config().max_seq_len;
  if (tokens.size() > max_len) tokens = tokens.subspan(tokens.size() - max_len);
  TokenBatch b;
  b.batch = 1;
  b.seq_len = tokens.size();
  b.tokens.assign(tokens.begin(), tokens.end());
  b.targets.assign(tokens.size(), -1);
  Graph<T> g(false);
  const auto& lp = lm.forward(g, b).log_probs.value();
  const auto row = lp.row(tokens.size() - 1);
  std::vector<double> p(row.size());
  for (std::size_t x = 0; x < row.size(); ++x) p[x] = std::exp(static_cast<double>(row[x]));
  return p;
}

template <typename T>
double perplexity(const LanguageModel<T>& lm, const std::vector<std::vector<int>>& sequences,
                  std::size_t batch_size) {
  double total = 0;
  std::size_t count = 0;
  std::vector<std::size_t> picks;
  for (std::size_t begin = 0; begin < sequences.size(); begin += batch_size) {
    picks.resize(std::min(batch_size, sequences.size() - begin));
    std::iota(picks.begin(), picks.end(), begin);
    const TokenBatch b = make_lm_batch(sequences, picks);
    Graph<T> g(false);
    const auto& lp = lm.forward(g, b).log_probs.value();
    for (std::size_t r = 0; r < b.rows(); ++r)
      if (b.targets[r] >= 0) {
        total -= static_cast<double>(lp.at(r, static_cast<std::size_t>(b.targets[r])));
        ++count;
      }
  }
  if (count == 0) throw DataError("no tokens to evaluate");
  return std::exp(total / static_cast<double>(count));
}

double kl_divergence(std::span<const std::pair<int, double>> truth, std::span<const double> model,
                     double floor) {
  double kl = 0;
  for (const auto& [id, p] : truth) {
    if (id < 0 || static_cast<std::size_t>(id) >= model.size())
      throw DataError("target id " + std::to_string(id) + " outside the model vocabulary");
    if (p > 0) kl += p * (std::log(p) - std::log(std::max(model[static_cast<std::size_t>(id)], floor)));
  }
  return std::max(kl, 0.0);
}

template <typename T>
std::vector<std::vector<double>> answer_probs(const LanguageModel<T>& lm,
                                              const std::vector<EncodedRecord>& records,
                                              std::size_t batch_size) {
  std::vector<std::vector<double>> out;
  std::vector<std::size_t> picks;
  for (std::size_t begin = 0; begin < records.size(); begin += batch_size) {
    picks.resize(std::min(batch_size, records.size() - begin));
    std::iota(picks.begin(), picks.end(), begin);
    const RecordBatch rb = make_record_batch(records, picks);
    Graph<T> g(false);
    const auto& lp = lm.forward(g, rb.batch).log_probs.value();
    for (int r : rb.answer_rows) {
      const auto row = lp.row(static_cast<std::size_t>(r));
      std::vector<double> p(row.size());
      for (std::size_t x = 0; x < row.size(); ++x) p[x] = std::exp(static_cast<double>(row[x]));
      out.push_back(std::move(p));
    }
  }
  return out;
}

template <typename T>
std::vector<SplitMetric> synthetic_kl(const LanguageModel<T>& lm,
                                      const std::vector<EncodedRecord>& records) {
  if (records.empty()) throw DataError("no records to evaluate");
  const auto probs = answer_probs(lm, records);
  std::vector<SplitMetric> out;
  SplitMetric all{"all", 0, 0};
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double kl = kl_divergence(records[i].target, probs[i]);
    auto it = std::find_if(out.begin(), out.end(), [&](const SplitMetric& m) { return m.split == records[i].split; });
    if (it == out.end()) it = out.insert(out.end(), SplitMetric{records[i].split, 0, 0});
    it->value += kl;
    ++it->count;
    all.value += kl;
    ++all.count;
  }
  for (auto& m : out) m.value /= static_cast<double>(m.count);
  all.value /= static_cast<double>(all.count);
  out.push_back(all);
  return out;
}

template <typename T>
double repeat_prob(const LanguageModel<T>& lm, const std::vector<EncodedRecord>& records) {
  std::vector<EncodedRecord> listed;
  for (const auto& r : records)
    if (!r.forbidden.empty()) listed.push_back(r);
  if (listed.empty()) throw DataError("no record lists forbidden words");
  const auto probs = answer_probs(lm, listed);
  double total = 0;
  for (std::size_t i = 0; i < listed.size(); ++i) {
    std::unordered_set<int> seen;
    for (int id : listed[i].forbidden)
      if (seen.insert(id).second) total += probs[i][static_cast<std::size_t>(id)];
  }
  return total / static_cast<double>(listed.size());
}

namespace {

std::vector<std::size_t> top_ids(const std::vector<double>& p, std::size_t k) {
  std::vector<std::size_t> ids(p.size());
  std::iota(ids.begin(), ids.end(), 0);
  k = std::min(k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](std::size_t a, std::size_t b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });
  ids.resize(k);
  return ids;
}

}  // namespace

template <typename T>
std::vector<int> generate_topk(const LanguageModel<T>& lm, std::span<const int> prompt,
                               std::size_t k, std::size_t length, std::uint64_t seed) {
  if (k == 0) throw ConfigError("top-K sampling requires K >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<int> ctx(prompt.begin(), prompt.end());
  std::vector<int> out;
  for (std::size_t i = 0; i < length; ++i) {
    const auto p = next_token_probs(lm, ctx);
    const auto ids = top_ids(p, k);
    std::size_t pick = ids[0];
    if (ids.size() > 1) {
      double z = 0;
      for (std::size_t id : ids) z += p[id];
      double u = unif(rng) * z;
      for (std::size_t id : ids) {
        pick = id;
        u -= p[id];
        if (u < 0) break;
      }
    }
    out.push_back(static_cast<int>(pick));
    ctx.push_back(static_cast<int>(pick));
  }
  return out;
}

template <typename T>
std::vector<std::pair<int, double>> inspect_topn(const LanguageModel<T>& lm,
                                                 std::span<const int> prompt, std::size_t n) {
  const auto p = next_token_probs(lm, prompt);
  std::vector<std::pair<int, double>> out;
  for (std::size_t id : top_ids(p, n)) out.emplace_back(static_cast<int>(id), p[id]);
  return out;
}

double copy_rate(std::span<const int> generated, std::span<const int> context) {
  const std::unordered_set<int> gen(generated.begin(), generated.end());
  if (gen.empty()) return 0.0;
  const std::unordered_set<int> ctx(context.begin(), context.end());
  std::size_t hit = 0;
  for (int id : gen) hit += ctx.contains(id);
  return static_cast<double>(hit) / static_cast<double>(gen.size());
}

double mean_copy_rate(const std::vector<std::vector<int>>& generated,
                      const std::vector<std::vector<int>>& contexts) {
  if (generated.size() != contexts.size())
    throw DataError("copy-rate inputs are misaligned: " + std::to_string(generated.size()) +
                    " generations vs " + std::to_string(contexts.size()) + " contexts");
  if (generated.empty()) throw DataError("no generations");
  double s = 0;
  for (std::size_t i = 0; i < generated.size(); ++i) s += copy_rate(generated[i], contexts[i]);
  return s / static_cast<double>(generated.size());
}

void write_metric(std::ostream& out, const std::string& name, double value,
                  const std::string& split) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  out << "metric=" << name << " value=" << buf << " split=" << split << '\n';
}

#define SCPR_INSTANTIATE_EVAL(T)                                                                   \
  template std::vector<double> next_token_probs<T>(const LanguageModel<T>&, std::span<const int>); \
  template double perplexity<T>(const LanguageModel<T>&, const std::vector<std::vector<int>>&,    \
                                std::size_t);                                                     \
  template std::vector<std::vector<double>> answer_probs<T>(                                      \
      const LanguageModel<T>&, const std::vector<EncodedRecord>&, std::size_t);                   \
  template std::vector<SplitMetric> synthetic_kl<T>(const LanguageModel<T>&,                      \
                                                    const std::vector<EncodedRecord>&);           \
  template double repeat_prob<T>(const LanguageModel<T>&, const std::vector<EncodedRecord>&);     \
  template std::vector<int> generate_topk<T>(const LanguageModel<T>&, std::span<const int>,       \
                                             std::size_t, std::size_t, std::uint64_t);            \
  template std::vector<std::pair<int, double>> inspect_topn<T>(const LanguageModel<T>&,           \
                                                               std::span<const int>, std::size_t);

SCPR_INSTANTIATE_EVAL(float)
SCPR_INSTANTIATE_EVAL(double)

#undef SCPR_INSTANTIATE_EVAL

}  // namespace scpr
