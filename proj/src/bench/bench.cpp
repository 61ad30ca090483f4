#include "scpr/bench/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>

#include "scpr/core/ops.hpp"

namespace scpr {

void BenchSpec::validate() const {
  if (reps < 10) throw ConfigError("bench.reps must be at least 10");
  if (warmup < 3) throw ConfigError("bench.warmup must be at least 3");
  if (vocab_sizes.empty() || d_models.empty() || heads.empty())
    throw ConfigError("bench spec needs vocabulary sizes, model widths and heads");
  if (context == 0) throw ConfigError("bench.context must be positive");
  for (auto v : vocab_sizes)
    if (v < context + kReservedIds)
      throw ConfigError("bench vocabulary " + std::to_string(v) + " is smaller than the context");
}

std::uint64_t head_flops(const HeadConfig& head, std::size_t vocab, std::size_t d,
                         std::size_t context) {
  const std::uint64_t V = vocab, D = d, c = context;
  const std::uint64_t dq = head.use_mi ? 2 * D : D;
  const std::uint64_t proj = dq * D;
  const std::uint64_t k1 = head.k1, k2 = head.k2;
  std::uint64_t f = head.use_mi ? head.mi_rows * head.mi_cols * D * D : 0;
  switch (head.kind) {
    case HeadKind::kSoftmax: return f + V * D + proj;
    case HeadKind::kMos: return f + head.mos_components * (V * D + proj + dq);
    case HeadKind::kContext: return f + V * D + 2 * proj + c * D;
    case HeadKind::kRerank: {
      const std::uint64_t full = k1 > 0 ? 2 : 1;
      return f + full * V * D + (k1 > 0 ? 3 : 2) * proj + (k1 + k2) * D;
    }
    case HeadKind::kPointer: return f + V * D + 3 * proj + c * D;
    case HeadKind::kCpr: {
      // logits_R2 over the whole vocabulary decides the first reranker set.
      const std::uint64_t full = k1 > 0 ? 2 : 1;
      const std::uint64_t projs = 4 + (k1 > 0) + (k2 > 0);
      return f + full * V * D + projs * proj + (2 * c + k1 + k2) * D;
    }
    case HeadKind::kCepr:
      return f + V * D + (7 + (k1 > 0)) * proj + (4 * c + k1) * D;
    case HeadKind::kCopyNet:
    case HeadKind::kPointerSentinel:
      return f + V * D + 3 * proj + c * D;
    case HeadKind::kPointerGenerator:
      return f + V * D + 3 * proj + 2 * c * D;
  }
  return 0;
}

std::pair<double, double> median_iqr(std::vector<double> s) {
  if (s.empty()) return {0, 0};
  std::sort(s.begin(), s.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
  };
  return {q(0.5), q(0.75) - q(0.25)};
}

BenchResult bench_head(const HeadConfig& head, std::size_t vocab, std::size_t d,
                       const BenchSpec& spec) {
  ModelConfig model;
  model.vocab_size = vocab;
  model.d_model = d;
  model.n_layers = std::max<std::size_t>(2, head.use_mi ? head.mi_rows : 1);
  model.max_seq_len = spec.context;
  model.seq2seq = head.kind == HeadKind::kCepr;
  ParameterSet<float> ps;
  Rng rng(spec.seed);
  OutputHead<float> out_head(head, model, ps, rng);

  // Identical frozen inputs for every head: the generator is reseeded here.
  std::mt19937_64 gen(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random = [&](std::size_t rows, std::size_t cols, double scale) {
    Tensor<float> t = Tensor<float>::matrix(rows, cols);
    for (auto& v : t.values()) v = static_cast<float>(scale * normal(gen));
    return t;
  };
  const std::size_t seq = spec.context;
  ParameterSet<float> inputs;
  Parameter<float>& emb = inputs.add("emb", random(vocab, d, 1.0 / std::sqrt(static_cast<double>(d))), false);
  std::vector<Parameter<float>*> layers;
  for (std::size_t l = 0; l <= model.n_layers; ++l)
    layers.push_back(&inputs.add("layer" + std::to_string(l), random(seq, d, 1.0), false));
  Parameter<float>* enc = model.seq2seq ? &inputs.add("enc", random(seq, d, 1.0), false) : nullptr;

  TokenBatch batch;
  batch.batch = 1;
  batch.seq_len = seq;
  std::vector<int> ids(vocab - kReservedIds);
  std::iota(ids.begin(), ids.end(), kReservedIds);
  std::shuffle(ids.begin(), ids.end(), gen);
  batch.tokens.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(seq));
  batch.tokens[0] = kBosId;
  batch.targets.assign(seq, -1);

  auto run_once = [&] {
    Graph<float> g(false);
    HeadInput<float> in;
    in.batch = &batch;
    for (auto* p : layers) in.states.layers.push_back(g.parameter(*p));
    if (enc) in.states.encoder = g.parameter(*enc);
    in.embedding = g.parameter(emb);
    const auto t0 = std::chrono::steady_clock::now();
    auto out = out_head.forward(g, in);
    const auto t1 = std::chrono::steady_clock::now();
    volatile float sink = out.log_probs.value()[0];
    (void)sink;
    return std::chrono::duration<double, std::micro>(t1 - t0).count();
  };

  BenchResult r;
  r.head = head;
  r.vocab = vocab;
  r.d_model = d;
  r.flops = head_flops(head, vocab, d, spec.context);
  for (std::size_t i = 0; i < spec.warmup; ++i) run_once();
  for (std::size_t i = 0; i < spec.reps; ++i) r.samples_us.push_back(run_once());
  std::tie(r.median_us, r.iqr_us) = median_iqr(r.samples_us);
  return r;
}

std::vector<BenchResult> bench_heads(const BenchSpec& spec) {
  spec.validate();
  std::vector<BenchResult> out;
  for (const auto& h : spec.heads)
    for (std::size_t d : spec.d_models)
      for (std::size_t v : spec.vocab_sizes) out.push_back(bench_head(h, v, d, spec));
  return out;
}

void write_bench(std::ostream& out, const BenchResult& r) {
  std::string kind(head_kind_name(r.head.kind));
  if (r.head.kind == HeadKind::kMos) kind += "-" + std::to_string(r.head.mos_components);
  if (r.head.kind == HeadKind::kCpr || r.head.kind == HeadKind::kRerank)
    kind += ":" + std::to_string(r.head.k1) + "," + std::to_string(r.head.k2);
  if (r.head.kind == HeadKind::kCepr) kind += ":" + std::to_string(r.head.k1);
  if (r.head.use_mi) kind += "+mi";
  char buf[128];
  std::snprintf(buf, sizeof buf, "median_us=%.1f", r.median_us);
  out << "bench head=" << kind << " V=" << r.vocab << " d=" << r.d_model << ' ' << buf
      << " flops=" << r.flops;
  std::snprintf(buf, sizeof buf, " iqr_us=%.1f", r.iqr_us);
  out << buf << '\n';
}

}  // namespace scpr
