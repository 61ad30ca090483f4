#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "scpr/bench/bench.hpp"
#include "scpr/config/run_config.hpp"
#include "scpr/eval/metrics.hpp"
#include "support.hpp"

namespace {

using namespace scpr;

ModelConfig toy_model(std::size_t vocab) {
  ModelConfig m;
  m.vocab_size = vocab;
  m.d_model = 8;
  m.n_layers = 1;
  m.n_heads = 2;
  m.max_seq_len = 24;
  return m;
}

HeadConfig head_of(HeadKind kind) {
  HeadConfig h;
  h.kind = kind;
  h.k1 = 2;
  h.k2 = 4;
  return h;
}

// A zero output embedding makes every logit zero.
void make_uniform(LanguageModel<double>& lm) {
  lm.params().at("model.tok_emb").value.fill(0.0);
}

std::vector<std::vector<int>> random_sequences(std::size_t vocab, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tok(kReservedIds, static_cast<int>(vocab) - 1);
  std::vector<std::vector<int>> out(n);
  for (auto& s : out) {
    s.push_back(kBosId);
    for (int i = 0; i < 7; ++i) s.push_back(tok(rng));
  }
  return out;
}

TEST(Perplexity, UniformPredictorEqualsVocabSize) {
  for (std::size_t v : {10u, 100u}) {
    LanguageModel<double> lm(toy_model(v), head_of(HeadKind::kSoftmax), 1);
    make_uniform(lm);
    EXPECT_NEAR(perplexity(lm, random_sequences(v, 5, 2), 3), static_cast<double>(v), 1e-9 * v);
  }
}

TEST(Perplexity, EmptyDataIsError) {
  LanguageModel<double> lm(toy_model(10), head_of(HeadKind::kSoftmax), 1);
  EXPECT_THROW(perplexity(lm, {}), DataError);
}

TEST(Perplexity, ClosedFormToy) {
  // exp of the mean NLL of probabilities 0.5 and 0.25.
  const double nll = -(std::log(0.5) + std::log(0.25)) / 2;
  EXPECT_NEAR(std::exp(nll), 2 * std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(std::exp(nll), 2.828, 1e-3);
}

TEST(Perplexity, MatchesModelLoss) {
  LanguageModel<double> lm(toy_model(15), head_of(HeadKind::kCpr), 4);
  const auto seqs = random_sequences(15, 4, 3);
  std::vector<std::size_t> all(seqs.size());
  std::iota(all.begin(), all.end(), 0);
  Graph<double> g(false);
  const double loss = lm.loss(g, make_lm_batch(seqs, all)).value()[0];
  EXPECT_NEAR(perplexity(lm, seqs, 3), std::exp(loss), 1e-10);
}

TEST(Kl, ClosedForms) {
  const std::vector<std::pair<int, double>> truth = {{0, 0.5}, {1, 0.5}};
  const std::vector<double> uniform(4, 0.25);
  EXPECT_NEAR(kl_divergence(truth, uniform), std::log(2.0), 1e-15);
  const std::vector<double> exact = {0.5, 0.5, 0, 0};
  EXPECT_EQ(kl_divergence(truth, exact), 0.0);
  const std::vector<double> zero = {1, 0, 0, 0};
  EXPECT_NEAR(kl_divergence(truth, zero), 0.5 * std::log(0.5) + 0.5 * (std::log(0.5) - std::log(1e-12)),
              1e-9);
}

TEST(Kl, NonNegativeOnRandomPairs) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t v = 2 + trial % 9;
    std::vector<double> p(v), q(v);
    double sp = 0, sq = 0;
    for (std::size_t i = 0; i < v; ++i) sp += p[i] = u(rng), sq += q[i] = u(rng);
    std::vector<std::pair<int, double>> truth;
    for (std::size_t i = 0; i < v; ++i) {
      truth.emplace_back(static_cast<int>(i), p[i] / sp);
      q[i] /= sq;
    }
    ASSERT_GE(kl_divergence(truth, q), 0.0);
  }
}

TEST(Kl, InvariantToPermutationOffSupport) {
  std::mt19937_64 rng(3);
  const std::vector<std::pair<int, double>> truth = {{1, 0.3}, {4, 0.7}};
  std::vector<double> q = {0.05, 0.2, 0.1, 0.15, 0.3, 0.08, 0.12};
  const double base = kl_divergence(truth, q);
  std::vector<std::size_t> off = {0, 2, 3, 5, 6};
  for (int t = 0; t < 20; ++t) {
    std::vector<double> vals;
    for (auto i : off) vals.push_back(q[i]);
    std::shuffle(vals.begin(), vals.end(), rng);
    std::vector<double> r = q;
    for (std::size_t j = 0; j < off.size(); ++j) r[off[j]] = vals[j];
    EXPECT_EQ(kl_divergence(truth, r), base);
  }
}

TEST(SyntheticKl, PerSplitMeans) {
  LanguageModel<double> lm(toy_model(10), head_of(HeadKind::kSoftmax), 1);
  make_uniform(lm);
  std::vector<EncodedRecord> recs(3);
  recs[0] = {{kBosId, 3, 4}, {{3, 0.5}, {4, 0.5}}, {}, "diagonal"};
  recs[1] = {{kBosId, 5}, {{5, 1.0}}, {}, "edge"};
  recs[2] = {{kBosId, 6, 7, 8}, {{6, 0.5}, {7, 0.5}}, {}, "diagonal"};
  const auto m = synthetic_kl(lm, recs);
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m[0].split, "diagonal");
  EXPECT_NEAR(m[0].value, std::log(5.0), 1e-9);
  EXPECT_EQ(m[0].count, 2u);
  EXPECT_EQ(m[1].split, "edge");
  EXPECT_NEAR(m[1].value, std::log(10.0), 1e-9);
  EXPECT_EQ(m[2].split, "all");
  EXPECT_NEAR(m[2].value, (2 * std::log(5.0) + std::log(10.0)) / 3, 1e-9);
}

TEST(RepeatProb, MassOnForbidden) {
  LanguageModel<double> lm(toy_model(10), head_of(HeadKind::kSoftmax), 1);
  make_uniform(lm);
  std::vector<EncodedRecord> recs(2);
  recs[0] = {{kBosId, 3, 4}, {{5, 1.0}}, {3, 4}, "list"};
  recs[1] = {{kBosId, 6}, {{5, 1.0}}, {}, "list"};
  EXPECT_NEAR(repeat_prob(lm, recs), 0.2, 1e-12);
  recs.resize(1);
  recs[0].forbidden.clear();
  EXPECT_THROW(repeat_prob(lm, recs), DataError);
}

// Decodes by running the full model on the growing sequence and taking the
// first maximal logit; shares nothing with generate_topk but the model.
std::vector<int> argmax_decode(const LanguageModel<float>& lm, std::vector<int> ctx, std::size_t n) {
  std::vector<int> out;
  for (std::size_t i = 0; i < n; ++i) {
    TokenBatch b;
    b.batch = 1;
    b.seq_len = ctx.size();
    b.tokens = ctx;
    b.targets.assign(ctx.size(), -1);
    Graph<float> g(false);
    const auto row = lm.forward(g, b).log_probs.value().row(ctx.size() - 1);
    const int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    out.push_back(best);
    ctx.push_back(best);
  }
  return out;
}

TEST(Generate, GreedyEqualsIndependentArgmax) {
  for (auto kind : {HeadKind::kSoftmax, HeadKind::kCpr, HeadKind::kPointerSentinel}) {
    LanguageModel<float> lm(toy_model(30), head_of(kind), 7);
    std::mt19937_64 rng(1);
    scpr::test::perturb(lm.params(), "", 0.3, rng);
    const std::vector<int> prompt = {kBosId, 5, 9, 12};
    EXPECT_EQ(generate_topk(lm, prompt, 1, 10, 123), argmax_decode(lm, prompt, 10));
  }
}

TEST(Generate, SeedReproducesAndKZeroRejected) {
  LanguageModel<float> lm(toy_model(30), head_of(HeadKind::kSoftmax), 7);
  const std::vector<int> prompt = {kBosId, 5};
  EXPECT_EQ(generate_topk(lm, prompt, 30, 12, 5), generate_topk(lm, prompt, 30, 12, 5));
  EXPECT_NE(generate_topk(lm, prompt, 30, 12, 5), generate_topk(lm, prompt, 30, 12, 6));
  EXPECT_THROW(generate_topk(lm, prompt, 0, 3, 1), ConfigError);
}

TEST(Generate, TopKRestrictsSupport) {
  LanguageModel<float> lm(toy_model(30), head_of(HeadKind::kSoftmax), 7);
  std::mt19937_64 rng(2);
  scpr::test::perturb(lm.params(), "", 0.5, rng);
  const std::vector<int> prompt = {kBosId, 5, 6};
  const auto top = inspect_topn(lm, prompt, 3);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const int t = generate_topk(lm, prompt, 3, 1, s)[0];
    EXPECT_TRUE(t == top[0].first || t == top[1].first || t == top[2].first);
  }
}

TEST(Inspect, DescendingAndFullDistribution) {
  LanguageModel<double> lm(toy_model(20), head_of(HeadKind::kCpr), 3);
  std::mt19937_64 rng(4);
  scpr::test::perturb(lm.params(), "", 0.5, rng);
  const std::vector<int> prompt = {kBosId, 4, 8};
  const auto top5 = inspect_topn(lm, prompt, 5);
  ASSERT_EQ(top5.size(), 5u);
  for (std::size_t i = 1; i < top5.size(); ++i) EXPECT_GE(top5[i - 1].second, top5[i].second);
  for (const auto& [id, p] : top5) EXPECT_LE(p, 1.0);
  const auto all = inspect_topn(lm, prompt, 20);
  double s = 0;
  for (const auto& [id, p] : all) s += p;
  EXPECT_NEAR(s, 1.0, 1e-6);
}

TEST(CopyRate, Cases) {
  const std::vector<int> ctx = {5, 6, 7};
  EXPECT_EQ(copy_rate(ctx, ctx), 1.0);
  EXPECT_EQ(copy_rate(std::vector<int>{8, 9}, ctx), 0.0);
  EXPECT_DOUBLE_EQ(copy_rate(std::vector<int>{5, 10, 11}, ctx), 1.0 / 3);
  EXPECT_DOUBLE_EQ(copy_rate(std::vector<int>{5, 5, 10, 11, 11}, ctx), 1.0 / 3);
  EXPECT_THROW(mean_copy_rate({{1}}, {{1}, {2}}), DataError);
  EXPECT_DOUBLE_EQ(mean_copy_rate({{5}, {8}}, {ctx, ctx}), 0.5);
}

TEST(MetricLine, Format) {
  std::ostringstream os;
  write_metric(os, "kl", 0.125, "diagonal");
  EXPECT_EQ(os.str(), "metric=kl value=0.125 split=diagonal\n");
}

HeadConfig bench_head_of(HeadKind kind, std::size_t m = 3) {
  HeadConfig h;
  h.kind = kind;
  h.k1 = 20;
  h.k2 = 100;
  h.mos_components = m;
  return h;
}

TEST(BenchFlops, MosIsComponentsTimesStandard) {
  const double ratio = static_cast<double>(head_flops(bench_head_of(HeadKind::kMos), 10000, 128, 200)) /
                       static_cast<double>(head_flops(bench_head_of(HeadKind::kSoftmax), 10000, 128, 200));
  EXPECT_NEAR(ratio, 3.0, 0.01);
}

TEST(BenchFlops, CprCountsSecondFullPass) {
  const std::uint64_t V = 10000, d = 128, c = 200;
  // One full pass for the default logits, one for the second reranker's
  // logits that pick the first reranker set, six projections, and per-word
  // dot products for context, local and both reranker sets.
  const std::uint64_t expected = 2 * V * d + 6 * d * d + (2 * c + 20 + 100) * d;
  EXPECT_EQ(head_flops(bench_head_of(HeadKind::kCpr), V, d, c), expected);
  EXPECT_EQ(head_flops(bench_head_of(HeadKind::kSoftmax), V, d, c), V * d + d * d);
}

// The difference MoS-3 minus CPR:k1,k2 is (V - 3d - 2c - k1 - k2 + 3) d, so
// CPR is cheaper exactly when V exceeds 3d + 2c + k1 + k2 - 3.
TEST(BenchFlops, CprVersusMos3OnGrid) {
  for (std::size_t v : {500u, 1000u, 5000u, 10000u, 50000u})
    for (std::size_t d : {16u, 64u, 128u, 512u})
      for (std::size_t c : {10u, 50u, 200u}) {
        const auto cpr = head_flops(bench_head_of(HeadKind::kCpr), v, d, c);
        const auto mos = head_flops(bench_head_of(HeadKind::kMos, 3), v, d, c);
        EXPECT_EQ(cpr < mos, v + 3 > 3 * d + 2 * c + 120) << "V=" << v << " d=" << d << " c=" << c;
      }
  EXPECT_LT(head_flops(bench_head_of(HeadKind::kCpr), 10000, 128, 200),
            head_flops(bench_head_of(HeadKind::kMos, 3), 10000, 128, 200));
}

TEST(BenchStats, MedianIqr) {
  auto [m, iqr] = median_iqr({4, 1, 3, 2, 5});
  EXPECT_DOUBLE_EQ(m, 3);
  EXPECT_DOUBLE_EQ(iqr, 2);
  std::tie(m, iqr) = median_iqr({1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(m, 2.5);
  EXPECT_DOUBLE_EQ(iqr, 1.5);
}

TEST(BenchSpecTest, Validation) {
  BenchSpec s;
  s.heads = {bench_head_of(HeadKind::kSoftmax)};
  EXPECT_NO_THROW(s.validate());
  s.reps = 9;
  EXPECT_THROW(s.validate(), ConfigError);
  s.reps = 10;
  s.warmup = 2;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(BenchRun, SmallSpecReportsLines) {
  BenchSpec s;
  s.vocab_sizes = {300};
  s.d_models = {16};
  s.context = 20;
  s.reps = 10;
  s.heads = {bench_head_of(HeadKind::kSoftmax), bench_head_of(HeadKind::kCpr),
             bench_head_of(HeadKind::kMos)};
  const auto rs = bench_heads(s);
  ASSERT_EQ(rs.size(), 3u);
  for (const auto& r : rs) {
    EXPECT_EQ(r.samples_us.size(), 10u);
    EXPECT_GT(r.median_us, 0);
  }
  std::ostringstream os;
  write_bench(os, rs[1]);
  EXPECT_EQ(os.str().rfind("bench head=cpr:20,100 V=300 d=16 median_us=", 0), 0u) << os.str();
  EXPECT_NE(os.str().find(" flops=" + std::to_string(rs[1].flops)), std::string::npos);
}

TEST(RunConfigTest, UnknownKeyNamed) {
  RunConfig c;
  std::istringstream in("model.d_model = 32\nhead.bogus = 1\n");
  try {
    c.load(in, "cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("head.bogus"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("cfg:2"), std::string::npos);
  }
  EXPECT_THROW(c.set("nope", "1"), ConfigError);
}

TEST(RunConfigTest, ParsesTypedValues) {
  RunConfig c;
  std::istringstream in("# comment\nhead.kind = cpr  # trailing\nhead.use_mi = true\nhead.k1 = 5\n"
                        "model.d_model = 32\nbench.vocab = 100, 2000\n");
  c.load(in);
  const HeadConfig h = c.head_config();
  EXPECT_EQ(h.kind, HeadKind::kCpr);
  EXPECT_TRUE(h.use_mi);
  EXPECT_EQ(h.k1, 5u);
  EXPECT_EQ(c.model_config(50).d_model, 32u);
  EXPECT_EQ(c.get_list("bench.vocab"), (std::vector<std::string>{"100", "2000"}));
  c.set("head.k2", "x");
  EXPECT_THROW(c.head_config(), ConfigError);
}

TEST(RunConfigTest, ProfileThenExplicitKeys) {
  RunConfig c;
  c.set("train.profile", "paper-lm");
  TrainConfig t = c.train_config();
  EXPECT_DOUBLE_EQ(t.optim.lr, 1e-5);
  EXPECT_EQ(t.batch_size, 4u);
  c.set("train.batch_size", "16");
  t = c.train_config();
  EXPECT_EQ(t.batch_size, 16u);
  EXPECT_DOUBLE_EQ(t.optim.lr, 1e-5);
  c.set("train.profile", "fast");
  EXPECT_THROW(c.train_config(), ConfigError);
}

TEST(RunConfigTest, WriteLoadRoundTrip) {
  RunConfig a;
  a.set("head.kind", "mos");
  a.set("train.seed", "77");
  std::ostringstream os;
  a.write(os);
  RunConfig b;
  std::istringstream in(os.str());
  b.load(in);
  std::ostringstream os2;
  b.write(os2);
  EXPECT_EQ(os.str(), os2.str());
  EXPECT_EQ(b.get_u64("train.seed"), 77u);
}

}  // namespace
