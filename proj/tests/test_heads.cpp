#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "scpr/core/ops.hpp"
#include "scpr/heads/position.hpp"
#include "support.hpp"

namespace {

using namespace scpr;
using scpr::test::perturb;
using scpr::test::random_batch;

ModelConfig tiny_model(std::size_t vocab, bool seq2seq = false, std::size_t d = 8) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = d;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_seq_len = 16;
  c.seq2seq = seq2seq;
  return c;
}

HeadConfig head_of(HeadKind kind, std::size_t k1 = 2, std::size_t k2 = 4, bool mi = false) {
  HeadConfig h;
  h.kind = kind;
  h.k1 = k1;
  h.k2 = k2;
  h.use_mi = mi;
  h.mi_rows = 3;
  h.mi_cols = 3;
  return h;
}

// ---------------------------------------------------------------------------
// Hand-built projections for the single-position API.

void add_proj(ParameterSet<double>& ps, const std::string& name, Tensor<double> w,
              std::vector<double> bias = {}) {
  if (bias.empty()) bias.assign(w.rows(), 0.0);
  const std::size_t n = bias.size();
  ps.add("head." + name + ".weight", std::move(w));
  ps.add("head." + name + ".bias", Tensor<double>(Shape{n}, std::move(bias)));
}

Tensor<double> eye(std::size_t n, double s = 1.0) {
  Tensor<double> t = Tensor<double>::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = s;
  return t;
}

TEST(ContextFeature, ZeroProjectionAndPassThrough) {
  ParameterSet<double> ps;
  add_proj(ps, "L_h", Tensor<double>::matrix(2, 6));
  HeadProjections<double> proj(ps);
  const std::vector<double> h{0.5, -1};
  const std::vector<double> block{1, 2, 3, 4, 5, 6};
  EXPECT_EQ(build_context_feature<double>(h, block, proj, true),
            (std::vector<double>{0.5, -1, 0, 0}));
  EXPECT_EQ(build_context_feature<double>(h, {}, proj, false), h);
  const std::vector<double> short_block{1, 2};
  EXPECT_THROW(build_context_feature<double>(h, short_block, proj, true), DimensionError);
}

TEST(ContextFeature, RandomOneByThreeBlock) {
  std::mt19937_64 rng(1);
  ParameterSet<double> ps;
  auto w = scpr::test::random_tensor<double>({2, 6}, rng);
  add_proj(ps, "L_h", w, {0.1, -0.2});
  HeadProjections<double> proj(ps);
  const std::vector<double> h{0.3, 0.4};
  const std::vector<double> block{0.3, 0.4, -1, 2, 0.5, 0.25};
  const auto q = build_context_feature<double>(h, block, proj, true);
  ASSERT_EQ(q.size(), 4u);
  for (std::size_t i = 0; i < 2; ++i) {
    double z = i == 0 ? 0.1 : -0.2;
    for (std::size_t j = 0; j < 6; ++j) z += w.at(i, j) * block[j];
    const double gelu = 0.5 * z * (1 + std::tanh(std::sqrt(2 / M_PI) * (z + 0.044715 * z * z * z)));
    EXPECT_NEAR(q[2 + i], gelu, 1e-15);
  }
}

TEST(StandardLogits, ZeroAndOneHot) {
  ParameterSet<double> ps;
  add_proj(ps, "L_V", eye(3));
  HeadProjections<double> proj(ps);
  const std::vector<double> zero(3, 0.0), e1{0, 1, 0};
  for (double v : standard_logits<double>(zero, eye(3), proj)) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(standard_logits<double>(e1, eye(3), proj), (std::vector<double>{0, 1, 0}));
}

TEST(StandardLogits, RandomThreeWordCase) {
  std::mt19937_64 rng(2);
  ParameterSet<double> ps;
  auto lv = scpr::test::random_tensor<double>({2, 2}, rng);
  add_proj(ps, "L_V", lv, {0.5, -0.5});
  HeadProjections<double> proj(ps);
  auto w = scpr::test::random_tensor<double>({3, 2}, rng);
  const std::vector<double> q{0.7, -0.1};
  const auto logits = standard_logits<double>(q, w, proj);
  const double f0 = lv.at(0, 0) * 0.7 + lv.at(0, 1) * -0.1 + 0.5;
  const double f1 = lv.at(1, 0) * 0.7 + lv.at(1, 1) * -0.1 - 0.5;
  for (std::size_t x = 0; x < 3; ++x) EXPECT_NEAR(logits[x], f0 * w.at(x, 0) + f1 * w.at(x, 1), 1e-15);
}

TEST(LocalTable, AveragesProjectedOccurrences) {
  ParameterSet<double> ps;
  add_proj(ps, "L_LD", eye(2, 2.0));
  HeadProjections<double> proj(ps);
  Tensor<double> feats(Shape{3, 2}, std::vector<double>{1, 0, 0, 1, 3, 3});
  const std::vector<int> ids{4, 4, 1};
  const auto t = local_embedding_table<double>(feats, ids, 5, proj);
  EXPECT_EQ(t.table.at(4, 0), 1.0);
  EXPECT_EQ(t.table.at(4, 1), 1.0);
  EXPECT_EQ(t.table.at(1, 0), 6.0);
  EXPECT_EQ(t.table.at(0, 0), 0.0);
  EXPECT_EQ(t.counts, (std::vector<std::size_t>{0, 1, 0, 0, 2}));
  Tensor<double> same(Shape{2, 2}, std::vector<double>{1, 2, 1, 2});
  const std::vector<int> twice{3, 3};
  const auto s = local_embedding_table<double>(same, twice, 5, proj);
  EXPECT_EQ(s.table.at(3, 1), 4.0);
}

// Six-word partition example with identity projections.
struct SixWord {
  ParameterSet<double> ps;
  Tensor<double> w = eye(6);
  std::vector<double> q{5, 4, 3, 2, 1, 0};
  SixWord() {
    add_proj(ps, "L_V", eye(6));
    add_proj(ps, "L_C", eye(6));
    add_proj(ps, "L_R1", eye(6));
    add_proj(ps, "L_R2", Tensor<double>::matrix(6, 6), {0, 0, 0, 0, 0, 9});
    add_proj(ps, "L_PD", eye(6));
    add_proj(ps, "L_LD", eye(6));
  }
};

TEST(CprLogits, SixWordBranchByBranch) {
  SixWord s;
  HeadProjections<double> proj(s.ps);
  const auto lv = standard_logits<double>(s.q, s.w, proj);
  EXPECT_EQ(lv, s.q);
  const auto lr2 = proj.apply("L_R2", s.q);
  const std::vector<int> ctx{0};
  const auto part = build_cpr_partition<double>(lv, lr2, ctx, 1, 2);
  LocalEmbeddingTable<double> zero{Tensor<double>::matrix(6, 6), std::vector<std::size_t>(6, 0)};
  const auto logits = cpr_logits<double>(s.q, s.w, part, zero, proj);
  // CONTEXT: f_C.w0 = 5; RERANK2 (id 1): f_R2.w1 = 0; RERANK1 (id 5): f_R1.w5 = 0.
  EXPECT_EQ(logits, (std::vector<double>{5, 0, 3, 2, 1, 0}));

  // A nonzero local table enters only through the context word.
  LocalEmbeddingTable<double> local = zero;
  local.table.at(0, 0) = 0.5;
  local.table.at(2, 0) = 7;
  const auto with_local = cpr_logits<double>(s.q, s.w, part, local, proj);
  EXPECT_EQ(with_local[0], 5 + 5 * 0.5);
  EXPECT_EQ(with_local[2], 3.0);
}

TEST(CprLogits, StalePartitionIsRejected) {
  SixWord s;
  HeadProjections<double> proj(s.ps);
  const auto lv = standard_logits<double>(s.q, s.w, proj);
  const auto part = build_cpr_partition<double>(lv, {}, {}, 0, 2);
  LocalEmbeddingTable<double> zero{Tensor<double>::matrix(6, 6), std::vector<std::size_t>(6, 0)};
  auto q2 = s.q;
  q2[3] += 1e-9;
  EXPECT_THROW(cpr_logits<double>(q2, s.w, part, zero, proj), ConsistencyError);
  EXPECT_NO_THROW(cpr_logits<double>(s.q, s.w, part, zero, proj));
}

TEST(CprLogits, EmptyPartitionEqualsStandardExactly) {
  SixWord s;
  HeadProjections<double> proj(s.ps);
  const auto lv = standard_logits<double>(s.q, s.w, proj);
  const auto part = build_cpr_partition<double>(lv, {}, {}, 0, 0);
  LocalEmbeddingTable<double> zero{Tensor<double>::matrix(6, 6), std::vector<std::size_t>(6, 0)};
  EXPECT_EQ(cpr_logits<double>(s.q, s.w, part, zero, proj), lv);
}

TEST(CeprLogits, EightWordCasesAndMissingEncoder) {
  std::mt19937_64 rng(9);
  ParameterSet<double> ps;
  for (const char* n : {"L_V", "L_C", "L_E", "L_PD", "L_PE", "L_R1", "L_LD", "L_LE"})
    add_proj(ps, n, scpr::test::random_tensor<double>({3, 3}, rng),
             {0.1 * (rng() % 5), -0.2, 0.3});
  HeadProjections<double> proj(ps);
  const auto w = scpr::test::random_tensor<double>({8, 3}, rng);
  const std::vector<double> q{0.4, -0.9, 1.3};
  const auto lv = standard_logits<double>(q, w, proj);
  const std::vector<int> ctx{1, 2}, enc{2, 3, 4};
  const auto part = build_cepr_partition<double>(lv, ctx, enc, 3);
  const auto dec_t = local_embedding_table<double>(scpr::test::random_tensor<double>({2, 3}, rng),
                                                   ctx, 8, proj, "L_LD");
  const auto enc_t = local_embedding_table<double>(scpr::test::random_tensor<double>({3, 3}, rng),
                                                   enc, 8, proj, "L_LE");
  const auto logits = cepr_logits<double>(q, w, part, dec_t, &enc_t, proj);
  auto dot = [](const std::vector<double>& a, std::span<const double> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  const auto fc = proj.apply("L_C", q), fe = proj.apply("L_E", q), fpd = proj.apply("L_PD", q),
             fpe = proj.apply("L_PE", q), fr1 = proj.apply("L_R1", q);
  for (std::size_t x = 0; x < 8; ++x) {
    double expected = lv[x];
    switch (part.branch[x]) {
      case Branch::kContext: expected = dot(fc, w.row(x)) + dot(fpd, dec_t.table.row(x)); break;
      case Branch::kEncoder: expected = dot(fe, w.row(x)) + dot(fpe, enc_t.table.row(x)); break;
      case Branch::kRerank1: expected = dot(fr1, w.row(x)); break;
      default: break;
    }
    EXPECT_NEAR(logits[x], expected, 1e-13) << x;
  }
  EXPECT_EQ(part.branch[2], Branch::kContext);
  EXPECT_EQ(part.branch[3], Branch::kEncoder);
  EXPECT_THROW(cepr_logits<double>(q, w, part, dec_t, nullptr, proj), ModeError);
}

TEST(SoftmaxP, HandWorkedFourWordCase) {
  ParameterSet<double> ps;
  add_proj(ps, "L_V", eye(2));
  add_proj(ps, "L_PD", eye(2, 2.0));
  HeadProjections<double> proj(ps);
  Tensor<double> w(Shape{4, 2}, std::vector<double>{1, 0, 0, 1, 1, 1, -1, 0});
  const std::vector<double> q{1, 2};
  LocalEmbeddingTable<double> local{Tensor<double>::matrix(4, 2), std::vector<std::size_t>(4, 0)};
  local.table.at(2, 0) = 0.5;
  local.table.at(3, 1) = 1.0;
  const std::vector<int> ctx{2, 3};
  // f_PD = (2, 4): word 2 gains 1, word 3 gains 4.
  EXPECT_EQ(softmax_p_logits<double>(q, w, ctx, local, proj), (std::vector<double>{1, 2, 4, 3}));
  EXPECT_EQ(softmax_p_logits<double>(q, w, {}, local, proj), standard_logits<double>(q, w, proj));
}

TEST(MosProbs, ComponentSpecialCases) {
  ParameterSet<double> ps;
  add_proj(ps, "L_V", eye(2));
  add_proj(ps, "mos.L_0", eye(2));
  add_proj(ps, "mos.L_1", eye(2));
  add_proj(ps, "mos.gate", Tensor<double>::matrix(2, 2), {std::log(0.3), std::log(0.7)});
  HeadProjections<double> proj(ps);
  Tensor<double> w(Shape{3, 2}, std::vector<double>{1, 0, 0, 1, 1, 1});
  const std::vector<double> q{0.2, -0.4};
  const auto single = mos_probs<double>(q, w, proj, 2);
  const auto lv = standard_logits<double>(q, w, proj);
  double z = 0;
  for (double v : lv) z += std::exp(v);
  for (std::size_t x = 0; x < 3; ++x) EXPECT_NEAR(single[x], std::exp(lv[x]) / z, 1e-15);

  ParameterSet<double> ps2;
  add_proj(ps2, "mos.L_0", eye(2));
  add_proj(ps2, "mos.L_1", Tensor<double>(Shape{2, 2}, std::vector<double>{0, 1, 1, 0}));
  add_proj(ps2, "mos.gate", Tensor<double>::matrix(2, 2), {std::log(0.3), std::log(0.7)});
  HeadProjections<double> proj2(ps2);
  const auto mixed = mos_probs<double>(q, w, proj2, 2);
  const double a[3] = {std::exp(0.2), std::exp(-0.4), std::exp(-0.2)};
  const double b[3] = {std::exp(-0.4), std::exp(0.2), std::exp(-0.2)};
  const double za = a[0] + a[1] + a[2], zb = b[0] + b[1] + b[2];
  for (std::size_t x = 0; x < 3; ++x) EXPECT_NEAR(mixed[x], 0.3 * a[x] / za + 0.7 * b[x] / zb, 1e-15);
}

TEST(MosProbs, OneComponentIsSoftmax) {
  ParameterSet<double> ps;
  add_proj(ps, "L_V", eye(2));
  add_proj(ps, "mos.L_0", eye(2));
  add_proj(ps, "mos.gate", Tensor<double>::matrix(1, 2), {0.4});
  HeadProjections<double> proj(ps);
  Tensor<double> w(Shape{3, 2}, std::vector<double>{1, 2, 0, 1, -1, 1});
  const std::vector<double> q{0.5, 0.1};
  const auto p = mos_probs<double>(q, w, proj, 1);
  const auto lv = standard_logits<double>(q, w, proj);
  double z = 0;
  for (double v : lv) z += std::exp(v);
  for (std::size_t x = 0; x < 3; ++x) EXPECT_NEAR(p[x], std::exp(lv[x]) / z, 1e-15);
}

// Word 3 has a zero embedding, so the standard distribution is softmax(1, 0, 0, 0).
struct PointerSetup {
  ParameterSet<double> ps;
  Tensor<double> w{Shape{4, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0}};
  std::vector<double> q{1, 0, 0};
  std::vector<double> h{0.5, 0.5, 0};
  PointerSetup(double b, double b_ptr) {
    add_proj(ps, "L_V", eye(3));
    add_proj(ps, "L_PE", eye(3));
    add_proj(ps, "L_LE", eye(3));
    ps.add("head.b", Tensor<double>(Shape{1}, b));
    ps.add("head.v", Tensor<double>(Shape{3}, std::vector<double>{1, 1, 1}));
    ps.add("head.b_vec", Tensor<double>(Shape{3}));
    ps.add("head.ptr_q", Tensor<double>(Shape{1, 3}, std::vector<double>{1, 1, 0}));
    ps.add("head.b_ptr", Tensor<double>(Shape{1}, b_ptr));
    ps.add("head.sentinel_q", Tensor<double>(Shape{1, 3}, std::vector<double>{2, 0, 0}));
  }
};

std::vector<double> softmax_vec(const std::vector<double>& x) {
  double z = 0;
  for (double v : x) z += std::exp(v);
  std::vector<double> p;
  for (double v : x) p.push_back(std::exp(v) / z);
  return p;
}

void expect_all_near(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t x = 0; x < a.size(); ++x) EXPECT_NEAR(a[x], b[x], tol) << x;
}

const std::vector<double> kSoft = softmax_vec({1, 0, 0, 0});

TEST(CopyNet, HandCaseAndLimits) {
  PointerSetup s(0.0, 0.0);
  HeadProjections<double> proj(s.ps);
  Tensor<double> src(Shape{1, 3}, std::vector<double>{0, 2, 0});
  const std::vector<int> ids{3};
  const double e = std::exp(1.0);
  expect_all_near(copynet_probs<double>(s.q, s.w, src, ids, proj),
                  {e / (e + 4), 1 / (e + 4), 1 / (e + 4), 2 / (e + 4)}, 1e-15);

  const std::vector<int> bos{kBosId}, pad{kPadId};
  expect_all_near(copynet_probs<double>(s.q, s.w, src, bos, proj), kSoft, 1e-15);
  expect_all_near(copynet_probs<double>(s.q, s.w, src, pad, proj), kSoft, 1e-15);
  PointerSetup off(-std::numeric_limits<double>::infinity(), 0.0);
  HeadProjections<double> proj_off(off.ps);
  expect_all_near(copynet_probs<double>(off.q, off.w, src, ids, proj_off), kSoft, 1e-15);
}

TEST(PointerGenerator, GateExtremesAndHandCase) {
  Tensor<double> one(Shape{1, 3}, std::vector<double>{0, 1, 0});
  const std::vector<int> one_id{3};
  {
    PointerSetup s(0.0, 1e4);
    HeadProjections<double> proj(s.ps);
    expect_all_near(pointer_generator_probs<double>(s.q, s.h, s.w, one, one_id, proj), kSoft, 1e-15);
  }
  {
    PointerSetup s(0.0, -1e4);
    HeadProjections<double> proj(s.ps);
    expect_all_near(pointer_generator_probs<double>(s.q, s.h, s.w, one, one_id, proj),
                    {0, 0, 0, 1}, 1e-15);
  }
  {
    PointerSetup s(0.0, 0.25);
    HeadProjections<double> proj(s.ps);
    Tensor<double> src(Shape{2, 3}, std::vector<double>{0, 1, 0, 0, 0, -1});
    const std::vector<int> ids{1, 3};
    const auto p = pointer_generator_probs<double>(s.q, s.h, s.w, src, ids, proj);
    const double pg = 1 / (1 + std::exp(-(1.0 + 0.25)));
    const double e0 = std::tanh(1.0) + std::tanh(1.0), e1 = std::tanh(1.0) + std::tanh(-1.0);
    const double a0 = std::exp(e0) / (std::exp(e0) + std::exp(e1));
    expect_all_near(p, {pg * kSoft[0], pg * kSoft[1] + (1 - pg) * a0, pg * kSoft[2],
                        pg * kSoft[3] + (1 - pg) * (1 - a0)}, 1e-15);
  }
}

TEST(PointerSentinel, EmptySourceAndHandCase) {
  PointerSetup s(0.5, 0.0);
  HeadProjections<double> proj(s.ps);
  Tensor<double> none = Tensor<double>::matrix(0, 3);
  expect_all_near(pointer_sentinel_probs<double>(s.q, s.h, s.w, none, {}, proj), kSoft, 1e-15);
  PointerSetup off(-std::numeric_limits<double>::infinity(), 0.0);
  HeadProjections<double> proj_off(off.ps);
  Tensor<double> src(Shape{2, 3}, std::vector<double>{1, 0, 0, 0, 3, 0});
  const std::vector<int> ids{3, 1};
  expect_all_near(pointer_sentinel_probs<double>(off.q, off.h, off.w, src, ids, proj_off), kSoft,
                  1e-15);

  // z = [q_s.h, f_PE.tanh(h_0) + b, f_PE.tanh(h_1) + b] = [1, tanh(1)+.5, .5]
  const double z0 = std::exp(1.0), z1 = std::exp(std::tanh(1.0) + 0.5), z2 = std::exp(0.5);
  const double zp = z0 + z1 + z2;
  expect_all_near(pointer_sentinel_probs<double>(s.q, s.h, s.w, src, ids, proj),
                  {z0 / zp * kSoft[0], z0 / zp * kSoft[1] + z2 / zp, z0 / zp * kSoft[2],
                   z0 / zp * kSoft[3] + z1 / zp}, 1e-15);
}

TEST(HeadNll, UniformAndHandCases) {
  Graph<double> g(false);
  auto lp = ops::log_softmax(g.constant(Tensor<double>::matrix(3, 4)));
  const std::vector<int> t{0, 3, 1};
  EXPECT_NEAR(ops::nll(lp, t).value()[0], std::log(4.0), 1e-15);
  Tensor<double> logits(Shape{3, 2}, std::vector<double>{0, 0, std::log(3.0), 0, 50, -50});
  auto lp2 = ops::log_softmax(g.constant(logits));
  const std::vector<int> t2{1, 0, -1};
  EXPECT_NEAR(ops::nll(lp2, t2).value()[0], -(std::log(0.5) + std::log(0.75)) / 2, 1e-15);
}

TEST(HeadConfig, ValidationAndLabels) {
  auto m = tiny_model(10);
  EXPECT_THROW(head_of(HeadKind::kCpr, 5, 3).validate(m), ConfigError);
  EXPECT_THROW(head_of(HeadKind::kCepr).validate(m), ModeError);
  auto mi = head_of(HeadKind::kCpr, 20, 100, true);
  mi.mi_rows = 4;
  EXPECT_THROW(mi.validate(m), ConfigError);
  EXPECT_EQ(head_of(HeadKind::kCpr, 20, 100, true).label(), "Softmax + CPR:20,100 + Mi");
  EXPECT_EQ(parse_head_kind("pointer_sentinel"), HeadKind::kPointerSentinel);
  EXPECT_THROW(parse_head_kind("bogus"), ConfigError);
}

// ---------------------------------------------------------------------------
// Batched heads.

template <typename T>
Tensor<T> logits_of(LanguageModel<T>& lm, const TokenBatch& b) {
  Graph<T> g(false);
  auto out = lm.forward(g, b);
  return out.logits.valid() ? out.logits.value() : out.log_probs.value();
}

const HeadKind kAllKinds[] = {
    HeadKind::kSoftmax, HeadKind::kMos,     HeadKind::kContext,          HeadKind::kRerank,
    HeadKind::kPointer, HeadKind::kCpr,     HeadKind::kCepr,             HeadKind::kCopyNet,
    HeadKind::kPointerGenerator,            HeadKind::kPointerSentinel,
};

TEST(BatchedHeads, InitialisedPartitionHeadsMatchSoftmax) {
  std::mt19937_64 rng(21);
  for (bool mi : {false, true})
    for (HeadKind kind : {HeadKind::kContext, HeadKind::kRerank, HeadKind::kPointer,
                          HeadKind::kCpr, HeadKind::kCepr}) {
      const bool s2s = kind == HeadKind::kCepr;
      auto m = tiny_model(30, s2s);
      auto b = random_batch(rng, 2, 10, 30, s2s ? 6 : 0);
      LanguageModel<float> base(m, head_of(HeadKind::kSoftmax, 0, 0, mi), 5);
      LanguageModel<float> lm(m, head_of(kind, 3, 7, mi), 5);
      const auto a = logits_of(base, b), c = logits_of(lm, b);
      double worst = 0;
      for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, double(std::abs(a[i] - c[i])));
      EXPECT_LE(worst, 1e-5) << head_kind_name(kind) << " mi=" << mi;
    }
}

TEST(BatchedHeads, PointerHeadMatchesSoftmaxClosely) {
  std::mt19937_64 rng(23);
  auto m = tiny_model(30);
  auto b = random_batch(rng, 2, 10, 30);
  LanguageModel<double> base(m, head_of(HeadKind::kSoftmax), 5);
  LanguageModel<double> lm(m, head_of(HeadKind::kPointer), 5);
  const auto a = logits_of(base, b), c = logits_of(lm, b);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], c[i], 1e-9);
}

// Perturbs every head parameter so that local terms and rerankers matter.
template <typename T>
void scramble_head(LanguageModel<T>& lm, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  perturb<T>(lm.params(), "head.", scale, rng);
}

TEST(BatchedHeads, UnselectedWordsKeepDefaultLogitsExactly) {
  std::mt19937_64 rng(22);
  auto m = tiny_model(25);
  LanguageModel<float> base(m, head_of(HeadKind::kSoftmax), 9);
  LanguageModel<float> lm(m, head_of(HeadKind::kCpr, 2, 5), 9);
  scramble_head(lm, 1);
  // Keep L_V equal to the baseline so the default branch is comparable.
  lm.params().at("head.L_V.weight").value = base.params().at("head.L_V.weight").value;
  lm.params().at("head.L_V.bias").value = base.params().at("head.L_V.bias").value;
  auto b = random_batch(rng, 2, 8, 25);
  const auto a = logits_of(base, b), c = logits_of(lm, b);
  std::size_t changed = 0;
  for (std::size_t r = 0; r < b.rows(); ++r) {
    std::size_t row_changed = 0;
    for (std::size_t x = 0; x < 25; ++x)
      if (a.at(r, x) != c.at(r, x)) ++row_changed;
    // context (<= t distinct words) + k2 rerank entries at most
    EXPECT_LE(row_changed, (r % b.seq_len) + 5);
    changed += row_changed;
  }
  EXPECT_GT(changed, 0u);
}

TEST(BatchedHeads, DonutContextWordIsSuppressed) {
  std::mt19937_64 rng(24);
  auto m = tiny_model(20);
  LanguageModel<double> base(m, head_of(HeadKind::kSoftmax), 3);
  LanguageModel<double> lm(m, head_of(HeadKind::kCpr, 0, 0), 3);
  TokenBatch b;
  b.batch = 1;
  b.seq_len = 4;
  b.tokens = {kBosId, 7, 9, 11};
  b.targets = {7, 9, 11, 12};
  const auto& w = lm.body().output_embedding().value;
  // f_C = -alpha * w_7 regardless of the hidden state.
  lm.params().at("head.L_C.weight").value.fill(0.0);
  auto& bias = lm.params().at("head.L_C.bias").value;
  for (std::size_t c = 0; c < bias.size(); ++c) bias[c] = -1000.0 * w.at(7, c);
  const auto a = logits_of(base, b), c = logits_of(lm, b);
  for (std::size_t t = 1; t < 4; ++t) {
    double min_other = std::numeric_limits<double>::infinity();
    for (std::size_t x = 0; x < 20; ++x) {
      if (x == 7) continue;
      min_other = std::min(min_other, c.at(t, x));
      const bool in_context = (x == 9 && t >= 2) || (x == 11 && t >= 3);
      if (!in_context) EXPECT_EQ(c.at(t, x), a.at(t, x));
    }
    EXPECT_LT(c.at(t, 7), min_other);
  }
  EXPECT_EQ(c.at(0, 7), a.at(0, 7));
}

TEST(BatchedHeads, ContextLogitIndependentOfRerankSizes) {
  std::mt19937_64 rng(25);
  auto m = tiny_model(20);
  auto b = random_batch(rng, 2, 8, 20);
  LanguageModel<double> small(m, head_of(HeadKind::kCpr, 1, 2), 4);
  LanguageModel<double> large(m, head_of(HeadKind::kCpr, 4, 9), 4);
  scramble_head(small, 2);
  scramble_head(large, 2);
  const auto a = logits_of(small, b), c = logits_of(large, b);
  for (std::size_t bi = 0; bi < b.batch; ++bi)
    for (std::size_t t = 0; t < b.seq_len; ++t) {
      const std::size_t r = bi * b.seq_len + t;
      for (std::size_t j = 1; j <= t; ++j) {
        const auto x = static_cast<std::size_t>(b.tokens[r - t + j]);
        EXPECT_EQ(a.at(r, x), c.at(r, x));
      }
    }
}

TEST(BatchedHeads, ProbabilityHeadsNormalise) {
  std::mt19937_64 rng(26);
  for (bool s2s : {false, true})
    for (HeadKind kind : {HeadKind::kMos, HeadKind::kCopyNet, HeadKind::kPointerGenerator,
                          HeadKind::kPointerSentinel}) {
      auto m = tiny_model(30, s2s);
      auto hc = head_of(kind);
      hc.copy_bias = 0.0;
      LanguageModel<double> lm(m, hc, 6);
      scramble_head(lm, 3);
      auto b = random_batch(rng, 3, 7, 30, s2s ? 5 : 0);
      Graph<double> g(false);
      const auto lp = lm.forward(g, b).log_probs.value();
      for (std::size_t r = 0; r < lp.rows(); ++r) {
        double s = 0;
        for (double v : lp.row(r)) s += std::exp(v);
        EXPECT_NEAR(s, 1.0, 1e-9) << head_kind_name(kind);
      }
    }
}

// ---------------------------------------------------------------------------
// Graph heads against the single-position evaluator.

std::vector<int> distinct_content(std::span<const int> tokens) {
  std::vector<int> out;
  for (int id : tokens)
    if (id != kBosId && id != kPadId && std::find(out.begin(), out.end(), id) == out.end())
      out.push_back(id);
  return out;
}

Tensor<double> rows_of(const Tensor<double>& m, std::size_t begin, std::size_t end) {
  Tensor<double> out = Tensor<double>::matrix(end - begin, m.cols());
  for (std::size_t r = begin; r < end; ++r) std::copy_n(m.row(r).data(), m.cols(), out.row(r - begin).data());
  return out;
}

void cross_check(HeadKind kind, bool s2s, bool mi, std::uint64_t seed) {
  SCOPED_TRACE(std::string(head_kind_name(kind)) + (mi ? " + Mi" : "") + (s2s ? " seq2seq" : ""));
  std::mt19937_64 rng(seed);
  const std::size_t vocab = 14;
  auto m = tiny_model(vocab, s2s);
  auto hc = head_of(kind, 2, 4, mi);
  hc.copy_bias = 0.0;
  LanguageModel<double> lm(m, hc, seed);
  scramble_head(lm, seed + 1);
  auto b = random_batch(rng, 2, 7, vocab, s2s ? 5 : 0);
  b.tokens[4] = kPadId;
  Graph<double> g(false);
  auto in = lm.head_input(g, b);
  auto out = lm.head().forward(g, in);
  const auto q_graph = lm.head().context_feature(g, in).value();
  const auto& layers = in.states.layers;
  const auto& h_all = layers.back().value();
  const auto& w = lm.body().output_embedding().value;
  HeadProjections<double> proj(lm.params());
  const std::size_t seq = b.seq_len;

  // q for every row from the flattened Mi block
  Tensor<double> q_all = Tensor<double>::matrix(b.rows(), lm.head().feature_dim());
  for (std::size_t r = 0; r < b.rows(); ++r) {
    const std::size_t t = r % seq;
    std::vector<double> block;
    if (mi)
      for (std::size_t mrow = 0; mrow < hc.mi_rows; ++mrow)
        for (std::size_t i = 0; i < hc.mi_cols; ++i) {
          const auto& layer = layers[layers.size() - 1 - mrow].value();
          for (std::size_t c = 0; c < m.d_model; ++c)
            block.push_back(t >= i ? layer.at(r - i, c) : 0.0);
        }
    const auto q = build_context_feature<double>(h_all.row(r), block, proj, mi);
    std::copy(q.begin(), q.end(), q_all.row(r).data());
    for (std::size_t c = 0; c < q.size(); ++c) ASSERT_NEAR(q[c], q_graph.at(r, c), 1e-12);
  }

  for (std::size_t r = 0; r < b.rows(); ++r) {
    const std::size_t bi = r / seq, t = r % seq;
    const auto q = q_all.row(r);
    const auto prefix = std::span<const int>(b.tokens).subspan(bi * seq, t + 1);
    const auto ctx = distinct_content(prefix);
    std::vector<int> ctx_ids;
    std::vector<std::size_t> ctx_rows;
    for (std::size_t j = 0; j <= t; ++j)
      if (prefix[j] != kBosId && prefix[j] != kPadId) {
        ctx_ids.push_back(prefix[j]);
        ctx_rows.push_back(bi * seq + j);
      }
    Tensor<double> ctx_q = Tensor<double>::matrix(ctx_rows.size(), q_all.cols());
    for (std::size_t i = 0; i < ctx_rows.size(); ++i)
      std::copy_n(q_all.row(ctx_rows[i]).data(), q_all.cols(), ctx_q.row(i).data());
    LocalEmbeddingTable<double> local{Tensor<double>::matrix(vocab, m.d_model),
                                      std::vector<std::size_t>(vocab, 0)};
    if (proj.has("L_LD")) local = local_embedding_table<double>(ctx_q, ctx_ids, vocab, proj);

    std::vector<double> expected;
    bool probs = false;
    const auto lv = proj.has("L_V") ? standard_logits<double>(q, w, proj) : std::vector<double>{};
    switch (kind) {
      case HeadKind::kSoftmax: expected = lv; break;
      case HeadKind::kContext:
      case HeadKind::kRerank:
      case HeadKind::kCpr: {
        std::vector<double> lr2;
        if (hc.k1 > 0 && proj.has("L_R2")) {
          const auto f = proj.apply("L_R2", q);
          for (std::size_t x = 0; x < vocab; ++x) {
            double s = 0;
            for (std::size_t c = 0; c < f.size(); ++c) s += f[c] * w.at(x, c);
            lr2.push_back(s);
          }
        }
        const bool ctx_on = kind != HeadKind::kRerank;
        const bool part_on = kind != HeadKind::kContext;
        const auto part = build_cpr_partition<double>(
            lv, lr2, ctx_on ? ctx : std::vector<int>{}, part_on ? hc.k1 : 0, part_on ? hc.k2 : 0);
        expected = cpr_logits<double>(q, w, part, local, proj);
        break;
      }
      case HeadKind::kPointer: expected = softmax_p_logits<double>(q, w, ctx, local, proj); break;
      case HeadKind::kCepr: {
        const auto enc_tok = std::span<const int>(b.enc_tokens).subspan(bi * b.enc_len, b.enc_len);
        const auto enc = distinct_content(enc_tok);
        const auto enc_states = rows_of(in.states.encoder.value(), bi * b.enc_len, (bi + 1) * b.enc_len);
        const auto enc_table = local_embedding_table<double>(enc_states, enc_tok, vocab, proj, "L_LE");
        const auto part = build_cepr_partition<double>(lv, ctx, enc, hc.k1);
        expected = cepr_logits<double>(q, w, part, local, &enc_table, proj);
        break;
      }
      case HeadKind::kMos:
        expected = mos_probs<double>(q, w, proj, hc.mos_components);
        probs = true;
        break;
      default: {
        Tensor<double> src;
        std::vector<int> src_ids;
        if (s2s) {
          src = rows_of(in.states.encoder.value(), bi * b.enc_len, (bi + 1) * b.enc_len);
          src_ids.assign(b.enc_tokens.begin() + bi * b.enc_len, b.enc_tokens.begin() + (bi + 1) * b.enc_len);
        } else {
          src = rows_of(h_all, bi * seq, bi * seq + t + 1);
          src_ids.assign(prefix.begin(), prefix.end());
        }
        const auto h = h_all.row(r);
        if (kind == HeadKind::kCopyNet) expected = copynet_probs<double>(q, w, src, src_ids, proj);
        else if (kind == HeadKind::kPointerGenerator)
          expected = pointer_generator_probs<double>(q, h, w, src, src_ids, proj);
        else expected = pointer_sentinel_probs<double>(q, h, w, src, src_ids, proj);
        probs = true;
      }
    }
    ASSERT_EQ(expected.size(), vocab);
    for (std::size_t x = 0; x < vocab; ++x) {
      const double got = probs ? std::exp(out.log_probs.value().at(r, x)) : out.logits.value().at(r, x);
      EXPECT_NEAR(got, expected[x], 1e-10 * std::max(1.0, std::abs(expected[x])))
          << "row " << r << " word " << x;
    }
  }
}

TEST(BatchedHeads, AgreeWithSinglePositionEvaluator) {
  std::uint64_t seed = 100;
  for (HeadKind kind : kAllKinds)
    for (bool mi : {false, true}) {
      const bool s2s_only = kind == HeadKind::kCepr;
      const bool pointer = !is_logit_head(kind) && kind != HeadKind::kMos;
      if (!s2s_only) cross_check(kind, false, mi, seed++);
      if (s2s_only || pointer) cross_check(kind, true, mi, seed++);
    }
}

TEST(BatchedHeads, GradientsMatchFiniteDifferences) {
  std::uint64_t seed = 200;
  for (HeadKind kind : kAllKinds)
    for (bool s2s : {false, true}) {
      if (kind == HeadKind::kCepr && !s2s) continue;
      const bool mi = seed % 2 == 0;
      SCOPED_TRACE(std::string(head_kind_name(kind)) + (s2s ? " seq2seq" : "") + (mi ? " Mi" : ""));
      std::mt19937_64 rng(seed);
      auto m = tiny_model(12, s2s, 4);
      auto hc = head_of(kind, 2, 4, mi);
      hc.copy_bias = 0.0;
      LanguageModel<double> lm(m, hc, seed);
      scramble_head(lm, seed + 7, 0.3);
      auto b = random_batch(rng, 2, 5, 12, s2s ? 4 : 0);
      // LayerNorm at d=4 is strongly curved; a smaller step keeps truncation
      // error of the central difference well below the tolerance.
      GradCheckOptions opt;
      opt.eps = 1e-6;
      opt.max_coords = 4;
      const auto report = grad_check(
          [&](Graph<double>& g) { return lm.loss(g, b); }, lm.params(), opt);
      EXPECT_TRUE(report.passed) << report.worst_parameter << "[" << report.worst_index
                                 << "] rel " << report.max_rel_error;
      ++seed;
    }
}

}  // namespace
