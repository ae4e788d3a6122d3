#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "vyang/train.hpp"

using namespace vyang;
using namespace vyang::testing;

namespace {

FusionConfig small_fusion(bool token = true, bool mha = true) {
  FusionConfig c;
  c.dim = 6;
  c.heads = 2;
  c.token_mode = token;
  c.use_mha = mha;
  return c;
}

void set_identity(Linear& l) {
  l.weight.value.fill(0.0);
  for (std::size_t i = 0; i < std::min(l.in_dim(), l.out_dim()); ++i) l.weight.value.at({i, i}) = 1.0;
  l.bias.value.fill(0.0);
}

std::vector<Var> constants(Tape& t, const std::vector<Tensor>& xs) {
  std::vector<Var> out;
  for (const auto& x : xs) out.push_back(t.constant(x));
  return out;
}

// mean over rows of naive_mha(naive_linear(rows) + segment)
Tensor head_oracle(const std::vector<Tensor>& blocks, const Linear& proj, const MultiHeadAttentionLayer& mha,
                   const Tensor& segment) {
  std::size_t d = blocks[0].numel();
  Tensor x(Shape{blocks.size(), d});
  for (std::size_t i = 0; i < blocks.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) x.at({i, j}) = blocks[i][j];
  Tensor tokens = naive_linear(x, proj.weight.value, proj.bias.value);
  for (std::size_t i = 0; i < tokens.numel(); ++i) tokens[i] += segment[i];
  Tensor att = naive_mha(tokens, mha);
  Tensor out(Shape{att.dim(1)}, 0.0);
  for (std::size_t i = 0; i < att.dim(0); ++i)
    for (std::size_t j = 0; j < att.dim(1); ++j) out[j] += att.at({i, j}) / static_cast<double>(att.dim(0));
  return out;
}

bool ends_with(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

}  // namespace

TEST(ModalityHead, SingleSegmentTokenModeEqualsFlatMode) {
  CounterRng rng(1);
  ModalityHead token("fusion.LA", 7, 1, small_fusion(true), 3);
  ModalityHead flat("fusion.LA", 7, 1, small_fusion(false), 3);
  Tensor a = random_tensor({7}, rng);
  Tape tape;
  Tensor x = token.forward(tape, constants(tape, {a})).value();
  Tensor y = flat.forward(tape, constants(tape, {a})).value();
  ASSERT_EQ(x.shape(), (Shape{6}));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(x[i], y[i], 1e-15);
}

TEST(ModalityHead, IdentityAttentionLeavesProjection) {
  CounterRng rng(2);
  FusionConfig cfg = small_fusion();
  cfg.heads = 1;
  ModalityHead h("fusion.LG", 5, 1, cfg, 4);
  for (Linear* l : {&h.mha.wq, &h.mha.wk, &h.mha.wv, &h.mha.wo}) set_identity(*l);
  Tensor a = random_tensor({5}, rng);
  Tape tape;
  Tensor out = h.forward(tape, constants(tape, {a})).value();
  Tensor ref = naive_linear(a.reshaped({1, 5}), h.proj.weight.value, h.proj.bias.value);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(out[i], ref[i], 1e-14);
}

TEST(ModalityHead, ThreeSegmentsMatchSplitProjectAttendMeanOracle) {
  CounterRng rng(3);
  ModalityHead h("fusion.LG", 4, 3, small_fusion(), 8);
  h.visit([&](Parameter& p) {
    if (p.value.rank() == 1) p.value = random_tensor(p.shape(), rng, -0.3, 0.3);
  });
  h.segment.value = random_tensor({3, 6}, rng);
  std::vector<Tensor> blocks{random_tensor({4}, rng), random_tensor({4}, rng), random_tensor({4}, rng)};
  Tape tape;
  Tensor out = h.forward(tape, constants(tape, blocks)).value();
  Tensor ref = head_oracle(blocks, h.proj, h.mha, h.segment.value);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(out[i], ref[i], 1e-12);
  EXPECT_THROW(h.forward(tape, constants(tape, {blocks[0]})), DimensionError);
}

TEST(ModalityHead, StandardizationAppliesFittedStatistics) {
  ModalityHead h("fusion.LA", 2, 1, small_fusion(true, false), 1);
  h.fit_normalization({1.0, 10.0, 3.0, 30.0}, 2);
  EXPECT_EQ(h.norm_mean.values(), (std::vector<double>{2.0, 20.0}));
  EXPECT_NEAR(h.norm_scale[0], 1.0, 1e-15);
  EXPECT_NEAR(h.norm_scale[1], 0.1, 1e-15);
  Tape tape;
  Tensor out = h.forward(tape, constants(tape, {Tensor::vector({2.0, 20.0})})).value();
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(out[i], h.proj.bias.value[i], 1e-15);
}

TEST(Fuse, UnimodalIsDeterministic) {
  std::map<Modality, std::pair<std::size_t, std::size_t>> shapes{{Modality::visual, {4, 2}}};
  FusionHead f(small_fusion(), {false, true, false}, shapes, 2);
  CounterRng rng(4);
  Tensor l = random_tensor({6}, rng);
  Tape tape;
  EXPECT_EQ(f.fuse(tape, constants(tape, {l})).value(), f.fuse(tape, constants(tape, {l})).value());
  EXPECT_THROW(FusionHead(small_fusion(), {false, false, false}, shapes, 2), Error);
}

TEST(Fuse, IdenticalModalitiesAttendUniformly) {
  std::map<Modality, std::pair<std::size_t, std::size_t>> shapes{
      {Modality::glossary, {4, 2}}, {Modality::visual, {4, 2}}, {Modality::acoustic, {4, 1}}};
  FusionHead f(small_fusion(), {}, shapes, 2);
  CounterRng rng(5);
  Tensor l = random_tensor({6}, rng);
  Tape tape;
  std::vector<Tensor> weights;
  f.fuse(tape, constants(tape, {l, l, l}), &weights);
  ASSERT_EQ(weights.size(), 2u);
  for (const auto& w : weights)
    for (double v : w.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Fuse, BimodalMatchesTokenLoopOracle) {
  std::map<Modality, std::pair<std::size_t, std::size_t>> shapes{{Modality::glossary, {4, 2}},
                                                                 {Modality::acoustic, {4, 1}}};
  FusionHead f(small_fusion(), {true, false, true}, shapes, 6);
  CounterRng rng(6);
  f.visit([&](Parameter& p) {
    if (p.value.rank() == 1) p.value = random_tensor(p.shape(), rng, -0.3, 0.3);
  });
  f.fuse_segment.value = random_tensor({2, 6}, rng);
  std::vector<Tensor> lx{random_tensor({6}, rng), random_tensor({6}, rng)};
  Tape tape;
  Tensor out = f.fuse(tape, constants(tape, lx)).value();
  Tensor ref = head_oracle(lx, f.fuse_proj, f.fuse_mha, f.fuse_segment.value);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(out[i], ref[i], 1e-12);
  EXPECT_THROW(f.fuse(tape, constants(tape, {lx[0]})), DimensionError);
}

TEST(Classify, ClosedFormsAndShiftLaw) {
  Tape tape;
  std::map<Modality, std::pair<std::size_t, std::size_t>> shapes{{Modality::acoustic, {3, 1}}};
  FusionHead f(small_fusion(), {false, false, true}, shapes, 1);
  f.classifier.weight.value.fill(0.0);
  Tensor zero = classify(f.logits(tape, tape.constant(Tensor::vector({1, 2, 3, 4, 5, 6})))).value();
  EXPECT_EQ(zero.values(), (std::vector<double>{0.5, 0.5}));
  Tensor p = classify(tape.constant(Tensor::vector({0.0, std::log(3.0)}))).value();
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
  CounterRng rng(7);
  for (int i = 0; i < 50; ++i) {
    double a = rng.uniform(-5, 5), b = rng.uniform(-5, 5), c = rng.uniform(-100, 100);
    Tensor q = classify(tape.constant(Tensor::vector({a, b}))).value();
    Tensor r = classify(tape.constant(Tensor::vector({a + c, b + c}))).value();
    EXPECT_NEAR(q[0] + q[1], 1.0, 1e-12);
    EXPECT_EQ(q[1] > q[0], r[1] > r[0]);
  }
}

TEST(Loss, ClosedFormsAndBounds) {
  Tape tape;
  EXPECT_NEAR(cross_entropy(tape.constant(Tensor::vector({0.5, 0.5})), 1).value().item(), 0.6931471805599453, 1e-15);
  EXPECT_NEAR(cross_entropy(tape.constant(Tensor::vector({1e-13, 1.0 - 1e-13})), 1).value().item(), 0.0, 1e-12);
  EXPECT_NEAR(cross_entropy(tape.constant(Tensor::vector({1.0, 0.0})), 1).value().item(), -std::log(kProbEps), 1e-9);
  CounterRng rng(8);
  for (int i = 0; i < 100; ++i) {
    double p = rng.uniform();
    EXPECT_GE(cross_entropy(tape.constant(Tensor::vector({1 - p, p})), static_cast<int>(i % 2)).value().item(), 0.0);
  }
  EXPECT_THROW(cross_entropy(tape.constant(Tensor::vector({0.5, 0.5})), 2), Error);
}

TEST(Loss, SoftmaxCrossEntropyEqualsSigmoidBce) {
  CounterRng rng(9);
  for (int i = 0; i < 1000; ++i) {
    double l0 = rng.uniform(-8, 8), l1 = rng.uniform(-8, 8);
    int y = static_cast<int>(rng.below(2));
    Tape tape;
    double ce = cross_entropy(classify(tape.constant(Tensor::vector({l0, l1}))), y).value().item();
    double z = l1 - l0;
    double bce = y ? std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    EXPECT_NEAR(ce, bce, 1e-9);
  }
}

TEST(Adam, ZeroGradientFirstStepAndDeterminism) {
  Parameter p("w", Tensor::vector({1.0, -2.0}));
  AdamState st;
  adam_step({&p}, st, {});
  EXPECT_EQ(p.value.values(), (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(st.moments.at("w").first.values(), (std::vector<double>{0, 0}));
  EXPECT_EQ(st.moments.at("w").second.values(), (std::vector<double>{0, 0}));

  Parameter q("q", Tensor::scalar(0.0));
  AdamState sq;
  q.grad[0] = 1.0;
  adam_step({&q}, sq, {});
  EXPECT_NEAR(q.value[0], -0.001, 1e-10);

  auto run = [] {
    Parameter r("r", Tensor::vector({0.3, 0.7}));
    AdamState s;
    for (int i = 0; i < 20; ++i) {
      r.grad[0] = std::sin(i);
      r.grad[1] = std::cos(i);
      adam_step({&r}, s, {});
    }
    return r.value;
  };
  EXPECT_EQ(run(), run());

  AdamState bad;
  bad.moments.emplace("w", std::make_pair(Tensor(Shape{3}), Tensor(Shape{3})));
  EXPECT_THROW(adam_step({&p}, bad, {}), DimensionError);
}

TEST(Model, MaskedOutBranchesAreNeverEvaluated) {
  ModelConfig cfg = tiny_model_config();
  auto samples = fixture_samples(4, cfg);
  for (const auto& mask : ModalityMask::table_rows()) {
    cfg.mask = mask;
    VyangModel m(cfg, fixture_vocab(samples), fixture_speakers(), cfg.acoustic.dim());
    for (const auto& s : samples) m.predict(s);
    for (Modality x : {Modality::glossary, Modality::visual, Modality::acoustic})
      EXPECT_EQ(m.branch_calls[static_cast<std::size_t>(x)], mask.has(x) ? 4u : 0u) << mask.label();
    EXPECT_EQ(m.glossary.has_value(), mask.glossary);
    EXPECT_EQ(m.visual.has_value(), mask.visual);
  }
}

TEST(Model, VariantsSwitchOffOneComponent) {
  ModelConfig cfg = tiny_model_config();
  auto samples = fixture_samples(3, cfg);
  auto count = [&](Variant v) {
    ModelConfig c = cfg;
    c.variant = v;
    VyangModel m(c, fixture_vocab(samples), fixture_speakers(), c.acoustic.dim());
    Tape tape;
    EXPECT_EQ(m.logits(tape, samples[2]).shape(), (Shape{2}));
    return m.parameter_count();
  };
  std::size_t full = count(Variant::full);
  EXPECT_EQ(full - count(Variant::no_tokenizer_attn), 4u * (6 * 6 + 6));
  EXPECT_EQ(full - count(Variant::no_depth_attn), 2u * 2u * 6u);
  EXPECT_LT(count(Variant::no_mha), full);
  EXPECT_EQ(parse_variant("no-depth-attn"), Variant::no_depth_attn);
  EXPECT_THROW(parse_variant("none"), Error);
}

TEST(Model, FullTrimodalGradientsMatchFiniteDifferences) {
  ModelConfig cfg = tiny_model_config(1);  // d_h = d_v = d_f = 8, two heads, two conv blocks
  auto samples = fixture_samples(3, cfg, 7);
  VyangModel m(cfg, fixture_vocab(samples), fixture_speakers(), cfg.acoustic.dim());
  CounterRng rng(10);
  m.visit([&](Parameter& p) {
    if (p.value.rank() == 1 || ends_with(p.name, ".segment")) p.value = random_tensor(p.shape(), rng, -0.2, 0.2);
  });
  const Sample& s = samples[2];
  auto r = check_param_grads(
      [&](Tape& t) { return cross_entropy(classify(m.logits(t, s)), s.label); }, m.parameters(), 6);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_GT(r.checked, 200u);
}

TEST(Train, ZeroEpochsLeaveModelUnchanged) {
  ModelConfig cfg = tiny_model_config();
  auto samples = fixture_samples(4, cfg);
  VyangModel m(cfg, fixture_vocab(samples), fixture_speakers(), cfg.acoustic.dim());
  std::vector<Tensor> before;
  m.visit([&](Parameter& p) { before.push_back(p.value); });
  TrainConfig tc;
  tc.epochs = 0;
  EXPECT_TRUE(train_model(m, pointers(samples), tc).empty());
  std::size_t i = 0;
  m.visit([&](Parameter& p) { EXPECT_EQ(p.value, before[i++]); });
}

TEST(Train, SameSeedGivesIdenticalCurves) {
  ModelConfig cfg = tiny_model_config();
  auto samples = fixture_samples(6, cfg);
  auto run = [&] {
    VyangModel m(cfg, fixture_vocab(samples), fixture_speakers(), cfg.acoustic.dim());
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.seed = 11;
    auto curve = train_model(m, pointers(samples), tc);
    std::vector<double> flat;
    for (const auto& c : curve) flat.insert(flat.end(), {c.loss, c.metrics.accuracy, static_cast<double>(c.epoch)});
    return flat;
  };
  auto a = run();
  EXPECT_EQ(a.size(), 9u);
  EXPECT_EQ(a, run());
}

TEST(Train, MissingModalityNamesSample) {
  ModelConfig cfg = tiny_model_config();
  auto samples = fixture_samples(3, cfg);
  samples[1].utterance.frames.reset();
  VyangModel m(cfg, fixture_vocab(samples), fixture_speakers(), cfg.acoustic.dim());
  TrainConfig tc;
  tc.epochs = 1;
  try {
    train_model(m, pointers(samples), tc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("sample s1"), std::string::npos) << e.what();
  }
}

TEST(Train, FitsSmallSeparableSet) {
  ModelConfig cfg = tiny_model_config();
  cfg.mask = {false, false, true};
  auto samples = fixture_samples(16, cfg);
  for (auto& s : samples) (*s.utterance.audio)[0] = s.label ? 1.5 : -1.5;
  VyangModel m(cfg, fixture_vocab(samples), fixture_speakers(), cfg.acoustic.dim());
  TrainConfig tc;
  tc.epochs = 40;
  tc.batch_size = 4;
  tc.learning_rate = 0.01;
  tc.dropout = 0.0;
  auto curve = train_model(m, pointers(samples), tc, {}, {0, {}});
  ASSERT_EQ(curve.size(), 1u);
  EXPECT_EQ(curve[0].metrics.accuracy, 100.0);
}
