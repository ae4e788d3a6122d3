#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "vyang/visual.hpp"

using namespace vyang;
using vyang::testing::check_param_grads;
using vyang::testing::naive_conv;
using vyang::testing::probe_loss;
using vyang::testing::random_tensor;

namespace {

VisualConfig tiny(std::size_t context = 2) {
  VisualConfig c;
  c.height = 4;
  c.width = 4;
  c.conv_channels = 4;
  c.blocks = 2;
  c.shuffle_groups = 2;
  c.out_dim = 5;
  c.context = context;
  return c;
}

VisualEncoder encoder(VisualConfig cfg = tiny(), std::uint64_t seed = 3) {
  return VisualEncoder(SpeakerTable::build({"JOEY", "ROSS"}), cfg, seed);
}

bool is_bias(const Parameter& p) {
  for (const char* suffix : {".bias", ".b1", ".b2", ".gn_beta"}) {
    std::string s(suffix);
    if (p.name.size() >= s.size() && p.name.compare(p.name.size() - s.size(), s.size(), s) == 0) return true;
  }
  return false;
}

void randomize_biases(VisualEncoder& enc, CounterRng& rng) {
  enc.visit([&](Parameter& p) {
    if (is_bias(p)) p.value = random_tensor(p.shape(), rng, 0.0, 0.3);
  });
}

Tensor frames_of(const std::vector<Tensor>& frames) {
  std::vector<double> all;
  for (const auto& f : frames) all.insert(all.end(), f.data().begin(), f.data().end());
  Shape s{frames.size()};
  s.insert(s.end(), frames[0].shape().begin(), frames[0].shape().end());
  return Tensor(s, all);
}

Turn visual_turn(Tensor frames, const std::string& speaker) {
  Turn t;
  t.frames = std::move(frames);
  t.speaker = speaker;
  return t;
}

}  // namespace

TEST(SelfRegulatedBlock, ZeroHiddenStateGatesAtHalf) {
  CounterRng rng(1);
  SelfRegulatedBlock block("b", 4, 3, 2, false, 5);
  Tensor x = random_tensor({4, 4, 4}, rng);
  Tape tape;
  auto [y, h] = block.forward(tape, tape.constant(x), tape.constant(Tensor(Shape{4, 4, 4}, 0.0)));
  Tensor u = naive_conv(x, block.conv.kernels.value, block.conv.bias.value, 1, 1);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y.value()[i], 0.5 * std::max(0.0, u[i]) + x[i], 1e-13);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(h.shape(), x.shape());
}

TEST(SelfRegulatedBlock, MatchesCompositionOracle) {
  CounterRng rng(2);
  SelfRegulatedBlock block("b", 4, 3, 2, true, 9);
  block.visit([&](Parameter& p) {
    if (is_bias(p)) p.value = random_tensor(p.shape(), rng, -0.5, 0.5);
  });
  Tensor x = random_tensor({4, 4, 4}, rng);
  Tensor h = random_tensor({4, 4, 4}, rng);
  Tape tape;
  auto [y, h_out] = block.forward(tape, tape.constant(x), tape.constant(h));

  Tensor u = naive_conv(x, block.conv.kernels.value, block.conv.bias.value, 1, 1);
  for (double& v : u.data()) v = std::max(0.0, v);
  Tensor gpre = naive_conv(h, block.conv_h.kernels.value, block.conv_h.bias.value, 1, 1);
  Tensor pre(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) pre[i] = u[i] / (1.0 + std::exp(-gpre[i])) + x[i];
  Tape ref;
  Tensor y_ref = block.attention.forward(ref, ref.constant(pre)).value();
  std::vector<double> uh(u.data().begin(), u.data().end());
  uh.insert(uh.end(), h.data().begin(), h.data().end());
  Tensor mix = naive_conv(Tensor(Shape{8, 4, 4}, uh), block.conv_mix.kernels.value, block.conv_mix.bias.value, 1, 1);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_NEAR(y.value()[i], y_ref[i], 1e-12);
    EXPECT_NEAR(h_out.value()[i], std::tanh(mix[i]), 1e-12);
  }
  EXPECT_THROW(block.forward(tape, tape.constant(x), tape.constant(Tensor(Shape{4, 2, 2}))), DimensionError);
}

TEST(EncodeFrame, ShapeDeterminismAndZeroFrame) {
  auto enc = encoder();
  CounterRng rng(3);
  Tensor f = random_tensor({3, 4, 4}, rng, 0.0, 1.0);
  Tape tape;
  Tensor a = enc.encode_frame(tape, tape.constant(f)).value();
  Tensor b = enc.encode_frame(tape, tape.constant(f)).value();
  EXPECT_EQ(a.shape(), (Shape{5}));
  EXPECT_EQ(a, b);
  Tensor z = enc.encode_frame(tape, tape.constant(Tensor(Shape{3, 4, 4}, 0.0))).value();
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(enc.encode_frame(tape, tape.constant(Tensor(Shape{3, 5, 4}))), DimensionError);
}

TEST(EncodeFrame, NeverProducesNaNOnUnitRangeFrames) {
  auto enc = encoder();
  CounterRng rng(4);
  for (int i = 0; i < 20; ++i) {
    Tape tape;
    EXPECT_TRUE(enc.encode_frame(tape, tape.constant(random_tensor({3, 4, 4}, rng, 0.0, 1.0))).value().all_finite());
  }
}

TEST(UtteranceVisual, MeanOverFrames) {
  auto enc = encoder();
  CounterRng rng(5);
  randomize_biases(enc, rng);
  Tensor f1 = random_tensor({3, 4, 4}, rng, 0.0, 1.0);
  Tensor f2 = random_tensor({3, 4, 4}, rng, 0.0, 1.0);
  Tape tape;
  Tensor e1 = enc.encode_frame(tape, tape.constant(f1)).value();
  Tensor e2 = enc.encode_frame(tape, tape.constant(f2)).value();
  EXPECT_EQ(enc.encode_frames(tape, frames_of({f1})).value(), e1);
  Tensor copies = enc.encode_frames(tape, frames_of({f1, f1, f1})).value();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(copies[i], e1[i], 1e-15);
  Tensor avg = enc.encode_frames(tape, frames_of({f1, f2})).value();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(avg[i], 0.5 * (e1[i] + e2[i]), 1e-15);

  Tensor block = enc.utterance_block(tape, visual_turn(frames_of({f1, f2}), "ROSS")).value();
  EXPECT_EQ(block.numel(), 5u + 3u);
  EXPECT_EQ(block[5 + 1], 1.0);
  Turn empty;
  EXPECT_THROW(enc.utterance_block(tape, empty), Error);
}

TEST(UtteranceVisual, FrameOrderInvariant) {
  auto enc = encoder();
  CounterRng rng(6);
  randomize_biases(enc, rng);
  std::vector<Tensor> fs;
  for (int i = 0; i < 5; ++i) fs.push_back(random_tensor({3, 4, 4}, rng, 0.0, 1.0));
  Tape tape;
  Tensor a = enc.encode_frames(tape, frames_of(fs)).value();
  std::vector<Tensor> rev(fs.rbegin(), fs.rend());
  std::swap(rev[0], rev[2]);
  Tensor b = enc.encode_frames(tape, frames_of(rev)).value();
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(ContextVisual, SlotsAndPadding) {
  auto enc = encoder(tiny(2));
  CounterRng rng(7);
  randomize_biases(enc, rng);
  Tape tape;
  auto empty = enc.context_blocks(tape, {});
  ASSERT_EQ(empty.size(), 2u);
  for (auto& b : empty) EXPECT_EQ(b.value(), Tensor(Shape{8}, 0.0));

  Turn c1 = visual_turn(frames_of({random_tensor({3, 4, 4}, rng, 0, 1)}), "JOEY");
  Turn c2 = visual_turn(frames_of({random_tensor({3, 4, 4}, rng, 0, 1), random_tensor({3, 4, 4}, rng, 0, 1)}), "");
  Turn c3 = visual_turn(frames_of({random_tensor({3, 4, 4}, rng, 0, 1)}), "ROSS");
  auto single = enc.context_blocks(tape, {c1});
  EXPECT_EQ(single[0].value(), Tensor(Shape{8}, 0.0));
  EXPECT_EQ(single[1].value(), enc.utterance_block(tape, c1).value());

  // slot-by-slot oracle for three turns in two slots
  auto mixed = enc.context_blocks(tape, {c1, c2, c3});
  EXPECT_EQ(mixed[0].value(), enc.utterance_block(tape, c2).value());
  EXPECT_EQ(mixed[1].value(), enc.utterance_block(tape, c3).value());
  Turn no_frames;
  auto absent = enc.context_blocks(tape, {c1, no_frames});
  EXPECT_EQ(absent[1].value(), Tensor(Shape{8}, 0.0));
}

TEST(VisualFeatures, DimensionFormulaAndNoContext) {
  CounterRng rng(8);
  Sample s;
  s.utterance = visual_turn(frames_of({random_tensor({3, 4, 4}, rng, 0, 1)}), "JOEY");
  s.context = {visual_turn(frames_of({random_tensor({3, 4, 4}, rng, 0, 1)}), "ROSS")};
  auto n0 = encoder(tiny(0));
  Tape tape;
  EXPECT_EQ(n0.features(tape, s).value(), n0.utterance_block(tape, s.utterance).value());

  VisualConfig wide = tiny(2);
  wide.out_dim = 64;
  VisualEncoder big(SpeakerTable::build({"A", "B", "C", "D", "E", "F", "G"}), wide, 1);
  EXPECT_EQ(big.feature_dim(), 216u);
  EXPECT_EQ(big.features(tape, s).numel(), 216u);
  EXPECT_EQ(big.features(tape, s).value(), big.features(tape, s).value());
}

TEST(VisualFeatures, DepthAttentionAblationKeepsShapes) {
  VisualConfig cfg = tiny(1);
  cfg.depth_attention = false;
  auto plain = encoder(cfg);
  auto full = encoder(tiny(1));
  std::size_t n_plain = 0, n_full = 0;
  plain.visit([&](Parameter&) { ++n_plain; });
  full.visit([&](Parameter&) { ++n_full; });
  EXPECT_EQ(n_full - n_plain, 2u * 2u * 6u);  // two blocks, two groups, six tensors each
  CounterRng rng(9);
  Sample s;
  s.utterance = visual_turn(frames_of({random_tensor({3, 4, 4}, rng, 0, 1)}), "JOEY");
  Tape tape;
  EXPECT_EQ(plain.features(tape, s).shape(), full.features(tape, s).shape());
}

TEST(VisualFeatures, GradientsMatchFiniteDifferences) {
  VisualConfig cfg = tiny(1);
  cfg.height = 8;
  cfg.width = 8;
  auto enc = encoder(cfg, 21);
  CounterRng rng(10);
  randomize_biases(enc, rng);
  Sample s;
  s.utterance = visual_turn(frames_of({random_tensor({3, 8, 8}, rng, 0, 1), random_tensor({3, 8, 8}, rng, 0, 1)}), "JOEY");
  s.context = {visual_turn(frames_of({random_tensor({3, 8, 8}, rng, 0, 1)}), "ROSS")};
  std::vector<Parameter*> params;
  enc.visit([&](Parameter& p) { params.push_back(&p); });
  auto r = check_param_grads([&](Tape& t) { return probe_loss(t, enc.features(t, s)); }, params, 12);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_GT(r.checked, 100u);
}
