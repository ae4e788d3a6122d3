#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "vyang/glossary.hpp"

using namespace vyang;
using vyang::testing::check_param_grads;
using vyang::testing::naive_mha;
using vyang::testing::probe_loss;
using vyang::testing::random_tensor;

namespace {

GlossaryConfig small_config(std::size_t context = 2) {
  GlossaryConfig c;
  c.embed_dim = 6;
  c.hidden = 4;
  c.context = context;
  c.token_heads = 2;
  return c;
}

GlossaryEncoder small_encoder(std::size_t context = 2, bool attention = true) {
  auto vocab = Vocabulary::build({"oh i hope that scratching post is for you", "yeah right , sure"});
  auto speakers = SpeakerTable::build({"CHANDLER", "MONICA"});
  GlossaryConfig cfg = small_config(context);
  cfg.token_attention = attention;
  return GlossaryEncoder(vocab, speakers, cfg, 17);
}

Turn turn(const std::string& text, const std::string& speaker) {
  Turn t;
  t.text = text;
  t.speaker = speaker;
  return t;
}

std::vector<double> values(const Var& v) { return v.value().values(); }

}  // namespace

TEST(Tokenizer, SplitsWordsAndPunctuation) {
  EXPECT_EQ(split_tokens("I love it"), (std::vector<std::string>{"i", "love", "it"}));
  EXPECT_EQ(split_tokens("Oh, I hope that scratching post is for you."),
            (std::vector<std::string>{"oh", ",", "i", "hope", "that", "scratching", "post", "is", "for", "you", "."}));
  EXPECT_TRUE(split_tokens("").empty());
  EXPECT_EQ(split_tokens("don't!!"), (std::vector<std::string>{"don", "'", "t", "!", "!"}));
}

TEST(Vocabulary, ReservedIdsAndUnknownTokens) {
  auto v = Vocabulary::build({"b a", "c a"});
  EXPECT_EQ(v.size(), 5u);
  EXPECT_EQ(v.token(0), "<pad>");
  EXPECT_EQ(v.token(1), "<unk>");
  EXPECT_EQ(v.id("a"), 2u);
  EXPECT_EQ(v.id("c"), 4u);
  EXPECT_EQ(v.encode("A zzz c"), (std::vector<std::size_t>{2, Vocabulary::kUnk, 4}));
  EXPECT_EQ(v.encode(""), (std::vector<std::size_t>{Vocabulary::kUnk}));
}

TEST(Vocabulary, StableAcrossCorpusOrderAndRoundTrips) {
  auto a = Vocabulary::build({"x y z", "w"});
  auto b = Vocabulary::build({"w", "z y x"});
  EXPECT_EQ(a, b);
  EXPECT_EQ(Vocabulary::from_tsv(a.to_tsv()), a);
  EXPECT_EQ(a.to_tsv(), "<pad>\t0\n<unk>\t1\nw\t2\nx\t3\ny\t4\nz\t5\n");
}

TEST(SpeakerTable, OneHotUnknownAndMissing) {
  auto t = SpeakerTable::build({"SHELDON", "CHANDLER", "SHELDON", ""});
  EXPECT_EQ(t.dim(), 3u);
  EXPECT_EQ(t.encode("CHANDLER").values(), (std::vector<double>{1, 0, 0}));
  EXPECT_EQ(t.encode("SHELDON").values(), (std::vector<double>{0, 1, 0}));
  EXPECT_EQ(t.encode("RACHEL").values(), (std::vector<double>{0, 0, 1}));
  EXPECT_EQ(t.encode("").values(), (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(SpeakerTable::from_tsv(t.to_tsv()), t);
}

TEST(AppendSpeaker, ConcatenatesAndPartitions) {
  Tape tape;
  Tensor hot(Shape{3}, std::vector<double>{1, 0, 0});
  Var out = append_speaker(tape, tape.constant(Tensor::vector({1, 2})), hot);
  EXPECT_EQ(values(out), (std::vector<double>{1, 2, 1, 0, 0}));
  Var missing = append_speaker(tape, tape.constant(Tensor::vector({1, 2})), Tensor(Shape{3}, 0.0));
  EXPECT_EQ(values(missing), (std::vector<double>{1, 2, 0, 0, 0}));
  EXPECT_EQ(values(slice(out, 0, 0, 2)), (std::vector<double>{1, 2}));
  EXPECT_EQ(slice(out, 0, 2, 5).value(), hot);
}

TEST(AttentionTokenize, SingleTokenWithIdentityProjectionsDoubles) {
  auto enc = small_encoder();
  for (Linear* l : {&enc.tau.wq, &enc.tau.wk, &enc.tau.wv, &enc.tau.wo}) {
    l->weight.value.fill(0.0);
    for (std::size_t i = 0; i < 6; ++i) l->weight.value.at({i, i}) = 1.0;
  }
  Tape tape;
  std::size_t id = enc.vocab.id("hope");
  Tensor r = enc.attention_tokenize(tape, {id}).value();
  for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(r.at({0, j}), 2.0 * enc.embedding.value.at({id, j}));
}

TEST(AttentionTokenize, BypassReturnsRawEmbeddings) {
  auto enc = small_encoder(2, false);
  Tape tape;
  std::vector<std::size_t> ids{3, 5, 2};
  Tensor r = enc.attention_tokenize(tape, ids).value();
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(r.at({i, j}), enc.embedding.value.at({ids[i], j}));
}

TEST(AttentionTokenize, MatchesEmbedAttendAddOracle) {
  auto enc = small_encoder();
  std::vector<std::size_t> ids{4, 2, 7};
  Tensor e(Shape{3, 6});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 6; ++j) e.at({i, j}) = enc.embedding.value.at({ids[i], j});
  Tensor att = naive_mha(e, enc.tau);
  Tape tape;
  Tensor r = enc.attention_tokenize(tape, ids).value();
  for (std::size_t i = 0; i < r.numel(); ++i) EXPECT_NEAR(r[i], e[i] + att[i], 1e-12);
}

TEST(EncodeUtterance, LengthOneAndZeroWeights) {
  auto enc = small_encoder();
  Tape tape;
  CounterRng rng(3);
  Var one = enc.encode_utterance(tape, tape.constant(random_tensor({1, 6}, rng)));
  EXPECT_EQ(one.shape(), (Shape{8}));
  enc.forward_cell.visit([](Parameter& p) { p.value.fill(0.0); });
  enc.backward_cell.visit([](Parameter& p) { p.value.fill(0.0); });
  Tape fresh;  // a tape snapshots each parameter on first use
  Tensor z = enc.encode_utterance(fresh, fresh.constant(random_tensor({4, 6}, rng))).value();
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(EncodeUtterance, MatchesUnrolledRecurrence) {
  auto enc = small_encoder();
  CounterRng rng(4);
  for (Parameter* p : {&enc.forward_cell.b, &enc.backward_cell.b}) p->value = random_tensor({4}, rng);
  Tensor r = random_tensor({2, 6}, rng);
  auto step = [](const Tensor& x, std::size_t row, const RecurrentCell& c, const std::vector<double>& h) {
    std::vector<double> out(4);
    for (std::size_t j = 0; j < 4; ++j) {
      double s = c.b.value[j];
      for (std::size_t p = 0; p < 6; ++p) s += x.at({row, p}) * c.wx.value.at({p, j});
      for (std::size_t p = 0; p < 4; ++p) s += h[p] * c.wh.value.at({p, j});
      out[j] = std::tanh(s);
    }
    return out;
  };
  std::vector<double> zero(4, 0.0);
  auto h1 = step(r, 0, enc.forward_cell, zero);
  auto h2 = step(r, 1, enc.forward_cell, h1);
  auto hb = step(r, 1, enc.backward_cell, zero);
  Tape tape;
  Tensor out = enc.encode_utterance(tape, tape.constant(r)).value();
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(out[j], h2[j], 1e-14);
    EXPECT_NEAR(out[4 + j], hb[j], 1e-14);
  }
}

TEST(EncodeUtterance, DependsOnTokenOrder) {
  auto enc = small_encoder();
  Tape tape;
  auto a = values(enc.encode_text(tape, "oh i hope"));
  auto b = values(enc.encode_text(tape, "hope i oh"));
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(a[i] - b[i]);
  EXPECT_GT(diff, 1e-6);
}

TEST(EncodeContext, PadsAndTruncatesChronologically) {
  auto enc = small_encoder(2);
  std::size_t block = enc.block_dim();
  EXPECT_EQ(block, 8u + 3u);
  Tape tape;
  auto empty = enc.context_blocks(tape, {});
  ASSERT_EQ(empty.size(), 2u);
  for (auto& b : empty)
    for (double v : b.value().data()) EXPECT_EQ(v, 0.0);

  std::vector<Turn> ctx{turn("yeah right", "MONICA"), turn("sure", "CHANDLER"), turn("oh , post", "ROSS")};
  auto one = enc.context_blocks(tape, {ctx[0]});
  EXPECT_EQ(one[0].value(), Tensor(Shape{block}, 0.0));
  EXPECT_EQ(one[1].value(), enc.utterance_block(tape, ctx[0]).value());

  // list-slicing oracle: the window is ctx[len-N : len]
  std::vector<Turn> recent(ctx.end() - 2, ctx.end());
  auto three = enc.context_blocks(tape, ctx);
  ASSERT_EQ(three.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(three[i].value(), enc.utterance_block(tape, recent[i]).value());
  EXPECT_EQ(three[1].value()[8 + 2], 1.0);  // ROSS is unknown to the table
}

TEST(GlossaryFeatures, DimensionsAndNoContextCase) {
  Sample s;
  s.utterance = turn("oh i hope that scratching post is for you", "CHANDLER");
  s.context = {turn("yeah right", "MONICA")};
  auto n0 = small_encoder(0);
  Tape tape;
  EXPECT_EQ(n0.features(tape, s).value(), n0.utterance_block(tape, s.utterance).value());

  std::vector<std::string> seven{"A", "B", "C", "D", "E", "F", "G"};
  GlossaryConfig cfg;
  cfg.embed_dim = 4;
  cfg.hidden = 64;
  cfg.context = 2;
  GlossaryEncoder big(Vocabulary::build({"a b"}), SpeakerTable::build(seven), cfg, 1);
  EXPECT_EQ(big.feature_dim(), 408u);
  EXPECT_EQ(big.features(tape, s).numel(), 408u);

  auto enc = small_encoder(2);
  EXPECT_EQ(enc.features(tape, s).value(), enc.features(tape, s).value());
  Sample no_text;
  no_text.utterance.speaker = "MONICA";
  EXPECT_THROW(enc.features(tape, no_text), Error);
}

TEST(GlossaryFeatures, GradientsMatchFiniteDifferences) {
  auto enc = small_encoder(1);
  CounterRng rng(5);
  enc.visit([&](Parameter& p) {
    if (p.value.rank() == 1) p.value = random_tensor(p.shape(), rng, -0.3, 0.3);
  });
  Sample s;
  s.utterance = turn("oh , i hope", "MONICA");
  s.context = {turn("yeah right sure", "CHANDLER")};
  std::vector<Parameter*> params;
  enc.visit([&](Parameter& p) { params.push_back(&p); });
  auto r = check_param_grads([&](Tape& t) { return probe_loss(t, enc.features(t, s)); }, params);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  // the PAD row never receives gradient
  for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(enc.embedding.grad.at({0, j}), 0.0);
}
