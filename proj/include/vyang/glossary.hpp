#pragma once

// Text branch: tokenizer, vocabulary, token self-attention, bidirectional
// tanh recurrence, and the speaker-aware utterance/context layout.

#include <cctype>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vyang/attention.hpp"
#include "vyang/features.hpp"
#include "vyang/nn.hpp"
#include "vyang/sample.hpp"

namespace vyang {

// Lowercases, splits on whitespace, and emits every ASCII punctuation
// character as its own token.
inline std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 128 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(c < 128 ? std::tolower(c) : c));
    }
  }
  flush();
  return out;
}

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  Vocabulary() : tokens_{"<pad>", "<unk>"} {}

  // Ids are assigned to the distinct corpus tokens in byte-lexicographic order.
  static Vocabulary build(const std::vector<std::string>& texts) {
    std::vector<std::string> all;
    for (const auto& t : texts)
      for (auto& tok : split_tokens(t)) all.push_back(std::move(tok));
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    Vocabulary v;
    for (auto& tok : all) v.add(std::move(tok));
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }

  std::size_t id(const std::string& tok) const {
    auto it = ids_.find(tok);
    return it == ids_.end() ? kUnk : it->second;
  }

  // Empty text maps to a single UNK token.
  std::vector<std::size_t> encode(std::string_view text) const {
    std::vector<std::size_t> ids;
    for (const auto& tok : split_tokens(text)) ids.push_back(id(tok));
    if (ids.empty()) ids.push_back(kUnk);
    return ids;
  }

  std::string to_tsv() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < tokens_.size(); ++i) os << tokens_[i] << '\t' << i << '\n';
    return os.str();
  }

  static Vocabulary from_tsv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    Vocabulary v;
    std::size_t expect = 0;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      auto tab = line.rfind('\t');
      if (tab == std::string::npos) throw IoError("vocabulary line without tab: " + line);
      std::string tok = line.substr(0, tab);
      if (std::stoul(line.substr(tab + 1)) != expect) throw IoError("vocabulary ids must be dense and ordered");
      if (expect >= 2) v.add(tok);
      ++expect;
    }
    if (expect < 2) throw IoError("vocabulary is missing the reserved tokens");
    return v;
  }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  void add(std::string tok) {
    if (ids_.count(tok) != 0 || tok == "<pad>" || tok == "<unk>") return;
    ids_.emplace(tok, tokens_.size());
    tokens_.push_back(std::move(tok));
  }

  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> ids_;
};

struct GlossaryConfig {
  std::size_t embed_dim = 300;
  std::size_t hidden = 64;  // per direction
  std::size_t context = 3;
  std::size_t token_heads = 1;
  bool token_attention = true;
};

struct RecurrentCell {
  Parameter wx;  // [in, hidden]
  Parameter wh;  // [hidden, hidden]
  Parameter b;   // [hidden]

  RecurrentCell() = default;
  RecurrentCell(const std::string& prefix, std::size_t in, std::size_t hidden, std::uint64_t seed)
      : wx(make_weight(prefix + ".wx", {in, hidden}, in, hidden, seed)),
        wh(make_weight(prefix + ".wh", {hidden, hidden}, hidden, hidden, seed)),
        b(make_constant(prefix + ".b", {hidden})) {}

  template <class F>
  void visit(F&& f) {
    f(wx);
    f(wh);
    f(b);
  }
};

class GlossaryEncoder {
 public:
  GlossaryConfig config;
  Vocabulary vocab;
  SpeakerTable speakers;
  Parameter embedding;  // [|V|, d_g], PAD row fixed at zero
  MultiHeadAttentionLayer tau;
  RecurrentCell forward_cell, backward_cell;

  GlossaryEncoder() = default;
  GlossaryEncoder(Vocabulary v, SpeakerTable s, GlossaryConfig cfg, std::uint64_t seed)
      : config(cfg), vocab(std::move(v)), speakers(std::move(s)) {
    embedding = make_weight("glossary.embedding", {vocab.size(), cfg.embed_dim}, vocab.size(), cfg.embed_dim, seed);
    for (std::size_t j = 0; j < cfg.embed_dim; ++j) embedding.value.at({Vocabulary::kPad, j}) = 0.0;
    tau = MultiHeadAttentionLayer("glossary.tau", cfg.embed_dim, cfg.token_heads, seed);
    forward_cell = RecurrentCell("glossary.rnn.fwd", cfg.embed_dim, cfg.hidden, seed);
    backward_cell = RecurrentCell("glossary.rnn.bwd", cfg.embed_dim, cfg.hidden, seed);
  }

  std::size_t utterance_dim() const { return 2 * config.hidden; }
  std::size_t block_dim() const { return utterance_dim() + speakers.dim(); }
  std::size_t feature_dim() const { return block_dim() * (1 + config.context); }
  std::size_t segments() const { return 1 + config.context; }

  // R_u: embeddings contextualized by one residual self-attention layer, [g, d_g].
  Var attention_tokenize(Tape& tape, const std::vector<std::size_t>& ids) {
    Var e = embedding_lookup(tape, ids);
    if (!config.token_attention) return e;
    return add(e, tau.forward(tape, e));
  }

  // Final-position hidden state of both directions, [2 d_h]. The backward
  // direction starts at the last token, so its state there has read that token only.
  Var encode_utterance(Tape& tape, const Var& r) {
    std::size_t g = r.dim(0);
    Var xf = linear(r, tape.param(forward_cell.wx), tape.param(forward_cell.b));
    Var whf = tape.param(forward_cell.wh);
    Var h = tanh(slice(xf, 0, 0, 1));
    for (std::size_t t = 1; t < g; ++t) h = tanh(add(slice(xf, 0, t, t + 1), matmul(h, whf)));
    Var last = slice(r, 0, g - 1, g);
    Var hb = tanh(linear(last, tape.param(backward_cell.wx), tape.param(backward_cell.b)));
    return reshape(concat({h, hb}, 1), {utterance_dim()});
  }

  Var encode_text(Tape& tape, const std::string& text) {
    return encode_utterance(tape, attention_tokenize(tape, vocab.encode(text)));
  }

  Var utterance_block(Tape& tape, const Turn& turn) {
    return append_speaker(tape, encode_text(tape, require_text(turn)), speakers.encode(turn.speaker));
  }

  // N chronological context slots, zero-padded at the front; empty when N == 0.
  // A context turn without text contributes a zero block.
  std::vector<Var> context_blocks(Tape& tape, const std::vector<Turn>& ctx) {
    return context_slots(tape, ctx.size(), config.context, block_dim(), [&](std::size_t i) {
      return ctx[i].text ? utterance_block(tape, ctx[i]) : tape.constant(Tensor(Shape{block_dim()}, 0.0));
    });
  }

  // G_cat split into its 1+N segment blocks.
  std::vector<Var> segment_blocks(Tape& tape, const Sample& s) {
    std::vector<Var> blocks{utterance_block(tape, s.utterance)};
    for (auto& b : context_blocks(tape, s.context)) blocks.push_back(b);
    return blocks;
  }

  Var features(Tape& tape, const Sample& s) { return concat_blocks(segment_blocks(tape, s)); }

  template <class F>
  void visit(F&& f) {
    f(embedding);
    if (config.token_attention) tau.visit(f);
    forward_cell.visit(f);
    backward_cell.visit(f);
  }

 private:
  Var embedding_lookup(Tape& tape, const std::vector<std::size_t>& ids) {
    return vyang::embedding(tape.param(embedding), ids, Vocabulary::kPad);
  }

  static const std::string& require_text(const Turn& t) {
    if (!t.text) throw Error("glossary branch: utterance has no text");
    return *t.text;
  }
};

}  // namespace vyang
