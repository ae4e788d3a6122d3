#pragma once

// Small in-memory samples and a tiny model configuration for tests.

#include <string>
#include <vector>

#include "support/gradcheck.hpp"
#include "vyang/model.hpp"

namespace vyang::testing {

inline ModelConfig tiny_model_config(std::size_t context = 1) {
  ModelConfig c;
  c.glossary.embed_dim = 6;
  c.glossary.hidden = 8;
  c.glossary.context = context;
  c.glossary.token_heads = 2;
  c.visual.height = 6;
  c.visual.width = 6;
  c.visual.conv_channels = 4;
  c.visual.blocks = 2;
  c.visual.shuffle_groups = 2;
  c.visual.out_dim = 8;
  c.visual.context = context;
  c.acoustic.mel_bands = 5;
  c.fusion.dim = 8;
  c.fusion.heads = 2;
  c.seed = 5;
  return c;
}

inline Turn fixture_turn(const std::string& text, const std::string& speaker, CounterRng& rng,
                         const ModelConfig& cfg) {
  Turn t;
  t.text = text;
  t.speaker = speaker;
  t.frames = random_tensor({1 + rng.below(2), cfg.visual.channels, cfg.visual.height, cfg.visual.width}, rng, 0.0, 1.0);
  t.audio = random_tensor({cfg.acoustic.dim()}, rng, -2.0, 2.0);
  return t;
}

inline std::vector<Sample> fixture_samples(std::size_t n, const ModelConfig& cfg, std::uint64_t seed = 1) {
  CounterRng rng(seed, "fixture");
  const std::vector<std::string> texts{"oh i hope that post is for you", "yeah , right", "sure thing",
                                       "what a great idea", "i love mondays", "that is fine"};
  const std::vector<std::string> speakers{"CHANDLER", "MONICA", "SHELDON"};
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.id = "s" + std::to_string(i);
    s.show = i % 3 == 0 ? "FRIENDS" : "BBT";
    s.label = static_cast<int>(i % 2);
    s.utterance = fixture_turn(texts[i % texts.size()], speakers[i % speakers.size()], rng, cfg);
    for (std::size_t c = 0; c < i % 3; ++c)
      s.context.push_back(fixture_turn(texts[(i + c + 1) % texts.size()], speakers[(i + c) % 3], rng, cfg));
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<const Sample*> pointers(const std::vector<Sample>& v) {
  std::vector<const Sample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

inline Vocabulary fixture_vocab(const std::vector<Sample>& v) {
  std::vector<std::string> texts;
  for (const auto& s : v) {
    texts.push_back(*s.utterance.text);
    for (const auto& c : s.context) texts.push_back(*c.text);
  }
  return Vocabulary::build(texts);
}

inline SpeakerTable fixture_speakers() { return SpeakerTable::build({"CHANDLER", "MONICA", "SHELDON"}); }

}  // namespace vyang::testing
