#pragma once

// The full classifier: the three branches (only the masked-in ones are
// built), the fusion head, and ablation variants.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vyang/acoustic.hpp"
#include "vyang/fusion.hpp"
#include "vyang/glossary.hpp"
#include "vyang/visual.hpp"

namespace vyang {

enum class Variant { full, no_tokenizer_attn, no_depth_attn, no_mha };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_tokenizer_attn: return "no-tokenizer-attn";
    case Variant::no_depth_attn: return "no-depth-attn";
    case Variant::no_mha: return "no-mha";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::full, Variant::no_tokenizer_attn, Variant::no_depth_attn, Variant::no_mha})
    if (variant_name(v) == s) return v;
  throw Error("unknown variant '" + s + "' (expected full, no-tokenizer-attn, no-depth-attn or no-mha)");
}

struct ModelConfig {
  GlossaryConfig glossary;
  VisualConfig visual;
  AcousticConfig acoustic;
  FusionConfig fusion;
  ModalityMask mask;
  Variant variant = Variant::full;
  std::uint64_t seed = 0;

  // The configuration with the variant's component switched off.
  ModelConfig resolved() const {
    ModelConfig c = *this;
    c.glossary.token_attention = glossary.token_attention && variant != Variant::no_tokenizer_attn;
    c.visual.depth_attention = visual.depth_attention && variant != Variant::no_depth_attn;
    c.fusion.use_mha = fusion.use_mha && variant != Variant::no_mha;
    return c;
  }
};

class VyangModel {
 public:
  ModelConfig config;  // resolved
  std::size_t acoustic_dim = 0;
  std::optional<GlossaryEncoder> glossary;
  std::optional<VisualEncoder> visual;
  std::optional<AcousticBranch> acoustic;
  FusionHead fusion;
  // Branch evaluations so far, indexed by Modality.
  std::array<std::size_t, 3> branch_calls{0, 0, 0};

  VyangModel(const ModelConfig& cfg, const Vocabulary& vocab, const SpeakerTable& speakers, std::size_t acoustic_dim_)
      : config(cfg.resolved()), acoustic_dim(acoustic_dim_) {
    config.mask.validate();
    std::map<Modality, std::pair<std::size_t, std::size_t>> shapes;
    if (config.mask.glossary) {
      glossary.emplace(vocab, speakers, config.glossary, config.seed);
      shapes[Modality::glossary] = {glossary->block_dim(), glossary->segments()};
    }
    if (config.mask.visual) {
      visual.emplace(speakers, config.visual, config.seed);
      shapes[Modality::visual] = {visual->block_dim(), visual->segments()};
    }
    if (config.mask.acoustic) {
      acoustic.emplace(speakers, acoustic_dim);
      shapes[Modality::acoustic] = {acoustic->block_dim(), acoustic->segments()};
    }
    fusion = FusionHead(config.fusion, config.mask, shapes, config.seed);
  }

  // Segment blocks of one branch for one sample.
  std::vector<Var> branch_blocks(Tape& tape, Modality m, const Sample& s) {
    ++branch_calls[static_cast<std::size_t>(m)];
    switch (m) {
      case Modality::glossary: return glossary->segment_blocks(tape, s);
      case Modality::visual: return visual->segment_blocks(tape, s);
      case Modality::acoustic: return acoustic->segment_blocks(tape, s);
    }
    return {};
  }

  // Unnormalized class scores [2]. Dropout is applied to every L_x and to GVA in train mode.
  Var logits(Tape& tape, const Sample& s, Mode mode = Mode::eval, CounterRng* rng = nullptr, double dropout = 0.0) {
    if (mode == Mode::train && dropout > 0.0 && rng == nullptr) throw Error("train-mode dropout needs an rng");
    auto drop = [&](const Var& v) { return mode == Mode::train && dropout > 0.0 ? vyang::dropout(v, dropout, mode, *rng) : v; };
    std::vector<Var> lx;
    for (Modality m : config.mask.active()) lx.push_back(drop(fusion.head(m).forward(tape, branch_blocks(tape, m, s))));
    return fusion.logits(tape, drop(fusion.fuse(tape, lx)));
  }

  Var probabilities(Tape& tape, const Sample& s) { return classify(logits(tape, s)); }

  // P(sarcastic) from a gradient-free evaluation.
  double predict_proba(const Sample& s) {
    Tape tape(false);
    return probabilities(tape, s).value()[1];
  }
  int predict(const Sample& s) { return predict_proba(s) > 0.5 ? 1 : 0; }

  // Fits the fixed input standardization of the acoustic head on training samples.
  void fit_normalization(const std::vector<const Sample*>& train) {
    if (!acoustic || train.empty()) return;
    std::vector<double> rows;
    std::size_t n = 0;
    for (const Sample* s : train) {
      Tape tape(false);
      Tensor b = acoustic->features(tape, *s).value();
      rows.insert(rows.end(), b.data().begin(), b.data().end());
      ++n;
    }
    fusion.head(Modality::acoustic).fit_normalization(rows, n);
  }

  template <class F>
  void visit(F&& f) {
    if (glossary) glossary->visit(f);
    if (visual) visual->visit(f);
    fusion.visit(f);
  }

  // Fitted non-trainable state, as (name, tensor) pairs.
  template <class F>
  void visit_buffers(F&& f) {
    for (auto& [m, h] : fusion.heads) {
      f(h.prefix + ".norm_mean", h.norm_mean);
      f(h.prefix + ".norm_scale", h.norm_scale);
    }
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    visit([&](Parameter& p) { out.push_back(&p); });
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit([&](Parameter& p) { n += p.value.numel(); });
    return n;
  }
};

}  // namespace vyang
