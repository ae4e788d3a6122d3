#pragma once

// Per-modality projection + attention heads, cross-modal fusion, the 2-way
// softmax classifier, its loss, and Adam.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vyang/attention.hpp"
#include "vyang/nn.hpp"

namespace vyang {

enum class Modality { glossary = 0, visual = 1, acoustic = 2 };

inline const char* modality_letter(Modality m) {
  switch (m) {
    case Modality::glossary: return "G";
    case Modality::visual: return "V";
    case Modality::acoustic: return "A";
  }
  return "?";
}

struct ModalityMask {
  bool glossary = true;
  bool visual = true;
  bool acoustic = true;

  bool has(Modality m) const {
    return m == Modality::glossary ? glossary : m == Modality::visual ? visual : acoustic;
  }
  std::size_t count() const { return (glossary ? 1 : 0) + (visual ? 1 : 0) + (acoustic ? 1 : 0); }

  std::vector<Modality> active() const {
    std::vector<Modality> out;
    for (Modality m : {Modality::glossary, Modality::visual, Modality::acoustic})
      if (has(m)) out.push_back(m);
    return out;
  }

  void validate() const {
    if (count() == 0) throw Error("modality mask selects no modality");
  }

  // "g,v,a" style; letters may appear in any order.
  static ModalityMask parse(const std::string& s) {
    ModalityMask m{false, false, false};
    std::string cur;
    auto take = [&](const std::string& tok) {
      if (tok == "g" || tok == "G") m.glossary = true;
      else if (tok == "v" || tok == "V") m.visual = true;
      else if (tok == "a" || tok == "A") m.acoustic = true;
      else throw Error("unknown modality '" + tok + "' (expected g, v or a)");
    };
    for (char c : s) {
      if (c == ',' || c == '+' || c == ' ') {
        if (!cur.empty()) take(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) take(cur);
    m.validate();
    return m;
  }

  // Row label in table order, e.g. "G+V+A".
  std::string label() const {
    std::string out;
    for (Modality x : active()) out += (out.empty() ? "" : "+") + std::string(modality_letter(x));
    return out;
  }

  // The seven rows: unimodal G, V, A; bimodal G+V, V+A, G+A; trimodal.
  static std::vector<ModalityMask> table_rows() {
    return {{true, false, false}, {false, true, false}, {false, false, true}, {true, true, false},
            {false, true, true},  {true, false, true},  {true, true, true}};
  }

  bool operator==(const ModalityMask&) const = default;
};

struct FusionConfig {
  std::size_t dim = 64;  // d_f
  std::size_t heads = 4;
  bool token_mode = true;
  bool use_mha = true;
};

// L_x: segments -> tokens -> projection -> MHA -> mean over tokens.
// Without MHA the segments are concatenated and projected once.
class ModalityHead {
 public:
  std::string prefix;
  std::size_t block_dim = 0;
  std::size_t segments = 1;
  FusionConfig config;
  Linear proj;
  MultiHeadAttentionLayer mha;
  Parameter segment;  // [segments, d_f] added to the projected tokens; token mode only
  // Fixed per-feature standardization of the input blocks; identity unless fitted.
  Tensor norm_mean, norm_scale;

  ModalityHead() = default;
  ModalityHead(std::string prefix_, std::size_t block_dim_, std::size_t segments_, FusionConfig cfg,
               std::uint64_t seed)
      : prefix(std::move(prefix_)), block_dim(block_dim_), segments(segments_), config(cfg),
        norm_mean(Shape{block_dim_}, 0.0), norm_scale(Shape{block_dim_}, 1.0) {
    bool tokens = cfg.use_mha && cfg.token_mode;
    proj = Linear(prefix + ".proj", tokens ? block_dim : block_dim * segments, cfg.dim, seed);
    if (cfg.use_mha) mha = MultiHeadAttentionLayer(prefix + ".mha", cfg.dim, cfg.heads, seed);
    if (tokens) segment = make_constant(prefix + ".segment", {segments, cfg.dim}, 0.0);
  }

  bool tokens() const { return config.use_mha && config.token_mode; }

  std::size_t input_dim() const { return block_dim * segments; }

  Var forward(Tape& tape, const std::vector<Var>& blocks, std::vector<Tensor>* weights = nullptr) {
    if (blocks.size() != segments) {
      throw DimensionError(prefix + ": expected " + std::to_string(segments) + " segments, got " +
                           std::to_string(blocks.size()));
    }
    std::vector<Var> rows;
    for (const Var& b : blocks) {
      if (b.numel() != block_dim) {
        throw DimensionError(prefix + ": segment of " + std::to_string(b.numel()) + " features, expected " +
                             std::to_string(block_dim));
      }
      rows.push_back(standardize(tape, b));
    }
    if (tokens()) {
      Var t = add(proj(tape, stack(rows)), tape.param(segment));  // [segments, d_f]
      return mean(mha.forward(tape, t, weights), 0);
    }
    Var flat = reshape(rows.size() == 1 ? rows[0] : concat(rows, 0), {1, input_dim()});
    Var projected = proj(tape, flat);
    if (!config.use_mha) return reshape(projected, {config.dim});
    return reshape(mha.forward(tape, projected, weights), {config.dim});
  }

  // Sets the standardization from the row-major [n, block_dim] training blocks.
  void fit_normalization(const std::vector<double>& rows, std::size_t n) {
    for (std::size_t j = 0; j < block_dim; ++j) {
      double mu = 0.0;
      for (std::size_t i = 0; i < n; ++i) mu += rows[i * block_dim + j];
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (rows[i * block_dim + j] - mu) * (rows[i * block_dim + j] - mu);
      var /= static_cast<double>(n);
      norm_mean[j] = mu;
      // constant features (e.g. a speaker never seen in training) are only centered
      norm_scale[j] = var > kNormEps * kNormEps ? 1.0 / std::sqrt(var) : 1.0;
    }
  }

  template <class F>
  void visit(F&& f) {
    proj.visit(f);
    if (config.use_mha) mha.visit(f);
    if (tokens()) f(segment);
  }

 private:
  bool identity_norm() const {
    for (std::size_t j = 0; j < block_dim; ++j)
      if (norm_mean[j] != 0.0 || norm_scale[j] != 1.0) return false;
    return true;
  }

  Var standardize(Tape& tape, const Var& b) {
    if (identity_norm()) return b;
    return mul(sub(b, tape.constant(norm_mean)), tape.constant(norm_scale));
  }
};

// GVA from the active L_x vectors, then the 2-way classifier.
class FusionHead {
 public:
  FusionConfig config;
  ModalityMask mask;
  std::map<Modality, ModalityHead> heads;
  Linear fuse_proj;
  MultiHeadAttentionLayer fuse_mha;
  Parameter fuse_segment;  // [k, d_f], one row per active modality; token mode only
  Linear classifier;

  FusionHead() = default;

  // block_dims / segments are indexed by Modality.
  FusionHead(FusionConfig cfg, ModalityMask m, const std::map<Modality, std::pair<std::size_t, std::size_t>>& shapes,
             std::uint64_t seed)
      : config(cfg), mask(m) {
    m.validate();
    if (cfg.dim % cfg.heads != 0) {
      throw DimensionError("fusion dim " + std::to_string(cfg.dim) + " not divisible by " +
                           std::to_string(cfg.heads) + " heads");
    }
    for (Modality x : m.active()) {
      auto it = shapes.find(x);
      if (it == shapes.end()) throw Error(std::string("fusion: no feature shape for modality ") + modality_letter(x));
      heads.emplace(x, ModalityHead(std::string("fusion.L") + modality_letter(x), it->second.first, it->second.second,
                                    cfg, seed));
    }
    bool tokens = cfg.use_mha && cfg.token_mode;
    fuse_proj = Linear("fusion.gva.proj", tokens ? cfg.dim : cfg.dim * m.count(), cfg.dim, seed);
    if (cfg.use_mha) fuse_mha = MultiHeadAttentionLayer("fusion.gva.mha", cfg.dim, cfg.heads, seed);
    if (tokens) fuse_segment = make_constant("fusion.gva.segment", {m.count(), cfg.dim}, 0.0);
    classifier = Linear("fusion.classifier", cfg.dim, 2, seed);
  }

  ModalityHead& head(Modality m) { return heads.at(m); }

  // One L_x per active modality, in G, V, A order.
  Var fuse(Tape& tape, const std::vector<Var>& lx, std::vector<Tensor>* weights = nullptr) {
    if (lx.empty()) throw Error("fusion of an empty modality set");
    if (lx.size() != mask.count()) {
      throw DimensionError("fusion: " + std::to_string(lx.size()) + " modality features for a " +
                           std::to_string(mask.count()) + "-modality mask");
    }
    if (config.use_mha && config.token_mode) {
      Var tokens = add(fuse_proj(tape, stack(lx)), tape.param(fuse_segment));
      return mean(fuse_mha.forward(tape, tokens, weights), 0);
    }
    Var flat = reshape(lx.size() == 1 ? lx[0] : concat(lx, 0), {1, config.dim * lx.size()});
    Var projected = fuse_proj(tape, flat);
    if (!config.use_mha) return reshape(projected, {config.dim});
    return reshape(fuse_mha.forward(tape, projected, weights), {config.dim});
  }

  Var logits(Tape& tape, const Var& gva) { return reshape(classifier(tape, reshape(gva, {1, config.dim})), {2}); }

  template <class F>
  void visit(F&& f) {
    for (auto& [m, h] : heads) h.visit(f);
    fuse_proj.visit(f);
    if (config.use_mha) fuse_mha.visit(f);
    if (config.use_mha && config.token_mode) f(fuse_segment);
    classifier.visit(f);
  }
};

inline constexpr double kProbEps = 1e-12;

// Class probabilities; index 1 is sarcastic.
inline Var classify(const Var& logits) { return softmax(logits, 0); }

// -log p[label], with the log input clamped at kProbEps.
inline Var cross_entropy(const Var& probs, int label) {
  if (label != 0 && label != 1) throw Error("label must be 0 or 1, got " + std::to_string(label));
  return scale(log_clamped(pick(probs, static_cast<std::size_t>(label)), kProbEps), -1.0);
}

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments;  // name -> (m, v)
};

// One bias-corrected update of every parameter from its accumulated grad.
inline void adam_step(const std::vector<Parameter*>& params, AdamState& state, const AdamConfig& cfg) {
  ++state.step;
  double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (Parameter* p : params) {
    auto it = state.moments.find(p->name);
    if (it == state.moments.end()) {
      it = state.moments.emplace(p->name, std::make_pair(Tensor(p->shape(), 0.0), Tensor(p->shape(), 0.0))).first;
    }
    auto& [m, v] = it->second;
    if (m.shape() != p->shape() || p->grad.shape() != p->shape()) {
      throw DimensionError("adam: state for " + p->name + " has shape " + shape_str(m.shape()) + ", parameter " +
                           shape_str(p->shape()));
    }
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      double g = p->grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      p->value[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  double dropout = 0.4;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0)) throw Error("learning rate must be positive");
    if (batch_size == 0) throw Error("batch size must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("dropout must be in [0, 1)");
  }
};

}  // namespace vyang
