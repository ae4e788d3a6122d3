#pragma once

// Frame encoder: stem convolution, a chain of gated hidden-state blocks with
// shuffle attention, global pooling and a linear head. Utterances average
// their frame features; context utterances fill fixed slots.

#include <cstdint>
#include <string>
#include <vector>

#include "vyang/attention.hpp"
#include "vyang/features.hpp"
#include "vyang/nn.hpp"
#include "vyang/sample.hpp"

namespace vyang {

struct VisualConfig {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t conv_channels = 16;
  std::size_t blocks = 2;
  std::size_t kernel = 3;
  std::size_t shuffle_groups = 2;
  std::size_t out_dim = 64;
  std::size_t context = 3;
  bool depth_attention = true;
};

struct SelfRegulatedBlock {
  Conv2dLayer conv;      // x -> u
  Conv2dLayer conv_h;    // hidden -> gate
  Conv2dLayer conv_mix;  // [u, hidden] -> next hidden
  ShuffleAttentionBlock attention;
  bool use_attention = true;

  SelfRegulatedBlock() = default;
  SelfRegulatedBlock(const std::string& prefix, std::size_t c, std::size_t k, std::size_t groups, bool attn,
                     std::uint64_t seed)
      : conv(prefix + ".conv", c, c, k, seed),
        conv_h(prefix + ".conv_h", c, c, k, seed),
        conv_mix(prefix + ".conv_mix", 2 * c, c, k, seed),
        use_attention(attn) {
    if (attn) attention = ShuffleAttentionBlock(prefix + ".sa", c, groups, seed);
  }

  // Returns (y, h_out).
  std::pair<Var, Var> forward(Tape& tape, const Var& x, const Var& h_in) {
    if (x.shape() != h_in.shape()) {
      throw DimensionError("self-regulated block: feature map " + shape_str(x.shape()) + " vs hidden state " +
                           shape_str(h_in.shape()));
    }
    Var u = relu(conv(tape, x));
    Var g = sigmoid(conv_h(tape, h_in));
    Var pre = add(mul(u, g), x);
    Var y = use_attention ? attention.forward(tape, pre) : pre;
    Var h_out = tanh(conv_mix(tape, concat({u, h_in}, 0)));
    return {y, h_out};
  }

  template <class F>
  void visit(F&& f) {
    conv.visit(f);
    conv_h.visit(f);
    conv_mix.visit(f);
    if (use_attention) attention.visit(f);
  }
};

class VisualEncoder {
 public:
  VisualConfig config;
  SpeakerTable speakers;
  Conv2dLayer stem;
  std::vector<SelfRegulatedBlock> blocks;
  Linear head;

  VisualEncoder() = default;
  VisualEncoder(SpeakerTable s, VisualConfig cfg, std::uint64_t seed) : config(cfg), speakers(std::move(s)) {
    stem = Conv2dLayer("visual.stem", cfg.channels, cfg.conv_channels, cfg.kernel, seed);
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      blocks.emplace_back("visual.block" + std::to_string(b), cfg.conv_channels, cfg.kernel, cfg.shuffle_groups,
                          cfg.depth_attention, seed);
    }
    head = Linear("visual.head", cfg.conv_channels, cfg.out_dim, seed);
  }

  std::size_t frame_dim() const { return config.out_dim; }
  std::size_t block_dim() const { return frame_dim() + speakers.dim(); }
  std::size_t feature_dim() const { return block_dim() * (1 + config.context); }
  std::size_t segments() const { return 1 + config.context; }
  Shape frame_shape() const { return {config.channels, config.height, config.width}; }

  // frame [C,H,W] -> [d_v]
  Var encode_frame(Tape& tape, const Var& frame) {
    if (frame.shape() != frame_shape()) {
      throw DimensionError("visual branch expects frames " + shape_str(frame_shape()) + ", got " +
                           shape_str(frame.shape()));
    }
    Var x = relu(stem(tape, frame));
    Var h = tape.constant(Tensor(x.shape(), 0.0));
    for (auto& b : blocks) std::tie(x, h) = b.forward(tape, x, h);
    Var pooled = reshape(global_avg_pool(x), {1, config.conv_channels});
    return reshape(relu(head(tape, pooled)), {frame_dim()});
  }

  // frames [N_u, C, H, W] -> mean frame feature [d_v]
  Var encode_frames(Tape& tape, const Tensor& frames) {
    Shape fs = frame_shape();
    if (frames.rank() != 4 || Shape(frames.shape().begin() + 1, frames.shape().end()) != fs) {
      throw DimensionError("visual branch expects [N_u, " + std::to_string(fs[0]) + ", " + std::to_string(fs[1]) +
                           ", " + std::to_string(fs[2]) + "] frames, got " + shape_str(frames.shape()));
    }
    std::size_t n = frames.dim(0), per = shape_numel(fs);
    std::vector<Var> feats;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> one(frames.data().begin() + i * per, frames.data().begin() + (i + 1) * per);
      feats.push_back(encode_frame(tape, tape.constant(Tensor(fs, std::move(one)))));
    }
    if (n == 1) return feats[0];
    return mean(stack(feats), 0);
  }

  Var utterance_block(Tape& tape, const Turn& turn) {
    if (!turn.frames) throw Error("visual branch: utterance has no frames");
    return append_speaker(tape, encode_frames(tape, *turn.frames), speakers.encode(turn.speaker));
  }

  // A context turn without frames contributes a zero block.
  std::vector<Var> context_blocks(Tape& tape, const std::vector<Turn>& ctx) {
    return context_slots(tape, ctx.size(), config.context, block_dim(), [&](std::size_t i) {
      return ctx[i].frames ? utterance_block(tape, ctx[i]) : tape.constant(Tensor(Shape{block_dim()}, 0.0));
    });
  }

  std::vector<Var> segment_blocks(Tape& tape, const Sample& s) {
    std::vector<Var> out{utterance_block(tape, s.utterance)};
    for (auto& b : context_blocks(tape, s.context)) out.push_back(b);
    return out;
  }

  Var features(Tape& tape, const Sample& s) { return concat_blocks(segment_blocks(tape, s)); }

  template <class F>
  void visit(F&& f) {
    stem.visit(f);
    for (auto& b : blocks) b.visit(f);
    head.visit(f);
  }
};

// Frames are clamped into [0, 1] on ingestion.
inline Tensor clamp_frames(Tensor t) {
  for (double& v : t.data()) v = std::min(1.0, std::max(0.0, v));
  return t;
}

}  // namespace vyang
