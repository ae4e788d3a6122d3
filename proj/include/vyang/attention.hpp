#pragma once

// Lightweight shuffle (depth + spatial) attention over feature maps, and
// multi-head scaled dot-product attention over token sets.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vyang/autograd.hpp"
#include "vyang/nn.hpp"
#include "vyang/ops.hpp"

namespace vyang {

// Splits x[D,H,W] into P contiguous channel groups, each halved into a
// (depth-branch, spatial-branch) pair of [D/2P, H, W] tensors.
inline std::vector<std::pair<Var, Var>> feature_group(const Var& x, std::size_t groups) {
  if (x.value().rank() != 3) throw DimensionError("feature_group expects [D,H,W], got " + shape_str(x.shape()));
  std::size_t d = x.dim(0);
  if (groups == 0 || d % (2 * groups) != 0) {
    throw DimensionError("feature_group: depth D=" + std::to_string(d) + " is not divisible by 2P with P=" +
                         std::to_string(groups));
  }
  std::size_t half = d / (2 * groups);
  std::vector<std::pair<Var, Var>> out;
  out.reserve(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    std::size_t base = g * 2 * half;
    out.emplace_back(slice(x, 0, base, base + half), slice(x, 0, base + half, base + 2 * half));
  }
  return out;
}

// sigmoid(v1 * GAP(x) + b1) * x, with v1/b1 shaped [C,1,1].
inline Var depth_attention(const Var& x, const Var& v1, const Var& b1) {
  Var t = global_avg_pool(x);
  Var gate = sigmoid(add(mul(v1, t), b1));
  return mul(gate, x);
}

// sigmoid(v2 * GroupNorm(x) + b2) * x, elementwise.
inline Var spatial_attention(const Var& x, std::size_t gn_groups, const Var& gamma, const Var& beta, const Var& v2,
                             const Var& b2) {
  Var n = group_norm(x, gn_groups, gamma, beta, kNormEps);
  Var gate = sigmoid(add(mul(v2, n), b2));
  return mul(gate, x);
}

struct ShuffleAttentionBlock {
  struct GroupParams {
    Parameter v1, b1;            // depth branch gate, [C,1,1]
    Parameter v2, b2;            // spatial branch affine, [C,1,1]
    Parameter gn_gamma, gn_beta; // [C]
  };

  std::size_t depth = 0;
  std::size_t groups = 1;
  std::size_t gn_groups = 1;  // group-norm groups inside each spatial half
  std::vector<GroupParams> params;

  ShuffleAttentionBlock() = default;

  // gn_groups == 0 selects one norm group per channel of the spatial half.
  ShuffleAttentionBlock(const std::string& prefix, std::size_t depth_, std::size_t groups_, std::uint64_t seed,
                        std::size_t gn_groups_ = 0)
      : depth(depth_), groups(groups_) {
    if (groups == 0 || depth % (2 * groups) != 0) {
      throw DimensionError("shuffle attention: depth D=" + std::to_string(depth) +
                           " is not divisible by 2P with P=" + std::to_string(groups));
    }
    std::size_t half = depth / (2 * groups);
    gn_groups = gn_groups_ == 0 ? half : gn_groups_;
    if (half % gn_groups != 0) {
      throw DimensionError("shuffle attention: " + std::to_string(half) + " channels per half not divisible by " +
                           std::to_string(gn_groups) + " norm groups");
    }
    for (std::size_t g = 0; g < groups; ++g) {
      std::string p = prefix + ".group" + std::to_string(g);
      params.push_back(GroupParams{
          make_weight(p + ".v1", {half, 1, 1}, 1, 1, seed),
          make_constant(p + ".b1", {half, 1, 1}),
          make_weight(p + ".v2", {half, 1, 1}, 1, 1, seed),
          make_constant(p + ".b2", {half, 1, 1}),
          make_constant(p + ".gn_gamma", {half}, 1.0),
          make_constant(p + ".gn_beta", {half}),
      });
    }
  }

  Var forward(Tape& tape, const Var& x) {
    if (x.value().rank() != 3 || x.dim(0) != depth) {
      throw DimensionError("shuffle attention expects depth " + std::to_string(depth) + ", got " +
                           shape_str(x.shape()));
    }
    auto parts = feature_group(x, groups);
    std::vector<Var> outs;
    outs.reserve(2 * groups);
    for (std::size_t g = 0; g < groups; ++g) {
      GroupParams& gp = params[g];
      outs.push_back(depth_attention(parts[g].first, tape.param(gp.v1), tape.param(gp.b1)));
      outs.push_back(spatial_attention(parts[g].second, gn_groups, tape.param(gp.gn_gamma), tape.param(gp.gn_beta),
                                       tape.param(gp.v2), tape.param(gp.b2)));
    }
    return channel_shuffle(concat(outs, 0), groups);
  }

  template <class F>
  void visit(F&& f) {
    for (auto& gp : params) {
      f(gp.v1);
      f(gp.b1);
      f(gp.v2);
      f(gp.b2);
      f(gp.gn_gamma);
      f(gp.gn_beta);
    }
  }
};

// softmax(q k^T / sqrt(d)) v. When `weights` is non-null the attention matrix is copied out.
inline Var scaled_dot_product_attention(const Var& q, const Var& k, const Var& v, Tensor* weights = nullptr) {
  if (q.value().rank() != 2 || k.value().rank() != 2 || v.value().rank() != 2 || q.dim(1) != k.dim(1) ||
      k.dim(0) != v.dim(0)) {
    throw DimensionError("attention shape mismatch: Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) +
                         ", V " + shape_str(v.shape()));
  }
  double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Var scores = scale(matmul(q, transpose(k)), inv);
  Var a = softmax(scores, 1);
  if (weights != nullptr) *weights = a.value();
  return matmul(a, v);
}

struct MultiHeadAttentionLayer {
  std::size_t heads = 1;
  std::size_t dim = 0;
  Linear wq, wk, wv, wo;

  MultiHeadAttentionLayer() = default;
  MultiHeadAttentionLayer(const std::string& prefix, std::size_t dim_, std::size_t heads_, std::uint64_t seed)
      : heads(heads_), dim(dim_) {
    if (heads == 0 || dim % heads != 0) {
      throw DimensionError("multi-head attention: model dim " + std::to_string(dim) + " not divisible by " +
                           std::to_string(heads) + " heads");
    }
    wq = Linear(prefix + ".wq", dim, dim, seed);
    wk = Linear(prefix + ".wk", dim, dim, seed);
    wv = Linear(prefix + ".wv", dim, dim, seed);
    wo = Linear(prefix + ".wo", dim, dim, seed);
  }

  std::size_t head_dim() const { return dim / heads; }

  // tokens [n, dim] -> [n, dim]. Head h uses columns [h*dk, (h+1)*dk) of the Q/K/V projections.
  Var forward(Tape& tape, const Var& tokens, std::vector<Tensor>* weights = nullptr) {
    if (tokens.value().rank() != 2 || tokens.dim(1) != dim) {
      throw DimensionError("multi-head attention expects [n, " + std::to_string(dim) + "], got " +
                           shape_str(tokens.shape()));
    }
    Var q = wq(tape, tokens);
    Var k = wk(tape, tokens);
    Var v = wv(tape, tokens);
    std::size_t dk = head_dim();
    std::vector<Var> outs;
    outs.reserve(heads);
    if (weights != nullptr) weights->assign(heads, Tensor());
    for (std::size_t h = 0; h < heads; ++h) {
      Var qh = heads == 1 ? q : slice(q, 1, h * dk, (h + 1) * dk);
      Var kh = heads == 1 ? k : slice(k, 1, h * dk, (h + 1) * dk);
      Var vh = heads == 1 ? v : slice(v, 1, h * dk, (h + 1) * dk);
      outs.push_back(scaled_dot_product_attention(qh, kh, vh, weights != nullptr ? &(*weights)[h] : nullptr));
    }
    Var merged = heads == 1 ? outs[0] : concat(outs, 1);
    return wo(tape, merged);
  }

  template <class F>
  void visit(F&& f) {
    wq.visit(f);
    wk.visit(f);
    wv.visit(f);
    wo.visit(f);
  }
};

}  // namespace vyang
