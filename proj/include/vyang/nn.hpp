#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "vyang/autograd.hpp"
#include "vyang/ops.hpp"
#include "vyang/random.hpp"

namespace vyang {

// Uniform in +-sqrt(6 / (fan_in + fan_out)), drawn from a stream keyed by
// (seed, name) so initialization does not depend on construction order.
inline Parameter make_weight(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out,
                             std::uint64_t seed) {
  Tensor t(std::move(shape));
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  CounterRng rng(seed, name);
  for (double& v : t.data()) v = rng.uniform(-limit, limit);
  return Parameter(name, std::move(t));
}

inline Parameter make_constant(const std::string& name, Shape shape, double value = 0.0) {
  return Parameter(name, Tensor(std::move(shape), value));
}

struct Linear {
  Parameter weight;  // [in, out]
  Parameter bias;    // [out]

  Linear() = default;
  Linear(const std::string& prefix, std::size_t in, std::size_t out, std::uint64_t seed)
      : weight(make_weight(prefix + ".weight", {in, out}, in, out, seed)),
        bias(make_constant(prefix + ".bias", {out})) {}

  std::size_t in_dim() const { return weight.value.dim(0); }
  std::size_t out_dim() const { return weight.value.dim(1); }

  Var operator()(Tape& tape, const Var& x) { return linear(x, tape.param(weight), tape.param(bias)); }

  template <class F>
  void visit(F&& f) {
    f(weight);
    f(bias);
  }
};

// Same-padding, stride-1 convolution layer.
struct Conv2dLayer {
  Parameter kernels;  // [out, in, k, k]
  Parameter bias;     // [out]

  Conv2dLayer() = default;
  Conv2dLayer(const std::string& prefix, std::size_t in, std::size_t out, std::size_t k, std::uint64_t seed)
      : kernels(make_weight(prefix + ".kernels", {out, in, k, k}, in * k * k, out * k * k, seed)),
        bias(make_constant(prefix + ".bias", {out})) {}

  Var operator()(Tape& tape, const Var& x) {
    std::size_t k = kernels.value.dim(2);
    return conv2d(x, tape.param(kernels), tape.param(bias), Conv2dSpec{1, k / 2});
  }

  template <class F>
  void visit(F&& f) {
    f(kernels);
    f(bias);
  }
};

}  // namespace vyang
