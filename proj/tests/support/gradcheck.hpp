#pragma once

// Central finite-difference oracle for tape gradients. Test-only; it evaluates
// the forward function on perturbed copies and never touches backward code.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vyang/autograd.hpp"
#include "vyang/ops.hpp"
#include "vyang/random.hpp"

namespace vyang::testing {

inline constexpr double kFdStep = 1e-6;
// Gradients smaller than this are compared absolutely (relative error against
// the floor), since their relative error is dominated by truncation noise.
inline constexpr double kRelFloor = 1e-4;

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kRelFloor});
}

inline Tensor random_tensor(Shape s, CounterRng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Checks d f / d inputs for every element of every input.
inline GradCheckResult check_input_grads(const ScalarFn& f, std::vector<Tensor> inputs) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (auto& t : inputs) vars.push_back(tape.variable(t));
    Var loss = f(tape, vars);
    tape.backward(loss);
    for (auto& v : vars) analytic.push_back(tape.grad(v));
  }
  auto eval = [&](const std::vector<Tensor>& in) {
    Tape tape(false);
    std::vector<Var> vars;
    for (auto& t : in) vars.push_back(tape.constant(t));
    return f(tape, vars).value().item();
  };
  GradCheckResult r;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < inputs[i].numel(); ++k) {
      double orig = inputs[i][k];
      inputs[i][k] = orig + kFdStep;
      double up = eval(inputs);
      inputs[i][k] = orig - kFdStep;
      double down = eval(inputs);
      inputs[i][k] = orig;
      double numeric = (up - down) / (2 * kFdStep);
      double e = rel_error(analytic[i][k], numeric);
      ++r.checked;
      if (e > r.max_rel_error) {
        r.max_rel_error = e;
        r.worst = "input " + std::to_string(i) + "[" + std::to_string(k) + "] analytic " +
                  std::to_string(analytic[i][k]) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return r;
}

// Checks parameter gradients. `loss` builds the scalar on the given tape from the
// model's current parameter values; `params` lists the parameters to probe.
// At most `per_param` entries of each parameter are probed (evenly spaced).
inline GradCheckResult check_param_grads(const std::function<Var(Tape&)>& loss, const std::vector<Parameter*>& params,
                                         std::size_t per_param = 1000000) {
  for (auto* p : params) p->zero_grad();
  {
    Tape tape;
    Var l = loss(tape);
    tape.backward(l);
  }
  std::vector<Tensor> analytic;
  for (auto* p : params) analytic.push_back(p->grad);
  auto eval = [&]() {
    Tape tape(false);
    return loss(tape).value().item();
  };
  GradCheckResult r;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    std::size_t n = p.value.numel();
    std::size_t step = std::max<std::size_t>(1, n / std::min(n, per_param));
    for (std::size_t k = 0; k < n; k += step) {
      double orig = p.value[k];
      p.value[k] = orig + kFdStep;
      double up = eval();
      p.value[k] = orig - kFdStep;
      double down = eval();
      p.value[k] = orig;
      double numeric = (up - down) / (2 * kFdStep);
      double e = rel_error(analytic[pi][k], numeric);
      ++r.checked;
      if (e > r.max_rel_error) {
        r.max_rel_error = e;
        r.worst = p.name + "[" + std::to_string(k) + "] analytic " + std::to_string(analytic[pi][k]) + " numeric " +
                  std::to_string(numeric);
      }
    }
  }
  return r;
}

// Weighted sum with fixed random weights, so every output element matters.
inline Var probe_loss(Tape& tape, const Var& out, std::uint64_t seed = 99) {
  CounterRng rng(seed, "probe");
  Tensor w = random_tensor(out.shape(), rng);
  return sum(mul(out, tape.constant(w)));
}

}  // namespace vyang::testing
