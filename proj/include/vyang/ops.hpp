#pragma once

// Differentiable operations over Tape-recorded values.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vyang/autograd.hpp"
#include "vyang/random.hpp"
#include "vyang/tensor.hpp"

namespace vyang {

inline constexpr double kNormEps = 1e-5;

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) throw Error("operands recorded on different tapes");
  return *a.tape();
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;  // per output axis, 0 where broadcast
  std::vector<std::size_t> stride_b;
  bool same = false;
};

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  std::size_t r = std::max(a.size(), b.size());
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  p.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw DimensionError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    }
    p.out[i] = std::max(pa[i], pb[i]);
  }
  auto sa = strides_of(pa);
  auto sb = strides_of(pb);
  p.stride_a.resize(r);
  p.stride_b.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    p.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  std::size_t n = shape_numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  std::size_t r = p.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      ia += p.stride_a[ax];
      ib += p.stride_b[ax];
      if (idx[ax] < p.out[ax]) break;
      ia -= p.stride_a[ax] * idx[ax];
      ib -= p.stride_b[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace detail

// Elementwise op helper that keeps both input and output for the derivative.
template <class Fwd, class Deriv>
Var elementwise(const Var& x, Fwd f, Deriv d) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) y[i] = f(xv[i]);
  std::size_t xid = x.id();
  std::size_t yid = t.size();  // id the output is about to receive
  return t.record(std::move(y), {x}, [xid, yid, d](Tape& tp, std::span<const double> g) {
    auto gx = tp.accum(xid);
    const Tensor& xv2 = tp.value(xid);
    const Tensor& yv = tp.value(yid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(xv2[i], yv[i]);
  });
}

inline Var add(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  auto plan = detail::plan_broadcast(a.shape(), b.shape());
  Tensor y(plan.out);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { y[o] = av[i] + bv[j]; });
  std::size_t aid = a.id(), bid = b.id();
  return t.record(std::move(y), {a, b}, [aid, bid, plan](Tape& tp, std::span<const double> g) {
    auto ga = tp.accum(aid);
    auto gb = tp.accum(bid);
    detail::for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (!ga.empty()) ga[i] += g[o];
      if (!gb.empty()) gb[j] += g[o];
    });
  });
}

inline Var sub(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  auto plan = detail::plan_broadcast(a.shape(), b.shape());
  Tensor y(plan.out);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { y[o] = av[i] - bv[j]; });
  std::size_t aid = a.id(), bid = b.id();
  return t.record(std::move(y), {a, b}, [aid, bid, plan](Tape& tp, std::span<const double> g) {
    auto ga = tp.accum(aid);
    auto gb = tp.accum(bid);
    detail::for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (!ga.empty()) ga[i] += g[o];
      if (!gb.empty()) gb[j] -= g[o];
    });
  });
}

inline Var mul(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  auto plan = detail::plan_broadcast(a.shape(), b.shape());
  Tensor y(plan.out);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { y[o] = av[i] * bv[j]; });
  std::size_t aid = a.id(), bid = b.id();
  return t.record(std::move(y), {a, b}, [aid, bid, plan](Tape& tp, std::span<const double> g) {
    auto ga = tp.accum(aid);
    auto gb = tp.accum(bid);
    const Tensor& av2 = tp.value(aid);
    const Tensor& bv2 = tp.value(bid);
    detail::for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (!ga.empty()) ga[i] += g[o] * bv2[j];
      if (!gb.empty()) gb[j] += g[o] * av2[i];
    });
  });
}

inline Var scale(const Var& x, double c) {
  return elementwise(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var add_scalar(const Var& x, double c) {
  return elementwise(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Var sigmoid(const Var& x) {
  return elementwise(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& x) {
  return elementwise(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(const Var& x) {
  return elementwise(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

inline Var exp(const Var& x) {
  return elementwise(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

// log(max(x, floor)); gradient is zero where the clamp is active.
inline Var log_clamped(const Var& x, double floor) {
  return elementwise(
      x, [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

inline Var reshape(const Var& x, Shape shape) {
  Tape& t = *x.tape();
  Tensor y = x.value().reshaped(std::move(shape));
  std::size_t xid = x.id();
  return t.record(std::move(y), {x}, [xid](Tape& tp, std::span<const double> g) {
    auto gx = tp.accum(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor y(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) y[i * n + j] += aip * bv[p * n + j];
    }
  }
  std::size_t aid = a.id(), bid = b.id();
  return t.record(std::move(y), {a, b}, [aid, bid, m, k, n](Tape& tp, std::span<const double> g) {
    auto ga = tp.accum(aid);
    auto gb = tp.accum(bid);
    const Tensor& av2 = tp.value(aid);
    const Tensor& bv2 = tp.value(bid);
    if (!ga.empty()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv2[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (!gb.empty()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double aip = av2[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

inline Var transpose(const Var& x) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw DimensionError("transpose expects a matrix, got " + shape_str(xv.shape()));
  std::size_t r = xv.dim(0), c = xv.dim(1);
  Tensor y(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = xv[i * c + j];
  std::size_t xid = x.id();
  return t.record(std::move(y), {x}, [xid, r, c](Tape& tp, std::span<const double> g) {
    auto gx = tp.accum(xid);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
  });
}

// x[..., d_in] . W[d_in, d_out] + b[d_out], broadcast over leading dims.
inline Var linear(const Var& x, const Var& w, const Var& b) {
  Tape& t = detail::same_tape(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (wv.rank() != 2 || xv.shape().back() != wv.dim(0) || bv.numel() != wv.dim(1)) {
    throw DimensionError("linear shape mismatch: input " + shape_str(xv.shape()) + ", weight " +
                         shape_str(wv.shape()) + ", bias " + shape_str(bv.shape()));
  }
  std::size_t din = wv.dim(0), dout = wv.dim(1);
  std::size_t rows = xv.numel() / din;
  Shape os = xv.shape();
  os.back() = dout;
  Tensor y(os);
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = &y[r * dout];
    for (std::size_t j = 0; j < dout; ++j) yr[j] = bv[j];
    for (std::size_t p = 0; p < din; ++p) {
      double xp = xv[r * din + p];
      if (xp == 0.0) continue;
      const double* wr = &wv.data()[p * dout];
      for (std::size_t j = 0; j < dout; ++j) yr[j] += xp * wr[j];
    }
  }
  std::size_t xid = x.id(), wid = w.id(), bid = b.id();
  return t.record(std::move(y), {x, w, b}, [xid, wid, bid, rows, din, dout](Tape& tp, std::span<const double> g) {
    auto gx = tp.accum(xid);
    auto gw = tp.accum(wid);
    auto gb = tp.accum(bid);
    const Tensor& xv2 = tp.value(xid);
    const Tensor& wv2 = tp.value(wid);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = &g[r * dout];
      if (!gb.empty())
        for (std::size_t j = 0; j < dout; ++j) gb[j] += gr[j];
      for (std::size_t p = 0; p < din; ++p) {
        const double* wr = &wv2.data()[p * dout];
        if (!gx.empty()) {
          double s = 0.0;
          for (std::size_t j = 0; j < dout; ++j) s += gr[j] * wr[j];
          gx[r * din + p] += s;
        }
        if (!gw.empty()) {
          double xp = xv2[r * din + p];
          for (std::size_t j = 0; j < dout; ++j) gw[p * dout + j] += xp * gr[j];
        }
      }
    }
  });
}

// Numerically stable softmax along `axis` (max-subtracted).
inline Var softmax(const Var& x, std::size_t axis) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  auto sp = split_axis(xv.shape(), axis);
  Tensor y(xv.shape());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      std::size_t base = o * sp.len * sp.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.len; ++k) mx = std::max(mx, xv[base + k * sp.inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < sp.len; ++k) {
        double e = std::exp(xv[base + k * sp.inner] - mx);
        y[base + k * sp.inner] = e;
        s += e;
      }
      for (std::size_t k = 0; k < sp.len; ++k) y[base + k * sp.inner] /= s;
    }
  std::size_t xid = x.id();
  std::size_t yid = t.size();
  return t.record(std::move(y), {x}, [xid, yid, sp](Tape& tp, std::span<const double> g) {
    auto gx = tp.accum(xid);
    const Tensor& ycopy = tp.value(yid);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t in = 0; in < sp.inner; ++in) {
        std::size_t base = o * sp.len * sp.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < sp.len; ++k) dot += g[base + k * sp.inner] * ycopy[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.len; ++k) {
          std::size_t i = base + k * sp.inner;
          gx[i] += ycopy[i] * (g[i] - dot);
        }
      }
  });
}

inline Var sum(const Var& x) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  Tensor y = Tensor::scalar(pairwise_sum(xv.data().data(), xv.numel(), 1));
  std::size_t xid = x.id();
  return t.record(std::move(y), {x}, [xid](Tape& tp, std::span<const double> g) {
    auto gx = tp.accum(xid);
    for (double& v : gx) v += g[0];
  });
}

// Mean over `axis`; the axis is removed (a rank-1 input yields shape {1}).
inline Var mean(const Var& x, std::size_t axis) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  auto sp = split_axis(xv.shape(), axis);
  Shape os;
  for (std::size_t i = 0; i < xv.rank(); ++i)
    if (i != axis) os.push_back(xv.dim(i));
  if (os.empty()) os.push_back(1);
  Tensor y(os);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const double* p = xv.data().data() + o * sp.len * sp.inner + in;
      y[o * sp.inner + in] = pairwise_sum(p, sp.len, sp.inner) / static_cast<double>(sp.len);
    }
  std::size_t xid = x.id();
  return t.record(std::move(y), {x}, [xid, sp](Tape& tp, std::span<const double> g) {
    auto gx = tp.accum(xid);
    double inv = 1.0 / static_cast<double>(sp.len);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.len; ++k)
        for (std::size_t in = 0; in < sp.inner; ++in)
          gx[(o * sp.len + k) * sp.inner + in] += g[o * sp.inner + in] * inv;
  });
}

inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of an empty list");
  Tape& t = *parts[0].tape();
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat axis out of range for " + shape_str(s0));
  std::size_t total = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Shape& si = parts[i].shape();
    if (parts[i].tape() != &t) throw Error("concat inputs recorded on different tapes");
    bool ok = si.size() == s0.size();
    for (std::size_t d = 0; ok && d < s0.size(); ++d) ok = d == axis || si[d] == s0[d];
    if (!ok) {
      throw DimensionError("concat input " + std::to_string(i) + " has shape " + shape_str(si) +
                           ", incompatible with " + shape_str(s0) + " along axis " + std::to_string(axis));
    }
    total += si[axis];
  }
  Shape os = s0;
  os[axis] = total;
  auto sp = split_axis(os, axis);
  Tensor y(os);
  std::vector<std::size_t> ids, lens;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    std::size_t len = pv.dim(axis);
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(pv.data().data() + o * len * sp.inner, len * sp.inner,
                  y.data().data() + (o * total + off) * sp.inner);
    ids.push_back(p.id());
    lens.push_back(len);
    off += len;
  }
  return t.record(std::move(y), parts, [ids, lens, sp, total](Tape& tp, std::span<const double> g) {
    std::size_t off2 = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto gp = tp.accum(ids[k]);
      if (!gp.empty()) {
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < lens[k] * sp.inner; ++i)
            gp[o * lens[k] * sp.inner + i] += g[(o * total + off2) * sp.inner + i];
      }
      off2 += lens[k];
    }
  });
}

// Elements [begin, end) along `axis`.
inline Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  auto sp = split_axis(xv.shape(), axis);
  if (begin >= end || end > sp.len) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                         shape_str(xv.shape()) + " axis " + std::to_string(axis));
  }
  std::size_t len = end - begin;
  Shape os = xv.shape();
  os[axis] = len;
  Tensor y(os);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(xv.data().data() + (o * sp.len + begin) * sp.inner, len * sp.inner,
                y.data().data() + o * len * sp.inner);
  std::size_t xid = x.id();
  return t.record(std::move(y), {x}, [xid, sp, begin, len](Tape& tp, std::span<const double> g) {
    auto gx = tp.accum(xid);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < len * sp.inner; ++i) gx[(o * sp.len + begin) * sp.inner + i] += g[o * len * sp.inner + i];
  });
}

// Stacks equally shaped vectors/tensors along a new leading axis.
inline Var stack(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("stack of an empty list");
  std::vector<Var> rows;
  rows.reserve(parts.size());
  for (const Var& p : parts) {
    Shape s{1};
    s.insert(s.end(), p.shape().begin(), p.shape().end());
    rows.push_back(reshape(p, s));
  }
  return concat(rows, 0);
}

// Selects one element as a scalar.
inline Var pick(const Var& x, std::size_t index) {
  Tape& t = *x.tape();
  if (index >= x.numel()) throw DimensionError("pick index out of range for " + shape_str(x.shape()));
  Tensor y = Tensor::scalar(x.value()[index]);
  std::size_t xid = x.id();
  return t.record(std::move(y), {x}, [xid, index](Tape& tp, std::span<const double> g) {
    auto gx = tp.accum(xid);
    gx[index] += g[0];
  });
}

// Per-channel spatial mean: [D,H,W] -> [D,1,1].
inline Var global_avg_pool(const Var& x) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  if (xv.rank() != 3) throw DimensionError("global_avg_pool expects [D,H,W], got " + shape_str(xv.shape()));
  std::size_t d = xv.dim(0), hw = xv.dim(1) * xv.dim(2);
  Tensor y(Shape{d, 1, 1});
  for (std::size_t c = 0; c < d; ++c) y[c] = pairwise_sum(xv.data().data() + c * hw, hw, 1) / static_cast<double>(hw);
  std::size_t xid = x.id();
  return t.record(std::move(y), {x}, [xid, d, hw](Tape& tp, std::span<const double> g) {
    auto gx = tp.accum(xid);
    double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t i = 0; i < hw; ++i) gx[c * hw + i] += g[c] * inv;
  });
}

// Group normalization over [D,H,W] with per-channel affine gamma/beta of length D.
inline Var group_norm(const Var& x, std::size_t groups, const Var& gamma, const Var& beta, double eps = kNormEps) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  if (xv.rank() != 3) throw DimensionError("group_norm expects [D,H,W], got " + shape_str(xv.shape()));
  std::size_t d = xv.dim(0), hw = xv.dim(1) * xv.dim(2);
  if (groups == 0 || d % groups != 0) {
    throw DimensionError("group_norm: depth " + std::to_string(d) + " not divisible by " + std::to_string(groups) +
                         " groups");
  }
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("group_norm: gamma/beta must have " + std::to_string(d) + " entries");
  }
  if (!(eps > 0)) throw Error("group_norm: eps must be positive");
  std::size_t cpg = d / groups, m = cpg * hw;
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(groups);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const double* p = xv.data().data() + gi * m;
    double mu = pairwise_sum(p, m, 1) / static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<double>(m);
    inv_std[gi] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < m; ++i) xhat[gi * m + i] = (p[i] - mu) * inv_std[gi];
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor y(xv.shape());
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t i = 0; i < hw; ++i) y[c * hw + i] = gv[c] * xhat[c * hw + i] + bv[c];
  std::size_t xid = x.id(), gid = gamma.id(), bid = beta.id();
  return t.record(std::move(y), {x, gamma, beta},
                  [xid, gid, bid, d, hw, groups, cpg, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Tape& tp, std::span<const double> g) {
                    auto gx = tp.accum(xid);
                    auto gg = tp.accum(gid);
                    auto gb = tp.accum(bid);
                    const Tensor& gv2 = tp.value(gid);
                    for (std::size_t c = 0; c < d; ++c)
                      for (std::size_t i = 0; i < hw; ++i) {
                        std::size_t k = c * hw + i;
                        if (!gg.empty()) gg[c] += g[k] * xhat[k];
                        if (!gb.empty()) gb[c] += g[k];
                      }
                    if (gx.empty()) return;
                    for (std::size_t gi = 0; gi < groups; ++gi) {
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t c = gi * cpg; c < (gi + 1) * cpg; ++c)
                        for (std::size_t i = 0; i < hw; ++i) {
                          std::size_t k = c * hw + i;
                          double dxh = g[k] * gv2[c];
                          s1 += dxh;
                          s2 += dxh * xhat[k];
                        }
                      double md = static_cast<double>(m);
                      for (std::size_t c = gi * cpg; c < (gi + 1) * cpg; ++c)
                        for (std::size_t i = 0; i < hw; ++i) {
                          std::size_t k = c * hw + i;
                          double dxh = g[k] * gv2[c];
                          gx[k] += inv_std[gi] / md * (md * dxh - s1 - xhat[k] * s2);
                        }
                    }
                  });
}

// Permutation used by channel_shuffle: output channel j reads input channel perm[j].
inline std::vector<std::size_t> channel_shuffle_permutation(std::size_t depth, std::size_t groups) {
  if (groups == 0 || depth % groups != 0) {
    throw DimensionError("channel_shuffle: depth " + std::to_string(depth) + " not divisible by " +
                         std::to_string(groups) + " groups");
  }
  std::size_t per = depth / groups;
  std::vector<std::size_t> perm(depth);
  // reshape (groups, per) -> transpose (per, groups) -> flatten
  for (std::size_t i = 0; i < per; ++i)
    for (std::size_t gi = 0; gi < groups; ++gi) perm[i * groups + gi] = gi * per + i;
  return perm;
}

inline Var permute_channels(const Var& x, const std::vector<std::size_t>& perm) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  if (xv.rank() != 3 || perm.size() != xv.dim(0)) {
    throw DimensionError("permute_channels: permutation of size " + std::to_string(perm.size()) +
                         " does not fit " + shape_str(xv.shape()));
  }
  std::size_t hw = xv.dim(1) * xv.dim(2);
  Tensor y(xv.shape());
  for (std::size_t j = 0; j < perm.size(); ++j)
    std::copy_n(xv.data().data() + perm[j] * hw, hw, y.data().data() + j * hw);
  std::size_t xid = x.id();
  return t.record(std::move(y), {x}, [xid, perm, hw](Tape& tp, std::span<const double> g) {
    auto gx = tp.accum(xid);
    for (std::size_t j = 0; j < perm.size(); ++j)
      for (std::size_t i = 0; i < hw; ++i) gx[perm[j] * hw + i] += g[j * hw + i];
  });
}

inline Var channel_shuffle(const Var& x, std::size_t groups) {
  if (x.value().rank() != 3) throw DimensionError("channel_shuffle expects [D,H,W], got " + shape_str(x.shape()));
  return permute_channels(x, channel_shuffle_permutation(x.dim(0), groups));
}

struct Conv2dSpec {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw DimensionError("conv2d stride must be positive");
  if (in + 2 * pad < k) {
    throw DimensionError("conv2d output size is non-positive (input " + std::to_string(in) + ", kernel " +
                         std::to_string(k) + ", padding " + std::to_string(pad) + ")");
  }
  return (in + 2 * pad - k) / stride + 1;
}

// Cross-correlation of x[Cin,H,W] with kernels[Cout,Cin,kh,kw] plus bias[Cout].
inline Var conv2d(const Var& x, const Var& kernels, const Var& bias, Conv2dSpec spec = {}) {
  Tape& t = detail::same_tape(x, kernels);
  const Tensor& xv = x.value();
  const Tensor& wv = kernels.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0) || bv.numel() != wv.dim(0)) {
    throw DimensionError("conv2d shape mismatch: input " + shape_str(xv.shape()) + ", kernels " +
                         shape_str(wv.shape()) + ", bias " + shape_str(bv.shape()));
  }
  std::size_t cin = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  std::size_t cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  std::size_t s = spec.stride, pad = spec.padding;
  std::size_t ho = conv_out_size(h, kh, s, pad), wo = conv_out_size(w, kw, s, pad);
  Tensor y(Shape{cout, ho, wo});
  const double* X = xv.data().data();
  const double* W = wv.data().data();
  for (std::size_t co = 0; co < cout; ++co) {
    double* Y = y.data().data() + co * ho * wo;
    for (std::size_t i = 0; i < ho * wo; ++i) Y[i] = bv[co];
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          double wk = W[((co * cin + ci) * kh + ky) * kw + kx];
          if (wk == 0.0) continue;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) - static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            const double* xr = X + (ci * h + static_cast<std::size_t>(iy)) * w;
            double* yr = Y + oy * wo;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s + kx) - static_cast<std::ptrdiff_t>(pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              yr[ox] += wk * xr[ix];
            }
          }
        }
  }
  std::size_t xid = x.id(), wid = kernels.id(), bid = bias.id();
  return t.record(std::move(y), {x, kernels, bias},
                  [=](Tape& tp, std::span<const double> g) {
                    auto gx = tp.accum(xid);
                    auto gw = tp.accum(wid);
                    auto gb = tp.accum(bid);
                    const double* X2 = tp.value(xid).data().data();
                    const double* W2 = tp.value(wid).data().data();
                    for (std::size_t co = 0; co < cout; ++co) {
                      const double* G = g.data() + co * ho * wo;
                      if (!gb.empty())
                        for (std::size_t i = 0; i < ho * wo; ++i) gb[co] += G[i];
                      for (std::size_t ci = 0; ci < cin; ++ci)
                        for (std::size_t ky = 0; ky < kh; ++ky)
                          for (std::size_t kx = 0; kx < kw; ++kx) {
                            std::size_t widx = ((co * cin + ci) * kh + ky) * kw + kx;
                            double wk = W2[widx];
                            double acc = 0.0;
                            for (std::size_t oy = 0; oy < ho; ++oy) {
                              std::ptrdiff_t iy =
                                  static_cast<std::ptrdiff_t>(oy * s + ky) - static_cast<std::ptrdiff_t>(pad);
                              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                              std::size_t row = (ci * h + static_cast<std::size_t>(iy)) * w;
                              for (std::size_t ox = 0; ox < wo; ++ox) {
                                std::ptrdiff_t ix =
                                    static_cast<std::ptrdiff_t>(ox * s + kx) - static_cast<std::ptrdiff_t>(pad);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                double go = G[oy * wo + ox];
                                acc += go * X2[row + static_cast<std::size_t>(ix)];
                                if (!gx.empty()) gx[row + static_cast<std::size_t>(ix)] += go * wk;
                              }
                            }
                            if (!gw.empty()) gw[widx] += acc;
                          }
                    }
                  });
}

enum class Mode { train, eval };

// Inverted dropout: survivors are scaled by 1/(1-rate) so eval is the identity.
inline Var dropout(const Var& x, double rate, Mode mode, CounterRng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error("dropout rate must be in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::eval || rate == 0.0) return x;
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  std::vector<double> mask(xv.numel());
  double keep = 1.0 / (1.0 - rate);
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep;
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = xv[i] * mask[i];
  std::size_t xid = x.id();
  return t.record(std::move(y), {x}, [xid, mask = std::move(mask)](Tape& tp, std::span<const double> g) {
    auto gx = tp.accum(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

// Row gather from table[V, d]; rows equal to `frozen_row` receive no gradient.
inline Var embedding(const Var& table, std::span<const std::size_t> ids,
                     std::optional<std::size_t> frozen_row = std::nullopt) {
  Tape& t = *table.tape();
  const Tensor& tv = table.value();
  if (tv.rank() != 2) throw DimensionError("embedding table must be a matrix, got " + shape_str(tv.shape()));
  if (ids.empty()) throw DimensionError("embedding lookup of an empty id list");
  std::size_t vocab = tv.dim(0), d = tv.dim(1);
  Tensor y(Shape{ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab) throw DimensionError("token id " + std::to_string(ids[r]) + " outside vocabulary");
    std::copy_n(tv.data().data() + ids[r] * d, d, y.data().data() + r * d);
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  std::size_t tid = table.id();
  return t.record(std::move(y), {table}, [tid, idv = std::move(idv), d, frozen_row](Tape& tp, std::span<const double> g) {
    auto gt = tp.accum(tid);
    for (std::size_t r = 0; r < idv.size(); ++r) {
      if (frozen_row && idv[r] == *frozen_row) continue;
      for (std::size_t j = 0; j < d; ++j) gt[idv[r] * d + j] += g[r * d + j];
    }
  });
}

}  // namespace vyang
