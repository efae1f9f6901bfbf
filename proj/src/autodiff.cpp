#include "costrgcn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "costrgcn/errors.hpp"

namespace costrgcn {

namespace {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

std::size_t resolve_axis(const Shape& shape, int axis, const char* op) {
  const int rank = static_cast<int>(shape.size());
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape));
  }
  return static_cast<std::size_t>(a);
}

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.begin(), tail.end(), full.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

Tape& same_tape(const Var& a, const Var& b, const char* op) {
  if (!a.valid() || &a.tape() != &b.tape()) {
    throw InputError(std::string(op) + ": operands recorded on different tapes");
  }
  return a.tape();
}

void check_broadcast(const Var& a, const Var& b, const char* op) {
  if (!is_suffix(a.shape(), b.shape())) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                     shape_str(a.shape()));
  }
}

void accumulate(Tensor& into, const Tensor& from) {
  double* d = into.data();
  const double* s = from.data();
  for (std::size_t i = 0; i < into.size(); ++i) d[i] += s[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / Gradients / Tape

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->needs_grad(id_); }

const Tensor& Gradients::operator[](const Var& leaf) const {
  auto it = by_id_.find(leaf.id());
  if (it == by_id_.end()) throw InputError("no gradient recorded for this variable");
  return it->second;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (consumed_) throw StateError("tape already consumed by backward()");
  check_finite(value, "leaf");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  if (consumed_) throw StateError("tape already consumed by backward()");
  check_finite(value, op);
  Node n;
  n.op = op;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (auto i : inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
  }
  if (n.requires_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_accum(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Gradients Tape::backward(const Var& loss) {
  if (consumed_) throw StateError("tape already consumed by backward()");
  if (!loss.valid() || &loss.tape() != this) throw InputError("backward: loss is not on this tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  consumed_ = true;
  Gradients out;
  const std::size_t root = loss.id();
  if (nodes_[root].requires_grad) {
    nodes_[root].grad = Tensor(nodes_[root].value.shape(), 1.0);
    for (std::size_t i = root + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.requires_grad) continue;
      if (n.is_leaf) {
        out.by_id_.emplace(i, std::move(n.grad));
      } else {
        n.backward(*this, i);
        n.grad = Tensor();
      }
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.is_leaf && n.requires_grad && !out.by_id_.count(i)) {
      out.by_id_.emplace(i, Tensor(n.value.shape(), 0.0));
    }
  }
  for (auto& n : nodes_) n.backward = nullptr;
  return out;
}

// ---------------------------------------------------------------------------
// primitives

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b, "matmul");
  Tensor out = kernels::matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record("matmul", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (t.needs_grad(ia)) kernels::gemm(false, true, m, k, n, gy.data(), bv.data(), t.grad_accum(ia).data(), true);
    if (t.needs_grad(ib)) kernels::gemm(true, false, k, n, m, av.data(), gy.data(), t.grad_accum(ib).data(), true);
  });
}

Var bmm(const Var& a, const Var& b, bool transpose_b) {
  Tape& t = same_tape(a, b, "bmm");
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] ||
      sa[2] != (transpose_b ? sb[2] : sb[1])) {
    throw ShapeError("bmm: " + shape_str(sa) + " x " + shape_str(sb) +
                     (transpose_b ? " (transposed)" : ""));
  }
  const std::size_t batch = sa[0], m = sa[1], k = sa[2];
  const std::size_t n = transpose_b ? sb[1] : sb[2];
  Tensor out({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    kernels::gemm(false, transpose_b, m, n, k, a.value().data() + i * m * k,
                  b.value().data() + i * k * n, out.data() + i * m * n);
  }
  const std::size_t ia = a.id(), ib = b.id();
  const FlopKind kind = FlopCounter::current();
  return t.record("bmm", std::move(out), {ia, ib},
                  [ia, ib, batch, m, n, k, transpose_b, kind](Tape& t, std::size_t self) {
                    FlopScope scope(kind);
                    const Tensor& gy = t.grad(self);
                    const double* av = t.value(ia).data();
                    const double* bv = t.value(ib).data();
                    for (std::size_t i = 0; i < batch; ++i) {
                      const double* g = gy.data() + i * m * n;
                      if (t.needs_grad(ia)) {
                        double* ga = t.grad_accum(ia).data() + i * m * k;
                        kernels::gemm(false, !transpose_b, m, k, n, g, bv + i * k * n, ga, true);
                      }
                      if (t.needs_grad(ib)) {
                        double* gb = t.grad_accum(ib).data() + i * k * n;
                        if (transpose_b) {
                          kernels::gemm(true, false, n, k, m, g, av + i * m * k, gb, true);
                        } else {
                          kernels::gemm(true, false, k, n, m, av + i * m * k, g, gb, true);
                        }
                      }
                    }
                  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b, "add");
  check_broadcast(a, b, "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  const std::size_t nb = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % nb];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record("add", std::move(out), {ia, ib}, [ia, ib, nb](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    if (t.needs_grad(ia)) accumulate(t.grad_accum(ia), gy);
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad_accum(ib);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i % nb] += gy[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b, "mul");
  check_broadcast(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  const std::size_t nb = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i % nb];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record("mul", std::move(out), {ia, ib}, [ia, ib, nb](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (t.needs_grad(ia)) {
      Tensor& ga = t.grad_accum(ia);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i % nb];
    }
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad_accum(ib);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i % nb] += gy[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  const std::size_t ia = a.id();
  return a.tape().record("scale", std::move(out), {ia}, [ia, s](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    Tensor& ga = t.grad_accum(ia);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += s * gy[i];
  });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  kernels::relu_inplace(out);
  const std::size_t ia = a.id();
  return a.tape().record("relu", std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& x = t.value(ia);
    Tensor& ga = t.grad_accum(ia);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (x[i] > 0.0) ga[i] += gy[i];
    }
  });
}

Var abs(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::abs(v);
  const std::size_t ia = a.id();
  return a.tape().record("abs", std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& x = t.value(ia);
    Tensor& ga = t.grad_accum(ia);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      ga[i] += x[i] > 0.0 ? gy[i] : (x[i] < 0.0 ? -gy[i] : 0.0);
    }
  });
}

Var softmax(const Var& a, int axis) {
  const std::size_t ax = resolve_axis(a.shape(), axis, "softmax");
  const AxisSplit s = split_axis(a.shape(), ax);
  if (s.len == 0) throw ShapeError("softmax over an empty axis");
  Tensor out = a.value();
  std::vector<double> row(s.len);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      double* base = out.data() + o * s.len * s.inner + in;
      for (std::size_t i = 0; i < s.len; ++i) row[i] = base[i * s.inner];
      kernels::softmax_rows_inplace(row.data(), s.len);
      for (std::size_t i = 0; i < s.len; ++i) base[i * s.inner] = row[i];
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record("softmax", std::move(out), {ia}, [ia, s](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_accum(ia);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t i = 0; i < s.len; ++i) dot += gy[base + i * s.inner] * y[base + i * s.inner];
        for (std::size_t i = 0; i < s.len; ++i) {
          const std::size_t p = base + i * s.inner;
          ga[p] += y[p] * (gy[p] - dot);
        }
      }
    }
  });
}

Var masked_softmax(const Var& a, const Tensor& mask) {
  const Shape sa = a.shape();
  if (sa.empty() || mask.rank() == 0 || !is_suffix(sa, mask.shape())) {
    throw ShapeError("masked_softmax: mask " + shape_str(mask.shape()) + " does not fit " +
                     shape_str(sa));
  }
  const std::size_t n = sa.back();
  if (n == 0) throw ShapeError("softmax over an empty axis");
  const std::size_t rows = a.value().size() / n;
  const std::size_t mask_rows = mask.size() / n;
  Tensor out = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * n;
    const double* m = mask.data() + (r % mask_rows) * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (m[j] != 0.0) mx = std::max(mx, row[j]);
    }
    if (!std::isfinite(mx)) throw ShapeError("masked_softmax: a row has every entry masked");
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = m[j] != 0.0 ? std::exp(row[j] - mx) : 0.0;
      sum += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
  }
  const std::size_t ia = a.id();
  return a.tape().record("masked_softmax", std::move(out), {ia}, [ia, n, rows](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_accum(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gy[base + j] * y[base + j];
      for (std::size_t j = 0; j < n; ++j) ga[base + j] += y[base + j] * (gy[base + j] - dot);
    }
  });
}

Var layer_norm(const Var& a, int axis, double eps) {
  const std::size_t ax = resolve_axis(a.shape(), axis, "layer_norm");
  const AxisSplit s = split_axis(a.shape(), ax);
  if (s.len == 0) throw ShapeError("layer_norm over an empty axis");
  const Tensor& x = a.value();
  Tensor out(x.shape());
  std::vector<double> inv_std(s.outer * s.inner);
  const double len = static_cast<double>(s.len);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mu = 0.0;
      for (std::size_t i = 0; i < s.len; ++i) mu += x[base + i * s.inner];
      mu /= len;
      double var = 0.0;
      for (std::size_t i = 0; i < s.len; ++i) {
        const double d = x[base + i * s.inner] - mu;
        var += d * d;
      }
      var /= len;
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_std[o * s.inner + in] = inv;
      for (std::size_t i = 0; i < s.len; ++i) {
        out[base + i * s.inner] = (x[base + i * s.inner] - mu) * inv;
      }
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record(
      "layer_norm", std::move(out), {ia},
      [ia, s, inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad(self);
        const Tensor& xhat = t.value(self);
        Tensor& ga = t.grad_accum(ia);
        const double len = static_cast<double>(s.len);
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.len * s.inner + in;
            double mg = 0.0, mgx = 0.0;
            for (std::size_t i = 0; i < s.len; ++i) {
              const std::size_t p = base + i * s.inner;
              mg += gy[p];
              mgx += gy[p] * xhat[p];
            }
            mg /= len;
            mgx /= len;
            const double inv = inv_std[o * s.inner + in];
            for (std::size_t i = 0; i < s.len; ++i) {
              const std::size_t p = base + i * s.inner;
              ga[p] += inv * (gy[p] - mg - xhat[p] * mgx);
            }
          }
        }
      });
}

Var mean(const Var& a, int axis) {
  const std::size_t ax = resolve_axis(a.shape(), axis, "mean");
  const AxisSplit s = split_axis(a.shape(), ax);
  if (s.len == 0) throw ShapeError("mean over an empty axis");
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  Tensor out(out_shape);
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.len; ++i) {
      const double* src = x.data() + (o * s.len + i) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
    }
  }
  for (auto& v : out.values()) v /= static_cast<double>(s.len);
  const std::size_t ia = a.id();
  return a.tape().record("mean", std::move(out), {ia}, [ia, s](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    Tensor& ga = t.grad_accum(ia);
    const double w = 1.0 / static_cast<double>(s.len);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.len; ++i) {
        double* dst = ga.data() + (o * s.len + i) * s.inner;
        const double* src = gy.data() + o * s.inner;
        for (std::size_t in = 0; in < s.inner; ++in) dst[in] += w * src[in];
      }
    }
  });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  const std::size_t ia = a.id();
  return a.tape().record("sum", Tensor::scalar(total), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self).item();
    for (auto& v : t.grad_accum(ia).values()) v += g;
  });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Tape& t = parts[0].tape();
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = resolve_axis(s0, axis, "concat");
  std::vector<std::size_t> lens;
  std::vector<std::size_t> ids;
  Shape out_shape = s0;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    same_tape(parts[0], p, "concat");
    const Shape sp = p.shape();
    bool ok = sp.size() == s0.size();
    for (std::size_t i = 0; ok && i < sp.size(); ++i) ok = i == ax || sp[i] == s0[i];
    if (!ok) throw ShapeError("concat: " + shape_str(sp) + " incompatible with " + shape_str(s0));
    lens.push_back(sp[ax]);
    ids.push_back(p.id());
    out_shape[ax] += sp[ax];
  }
  const AxisSplit s = split_axis(out_shape, ax);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& src = parts[pi].value();
    const std::size_t block = lens[pi] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(src.data() + o * block, block, out.data() + o * s.len * s.inner + offset);
    }
    offset += block;
  }
  return t.record("concat", std::move(out), ids, [ids, lens, s](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
      const std::size_t block = lens[pi] * s.inner;
      if (t.needs_grad(ids[pi])) {
        Tensor& g = t.grad_accum(ids[pi]);
        for (std::size_t o = 0; o < s.outer; ++o) {
          const double* src = gy.data() + o * s.len * s.inner + offset;
          double* dst = g.data() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      offset += block;
    }
  });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
  const Shape in = a.shape();
  const std::size_t rank = in.size();
  if (perm.size() != rank) throw ShapeError("permute: axis count mismatch for " + shape_str(in));
  std::vector<bool> seen(rank, false);
  for (auto p : perm) {
    if (p >= rank || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = true;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in[perm[i]];
    stride[i] = in_stride[perm[i]];
  }
  Tensor out(out_shape);
  if (out.size() == 0) return out;
  // Odometer over output indices; the innermost axis is copied in a tight loop.
  std::vector<std::size_t> idx(rank, 0);
  const std::size_t last = rank - 1;
  const std::size_t inner = out_shape[last];
  const std::size_t inner_stride = stride[last];
  std::size_t src = 0;
  double* dst = out.data();
  const double* from = a.data();
  const std::size_t rows = out.size() / inner;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < inner; ++j) dst[j] = from[src + j * inner_stride];
    dst += inner;
    for (std::size_t ax = last; ax-- > 0;) {
      src += stride[ax];
      if (++idx[ax] < out_shape[ax]) break;
      src -= stride[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

Var permute(const Var& a, const std::vector<std::size_t>& perm) {
  Tensor out = permute(a.value(), perm);
  std::vector<std::size_t> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
  const std::size_t ia = a.id();
  return a.tape().record("permute", std::move(out), {ia}, [ia, inverse](Tape& t, std::size_t self) {
    accumulate(t.grad_accum(ia), permute(t.grad(self), inverse));
  });
}

Var transpose(const Var& a) {
  if (a.shape().size() != 2) throw ShapeError("transpose expects a matrix, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record("reshape", std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    accumulate(t.grad_accum(ia), t.grad(self));
  });
}

namespace {

Var linear_impl(const Var& x, const Var& w, const Var* b) {
  Tape& t = same_tape(x, w, "linear");
  if (b) same_tape(x, *b, "linear");
  Tensor out = kernels::linear(x.value(), w.value(), b ? b->value() : Tensor());
  const std::size_t ix = x.id(), iw = w.id();
  const bool has_bias = b != nullptr;
  const std::size_t ib = has_bias ? b->id() : 0;
  std::vector<std::size_t> inputs{ix, iw};
  if (has_bias) inputs.push_back(ib);
  return t.record("linear", std::move(out), inputs, [ix, iw, ib, has_bias](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& xv = t.value(ix);
    const Tensor& wv = t.value(iw);
    const std::size_t in = wv.dim(0), outd = wv.dim(1);
    const std::size_t rows = xv.size() / in;
    if (t.needs_grad(ix)) {
      kernels::gemm(false, true, rows, in, outd, gy.data(), wv.data(), t.grad_accum(ix).data(), true);
    }
    if (t.needs_grad(iw)) {
      kernels::gemm(true, false, in, outd, rows, xv.data(), gy.data(), t.grad_accum(iw).data(), true);
    }
    if (has_bias && t.needs_grad(ib)) {
      Tensor& gb = t.grad_accum(ib);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < outd; ++j) gb[j] += gy[r * outd + j];
      }
    }
  });
}

}  // namespace

Var linear(const Var& x, const Var& w) { return linear_impl(x, w, nullptr); }

Var linear(const Var& x, const Var& w, const Var& b) { return linear_impl(x, w, &b); }

Var dropout(const Var& a, double p, bool train, std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  if (!train || p == 0.0) return a;
  std::mt19937_64 rng(seed);
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(a.shape());
  for (auto& m : mask.values()) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < p ? 0.0 : keep_scale;
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const std::size_t ia = a.id();
  return a.tape().record("dropout", std::move(out), {ia},
                         [ia, mask = std::move(mask)](Tape& t, std::size_t self) {
                           const Tensor& gy = t.grad(self);
                           Tensor& ga = t.grad_accum(ia);
                           for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * mask[i];
                         });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  const Shape s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size() || s[1] == 0) {
    throw ShapeError("cross_entropy: logits " + shape_str(s) + " with " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = s[0], c = s[1];
  Tensor probs = logits.value();
  double loss = 0.0;
  std::vector<int> ys(labels.begin(), labels.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (ys[i] < 0 || static_cast<std::size_t>(ys[i]) >= c) {
      throw LabelError("label " + std::to_string(ys[i]) + " out of range [0, " + std::to_string(c) + ")");
    }
    double* row = probs.data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    loss += mx + std::log(z) - row[ys[i]];
    kernels::softmax_rows_inplace(row, c);
  }
  loss /= static_cast<double>(n);
  const std::size_t il = logits.id();
  return logits.tape().record(
      "cross_entropy", Tensor::scalar(loss), {il},
      [il, n, c, ys = std::move(ys), probs = std::move(probs)](Tape& t, std::size_t self) {
        const double g = t.grad(self).item() / static_cast<double>(n);
        Tensor& gl = t.grad_accum(il);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const double onehot = static_cast<int>(j) == ys[i] ? 1.0 : 0.0;
            gl[i * c + j] += g * (probs[i * c + j] - onehot);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// gradient check

double grad_check(const ScalarFn& f, const std::vector<Tensor>& points, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw ConfigError("grad_check: eps must lie in [1e-7, 1e-3]");
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(points.size());
  for (const auto& p : points) leaves.push_back(tape.leaf(p));
  const Var out = f(tape, leaves);
  if (out.value().size() != 1) {
    throw ShapeError("grad_check: function output must be scalar, got " + shape_str(out.shape()));
  }
  const Gradients grads = tape.backward(out);

  auto evaluate = [&](const std::vector<Tensor>& pts) {
    Tape t(false);
    std::vector<Var> ls;
    ls.reserve(pts.size());
    for (const auto& p : pts) ls.push_back(t.leaf(p));
    return f(t, ls).value().item();
  };

  double worst = 0.0;
  std::vector<Tensor> probe = points;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Tensor& analytic = grads[leaves[i]];
    for (std::size_t j = 0; j < points[i].size(); ++j) {
      const double x0 = points[i][j];
      probe[i][j] = x0 + eps;
      const double fp = evaluate(probe);
      probe[i][j] = x0 - eps;
      const double fm = evaluate(probe);
      probe[i][j] = x0;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[j];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

double grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& point, double eps) {
  return grad_check([&f](Tape& t, std::span<const Var> xs) { return f(t, xs[0]); },
                    std::vector<Tensor>{point}, eps);
}

}  // namespace costrgcn
