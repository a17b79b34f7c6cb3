#include "mmmie/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mmmie {
namespace {

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const Shape& big = a.size() >= b.size() ? a : b;
  const Shape& small = a.size() >= b.size() ? b : a;
  if (!std::equal(small.rbegin(), small.rend(), big.rbegin())) {
    throw ShapeError(std::string(op) + ": shapes " + shape_to_string(a) + " and " + shape_to_string(b) +
                     " are not broadcast-compatible");
  }
  return big;
}

template <class Fwd, class DA, class DB>
Var binary(Var a, Var b, const char* name, Fwd fwd, DA da, DB db) {
  Tape& tape = a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(broadcast_shape(av.shape(), bv.shape(), name));
  const std::size_t na = av.size();
  const std::size_t nb = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i % na], bv[i % nb]);
  const Var parents[] = {a, b};
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape.record(std::move(out), parents, [ia, ib, da, db](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    const std::size_t nx = x.size();
    const std::size_t ny = y.size();
    if (Tensor* ga = t.grad_slot(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i % nx] += g[i] * da(x[i % nx], y[i % ny]);
    }
    if (Tensor* gb = t.grad_slot(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % ny] += g[i] * db(x[i % nx], y[i % ny]);
    }
  });
}

// `deriv(x, y)` receives the input and output element.
template <class Fwd, class Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  Tape& tape = a.tape();
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  const Var parents[] = {a};
  const std::size_t ia = a.id();
  return tape.record(std::move(out), parents, [ia, deriv](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(self);
    if (Tensor* ga = t.grad_slot(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * deriv(x[i], y[i]);
    }
  });
}

void require_rank2(const Var& a, const char* op) {
  if (a.value().rank() != 2) {
    throw ShapeError(std::string(op) + " requires a rank-2 tensor, got " + shape_to_string(a.shape()));
  }
}

struct AxisLayout {
  std::size_t outer;
  std::size_t extent;
  std::size_t inner;
  Shape reduced;
};

AxisLayout axis_layout(const Shape& shape, std::optional<std::size_t> axis, const char* op) {
  if (!axis) {
    const std::size_t n = shape_size(shape);
    if (n == 0) throw ShapeError(std::string(op) + ": empty reduction");
    return {1, n, 1, {}};
  }
  if (*axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(*axis) + " out of range for " +
                     shape_to_string(shape));
  }
  AxisLayout layout{1, shape[*axis], 1, {}};
  if (layout.extent == 0) throw ShapeError(std::string(op) + ": empty reduction axis");
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (d < *axis) layout.outer *= shape[d];
    if (d > *axis) layout.inner *= shape[d];
    if (d != *axis) layout.reduced.push_back(shape[d]);
  }
  return layout;
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  for (double v : b.value().data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var neg(Var a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  const auto& d = a.value().data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(d[i] > 0.0)) {
      throw DomainError("log: non-positive input " + std::to_string(d[i]) + " at element " + std::to_string(i));
    }
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var elementwise(OpKind kind, Var a, std::optional<Var> b) {
  const bool is_binary = kind == OpKind::add || kind == OpKind::sub || kind == OpKind::mul;
  if (is_binary && !b) throw std::invalid_argument("elementwise: binary op requires a second operand");
  if (!is_binary && b) throw std::invalid_argument("elementwise: unary op given a second operand");
  switch (kind) {
    case OpKind::add: return add(a, *b);
    case OpKind::sub: return sub(a, *b);
    case OpKind::mul: return mul(a, *b);
    case OpKind::neg: return neg(a);
    case OpKind::exp: return exp(a);
    case OpKind::log: return log(a);
    case OpKind::tanh: return tanh(a);
    case OpKind::sigmoid: return sigmoid(a);
    case OpKind::relu: return relu(a);
  }
  throw std::invalid_argument("elementwise: unknown op kind");
}

namespace {

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_to_string(av.shape()) + " x " +
                     shape_to_string(bv.shape()));
  }
  Tensor out({m, n});
  gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  const Var parents[] = {a, b};
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), parents, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const double* g = t.out_grad(self).data().data();
    if (Tensor* ga = t.grad_slot(ia)) {
      // dA = G * B^T
      const double* bd = t.value(ib).data().data();
      double* gad = ga->data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bd[p * n + j];
          gad[i * k + p] += acc;
        }
      }
    }
    if (Tensor* gb = t.grad_slot(ib)) {
      // dB = A^T * G
      const double* ad = t.value(ia).data().data();
      double* gbd = gb->data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = ad[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gbd[p * n + j] += aip * g[i * n + j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  require_rank2(a, "transpose");
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  const Var parents[] = {a};
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), parents, [ia, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    if (Tensor* ga = t.grad_slot(ia)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga->at(i, j) += g.at(j, i);
    }
  });
}

Var reduce(ReduceKind kind, Var a, std::optional<std::size_t> axis) {
  const Tensor& av = a.value();
  const AxisLayout L = axis_layout(av.shape(), axis, "reduce");
  Tensor out(L.reduced);
  std::vector<std::size_t> argmax;
  if (kind == ReduceKind::max) argmax.resize(out.size());
  for (std::size_t o = 0; o < L.outer; ++o) {
    for (std::size_t in = 0; in < L.inner; ++in) {
      const std::size_t dst = o * L.inner + in;
      const std::size_t base = o * L.extent * L.inner + in;
      if (kind == ReduceKind::max) {
        std::size_t best = 0;
        for (std::size_t e = 1; e < L.extent; ++e) {
          if (av[base + e * L.inner] > av[base + best * L.inner]) best = e;
        }
        argmax[dst] = best;
        out[dst] = av[base + best * L.inner];
      } else {
        double acc = 0.0;
        for (std::size_t e = 0; e < L.extent; ++e) acc += av[base + e * L.inner];
        out[dst] = kind == ReduceKind::mean ? acc / static_cast<double>(L.extent) : acc;
      }
    }
  }
  const Var parents[] = {a};
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), parents,
                         [ia, kind, L, argmax = std::move(argmax)](Tape& t, std::size_t self) {
                           const Tensor& g = t.out_grad(self);
                           Tensor* ga = t.grad_slot(ia);
                           if (!ga) return;
                           const double w = kind == ReduceKind::mean ? 1.0 / static_cast<double>(L.extent) : 1.0;
                           for (std::size_t o = 0; o < L.outer; ++o) {
                             for (std::size_t in = 0; in < L.inner; ++in) {
                               const std::size_t src = o * L.inner + in;
                               const std::size_t base = o * L.extent * L.inner + in;
                               if (kind == ReduceKind::max) {
                                 (*ga)[base + argmax[src] * L.inner] += g[src];
                               } else {
                                 for (std::size_t e = 0; e < L.extent; ++e) (*ga)[base + e * L.inner] += w * g[src];
                               }
                             }
                           }
                         });
}

Var logsumexp(Var a, std::optional<std::size_t> axis) {
  const Tensor& av = a.value();
  const AxisLayout L = axis_layout(av.shape(), axis, "logsumexp");
  Tensor out(L.reduced);
  for (std::size_t o = 0; o < L.outer; ++o) {
    for (std::size_t in = 0; in < L.inner; ++in) {
      const std::size_t base = o * L.extent * L.inner + in;
      double m = av[base];
      for (std::size_t e = 1; e < L.extent; ++e) m = std::max(m, av[base + e * L.inner]);
      double s = 0.0;
      for (std::size_t e = 0; e < L.extent; ++e) s += std::exp(av[base + e * L.inner] - m);
      out[o * L.inner + in] = m + std::log(s);
    }
  }
  const Var parents[] = {a};
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), parents, [ia, L](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(self);
    Tensor* ga = t.grad_slot(ia);
    if (!ga) return;
    for (std::size_t o = 0; o < L.outer; ++o) {
      for (std::size_t in = 0; in < L.inner; ++in) {
        const std::size_t src = o * L.inner + in;
        const std::size_t base = o * L.extent * L.inner + in;
        for (std::size_t e = 0; e < L.extent; ++e) {
          const std::size_t idx = base + e * L.inner;
          (*ga)[idx] += g[src] * std::exp(x[idx] - y[src]);
        }
      }
    }
  });
}

Var softmax_rows(Var a, bool causal) {
  require_rank2(a, "softmax_rows");
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  if (c == 0) throw ShapeError("softmax_rows: empty rows");
  if (causal && c < r) throw ShapeError("softmax_rows: causal mask needs cols >= rows");
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t width = causal ? i + 1 : c;
    double m = av.at(i, 0);
    for (std::size_t j = 1; j < width; ++j) m = std::max(m, av.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) s += (out.at(i, j) = std::exp(av.at(i, j) - m));
    for (std::size_t j = 0; j < width; ++j) out.at(i, j) /= s;
  }
  const Var parents[] = {a};
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), parents, [ia, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& y = t.value(self);
    Tensor* ga = t.grad_slot(ia);
    if (!ga) return;
    // Masked entries have y == 0 and contribute nothing.
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < c; ++j) ga->at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
    }
  });
}

Var reshape(Var a, Shape shape) {
  const Tensor& av = a.value();
  if (shape_size(shape) != av.size()) {
    throw ShapeError("reshape: " + shape_to_string(av.shape()) + " -> " + shape_to_string(shape));
  }
  const Var parents[] = {a};
  const std::size_t ia = a.id();
  return a.tape().record(Tensor(std::move(shape), av.values()), parents, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    if (Tensor* ga = t.grad_slot(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_cols");
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  if (begin > end || end > c) throw ShapeError("slice_cols: range out of bounds");
  const std::size_t w = end - begin;
  Tensor out({r, w});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = av.at(i, begin + j);
  const Var parents[] = {a};
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), parents, [ia, r, w, begin](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    if (Tensor* ga = t.grad_slot(ia)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) ga->at(i, begin + j) += g.at(i, j);
    }
  });
}

Var gather_rows(Var a, std::span<const std::size_t> indices) {
  require_rank2(a, "gather_rows");
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out({indices.size(), c});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= r) {
      throw std::out_of_range("gather_rows: index " + std::to_string(indices[i]) + " >= " + std::to_string(r));
    }
    std::copy_n(av.data().begin() + indices[i] * c, c, out.data().begin() + i * c);
  }
  const Var parents[] = {a};
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), parents,
                         [ia, c, idx = std::vector<std::size_t>(indices.begin(), indices.end())](Tape& t,
                                                                                                 std::size_t self) {
                           const Tensor& g = t.out_grad(self);
                           if (Tensor* ga = t.grad_slot(ia)) {
                             for (std::size_t i = 0; i < idx.size(); ++i)
                               for (std::size_t j = 0; j < c; ++j) ga->at(idx[i], j) += g.at(i, j);
                           }
                         });
}

Var row(Var a, std::size_t index) {
  const std::size_t idx[] = {index};
  return gather_rows(a, idx);
}

Var pick(Var a, std::span<const std::size_t> indices) {
  require_rank2(a, "pick");
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  if (indices.size() != r) throw ShapeError("pick: need one index per row");
  Tensor out({r});
  for (std::size_t i = 0; i < r; ++i) {
    if (indices[i] >= c) {
      throw std::out_of_range("pick: index " + std::to_string(indices[i]) + " >= " + std::to_string(c));
    }
    out[i] = av.at(i, indices[i]);
  }
  const Var parents[] = {a};
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), parents,
                         [ia, idx = std::vector<std::size_t>(indices.begin(), indices.end())](Tape& t,
                                                                                             std::size_t self) {
                           const Tensor& g = t.out_grad(self);
                           if (Tensor* ga = t.grad_slot(ia)) {
                             for (std::size_t i = 0; i < idx.size(); ++i) ga->at(i, idx[i]) += g[i];
                           }
                         });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t r = parts[0].value().rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.value().rows() != r) throw ShapeError("concat_cols: row counts differ");
    offsets.push_back(total);
    total += p.value().cols();
  }
  Tensor out({r, total});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out.at(i, offsets[k] + j) = pv.at(i, j);
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return parts[0].tape().record(std::move(out), parts,
                                [ids, offsets, r](Tape& t, std::size_t self) {
                                  const Tensor& g = t.out_grad(self);
                                  for (std::size_t k = 0; k < ids.size(); ++k) {
                                    Tensor* gp = t.grad_slot(ids[k]);
                                    if (!gp) continue;
                                    const std::size_t w = gp->cols();
                                    for (std::size_t i = 0; i < r; ++i)
                                      for (std::size_t j = 0; j < w; ++j) gp->at(i, j) += g.at(i, offsets[k] + j);
                                  }
                                });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t c = parts[0].value().cols();
  std::vector<double> data;
  std::size_t rows = 0;
  for (const Var& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.value().cols() != c) throw ShapeError("concat_rows: column counts differ");
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    rows += p.value().rows();
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return parts[0].tape().record(Tensor({rows, c}, std::move(data)), parts, [ids](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    std::size_t offset = 0;
    for (std::size_t id : ids) {
      const std::size_t n = t.value(id).size();
      if (Tensor* gp = t.grad_slot(id)) {
        for (std::size_t i = 0; i < n; ++i) (*gp)[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

}  // namespace mmmie
