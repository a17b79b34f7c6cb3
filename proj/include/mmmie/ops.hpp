#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mmmie/tape.hpp"

namespace mmmie {

enum class OpKind { add, sub, mul, neg, exp, log, tanh, sigmoid, relu };
enum class ReduceKind { sum, mean, max };

// Binary ops broadcast over trailing dimensions: the lower-rank operand's shape
// must equal the trailing dimensions of the other (rank-0 broadcasts anywhere).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var exp(Var a);
/// Natural log; throws DomainError for any non-positive element.
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var square(Var a);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
/// Elementwise clamp. Gradient passes only where lo < a < hi.
Var clamp(Var a, double lo, double hi);

/// Dispatcher over the elementwise kinds; `b` is required for binary kinds only.
Var elementwise(OpKind kind, Var a, std::optional<Var> b = std::nullopt);

Var matmul(Var a, Var b);
Var transpose(Var a);

/// Reduction over one axis, or over all elements when `axis` is empty.
/// Max routes its gradient to the first maximal element.
Var reduce(ReduceKind kind, Var a, std::optional<std::size_t> axis = std::nullopt);
inline Var sum(Var a, std::optional<std::size_t> axis = std::nullopt) { return reduce(ReduceKind::sum, a, axis); }
inline Var mean(Var a, std::optional<std::size_t> axis = std::nullopt) { return reduce(ReduceKind::mean, a, axis); }
inline Var max(Var a, std::optional<std::size_t> axis = std::nullopt) { return reduce(ReduceKind::max, a, axis); }

/// max(a) + log(sum(exp(a - max(a)))) over one axis or all elements.
Var logsumexp(Var a, std::optional<std::size_t> axis = std::nullopt);

/// Row-wise softmax of a rank-2 tensor. With `causal`, row i covers columns
/// 0..i only and the remaining entries are exactly zero.
Var softmax_rows(Var a, bool causal = false);

Var reshape(Var a, Shape shape);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var row(Var a, std::size_t index);
Var gather_rows(Var a, std::span<const std::size_t> indices);
/// out[i] = a[i, indices[i]] for rank-2 `a`; result has shape [rows].
Var pick(Var a, std::span<const std::size_t> indices);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }

}  // namespace mmmie
