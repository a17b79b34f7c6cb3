#include "mmmie/blocks.hpp"

#include <cmath>
#include <string>

namespace mmmie {
namespace {

std::string key(std::string_view prefix, std::string_view name) {
  std::string out(prefix);
  out += name;
  return out;
}

std::string indexed(std::string_view prefix, char kind, std::size_t k) {
  std::string out(prefix);
  out += kind;
  out += std::to_string(k);
  return out;
}

}  // namespace

Var apply_activation(Activation act, Var x) {
  switch (act) {
    case Activation::none: return x;
    case Activation::relu: return relu(x);
    case Activation::tanh: return tanh(x);
    case Activation::sigmoid: return sigmoid(x);
  }
  return x;
}

void MlpSpec::validate() const {
  if (layer_widths.size() < 2) throw std::invalid_argument("MlpSpec needs at least one layer (two widths)");
  for (std::size_t w : layer_widths) {
    if (w == 0) throw std::invalid_argument("MlpSpec widths must be positive");
  }
}

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-s, s);
  Tensor w({fan_in, fan_out});
  for (double& v : w.data()) v = dist(rng);
  return w;
}

void init_mlp(ParamSet& params, std::string_view prefix, const MlpSpec& spec, Rng& rng) {
  spec.validate();
  for (std::size_t k = 0; k < spec.layers(); ++k) {
    const std::size_t in = spec.layer_widths[k];
    const std::size_t out = spec.layer_widths[k + 1];
    params.add(indexed(prefix, 'w', k), glorot_uniform(in, out, rng), "glorot_uniform");
    params.add(indexed(prefix, 'b', k), Tensor({out}), "zeros");
  }
}

void init_lstm(ParamSet& params, std::string_view prefix, const LstmSpec& spec, Rng& rng) {
  if (spec.input == 0 || spec.hidden == 0) throw std::invalid_argument("LstmSpec sizes must be positive");
  const std::size_t h = spec.hidden;
  params.add(key(prefix, "w_ih"), glorot_uniform(spec.input, 4 * h, rng), "glorot_uniform");
  params.add(key(prefix, "w_hh"), glorot_uniform(h, 4 * h, rng), "glorot_uniform");
  Tensor bias({4 * h});
  for (std::size_t j = h; j < 2 * h; ++j) bias[j] = 1.0;
  params.add(key(prefix, "bias"), std::move(bias), "zeros_forget_one");
}

void init_attention(ParamSet& params, std::string_view prefix, const AttentionSpec& spec, Rng& rng) {
  if (spec.dim == 0) throw std::invalid_argument("AttentionSpec dim must be positive");
  for (const char* name : {"wq", "wk", "wv"}) {
    params.add(key(prefix, name), glorot_uniform(spec.dim, spec.dim, rng), "glorot_uniform");
  }
}

void init_embedding(ParamSet& params, std::string_view name, std::size_t rows, std::size_t dim, Rng& rng) {
  params.add(std::string(name), glorot_uniform(rows, dim, rng), "glorot_uniform");
}

ParamSet init_params(const MlpSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  ParamSet p;
  init_mlp(p, "", spec, rng);
  return p;
}

ParamSet init_params(const LstmSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  ParamSet p;
  init_lstm(p, "", spec, rng);
  return p;
}

ParamSet init_params(const AttentionSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  ParamSet p;
  init_attention(p, "", spec, rng);
  return p;
}

Var mlp_forward(const BoundParams& params, std::string_view prefix, const MlpSpec& spec, Var input) {
  spec.validate();
  Var x = input;
  if (x.value().rank() == 1) x = reshape(x, {1, x.value().size()});
  if (x.value().rank() != 2 || x.value().cols() != spec.input_width()) {
    throw ShapeError("mlp_forward: input " + shape_to_string(input.shape()) + " does not match input width " +
                     std::to_string(spec.input_width()));
  }
  for (std::size_t k = 0; k < spec.layers(); ++k) {
    x = add(matmul(x, params[indexed(prefix, 'w', k)]), params[indexed(prefix, 'b', k)]);
    x = apply_activation(k + 1 == spec.layers() ? spec.output_activation : spec.activation, x);
  }
  return x;
}

namespace {

LstmState lstm_cell(Var input_proj, Var h_prev, Var c_prev, Var w_hh, Var bias) {
  const std::size_t h = h_prev.value().cols();
  if (c_prev.shape() != h_prev.shape() || w_hh.value().rows() != h) {
    throw ShapeError("lstm_step: state shape inconsistent with gate parameters");
  }
  Var gates = add(add(input_proj, matmul(h_prev, w_hh)), bias);
  Var i = sigmoid(slice_cols(gates, 0, h));
  Var f = sigmoid(slice_cols(gates, h, 2 * h));
  Var o = sigmoid(slice_cols(gates, 2 * h, 3 * h));
  Var g = tanh(slice_cols(gates, 3 * h, 4 * h));
  Var c = add(mul(f, c_prev), mul(i, g));
  return {mul(o, tanh(c)), c};
}

}  // namespace

LstmState lstm_step(const BoundParams& params, std::string_view prefix, Var x_t, Var h_prev, Var c_prev) {
  Var w_ih = params[key(prefix, "w_ih")];
  if (x_t.value().rank() != 2 || x_t.value().cols() != w_ih.value().rows()) {
    throw ShapeError("lstm_step: input " + shape_to_string(x_t.shape()) + " does not match w_ih " +
                     shape_to_string(w_ih.shape()));
  }
  return lstm_cell(matmul(x_t, w_ih), h_prev, c_prev, params[key(prefix, "w_hh")], params[key(prefix, "bias")]);
}

Var lstm_forward(const BoundParams& params, std::string_view prefix, Var sequence) {
  Var w_ih = params[key(prefix, "w_ih")];
  Var w_hh = params[key(prefix, "w_hh")];
  Var bias = params[key(prefix, "bias")];
  const Tensor& seq = sequence.value();
  if (seq.rank() != 2 || seq.rows() == 0) throw ShapeError("lstm_forward: empty or non-matrix sequence");
  if (seq.cols() != w_ih.value().rows()) throw ShapeError("lstm_forward: input width mismatch");
  const std::size_t hidden = w_hh.value().rows();
  Tape& tape = sequence.tape();
  // Row t of X*W_ih equals x_t*W_ih bit for bit, so projecting once is exact.
  Var projected = matmul(sequence, w_ih);
  Var h = tape.constant(Tensor({1, hidden}));
  Var c = tape.constant(Tensor({1, hidden}));
  std::vector<Var> outputs;
  outputs.reserve(seq.rows());
  for (std::size_t t = 0; t < seq.rows(); ++t) {
    LstmState s = lstm_cell(row(projected, t), h, c, w_hh, bias);
    h = s.h;
    c = s.c;
    outputs.push_back(h);
  }
  return concat_rows(outputs);
}

AttentionResult self_attention(const BoundParams& params, std::string_view prefix, Var sequence, bool causal) {
  const Tensor& x = sequence.value();
  Var wq = params[key(prefix, "wq")];
  if (x.rank() != 2 || x.rows() == 0) throw ShapeError("self_attention: empty or non-matrix sequence");
  if (x.cols() != wq.value().rows()) {
    throw ShapeError("self_attention: width " + std::to_string(x.cols()) + " does not match projection " +
                     shape_to_string(wq.shape()));
  }
  Var q = matmul(sequence, wq);
  Var k = matmul(sequence, params[key(prefix, "wk")]);
  Var v = matmul(sequence, params[key(prefix, "wv")]);
  Var scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(x.cols())));
  Var weights = softmax_rows(scores, causal);
  return {add(sequence, matmul(weights, v)), weights};
}

Var embedding_lookup(Var table, std::size_t id) {
  if (table.value().rank() != 2) throw ShapeError("embedding_lookup: table must be rank 2");
  if (id >= table.value().rows()) {
    throw std::out_of_range("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                            std::to_string(table.value().rows()) + " rows");
  }
  return row(table, id);
}

}  // namespace mmmie
