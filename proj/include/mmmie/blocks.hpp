#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "mmmie/ops.hpp"
#include "mmmie/params.hpp"

namespace mmmie {

using Rng = std::mt19937_64;

enum class Activation { none, relu, tanh, sigmoid };

Var apply_activation(Activation act, Var x);

/// Fully connected stack. layer_widths = {in, hidden..., out}; parameters are
/// `<prefix>w<k>` [in_k x out_k] and `<prefix>b<k>` [out_k].
struct MlpSpec {
  std::vector<std::size_t> layer_widths;
  Activation activation = Activation::relu;
  Activation output_activation = Activation::none;

  void validate() const;
  std::size_t layers() const { return layer_widths.size() - 1; }
  std::size_t input_width() const { return layer_widths.front(); }
  std::size_t output_width() const { return layer_widths.back(); }
};

/// Gate order within the 4H blocks is input, forget, output, candidate.
struct LstmSpec {
  std::size_t input = 0;
  std::size_t hidden = 0;
};

struct AttentionSpec {
  std::size_t dim = 0;
};

// Initializers: weights ~ U(-s, s) with s = sqrt(6 / (fan_in + fan_out)), biases
// zero, LSTM forget-gate bias 1.
void init_mlp(ParamSet& params, std::string_view prefix, const MlpSpec& spec, Rng& rng);
void init_lstm(ParamSet& params, std::string_view prefix, const LstmSpec& spec, Rng& rng);
void init_attention(ParamSet& params, std::string_view prefix, const AttentionSpec& spec, Rng& rng);
void init_embedding(ParamSet& params, std::string_view name, std::size_t rows, std::size_t dim, Rng& rng);
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

ParamSet init_params(const MlpSpec& spec, std::uint64_t seed);
ParamSet init_params(const LstmSpec& spec, std::uint64_t seed);
ParamSet init_params(const AttentionSpec& spec, std::uint64_t seed);

/// `input` is [n x in] (or [in], treated as one row); returns [n x out].
Var mlp_forward(const BoundParams& params, std::string_view prefix, const MlpSpec& spec, Var input);

struct LstmState {
  Var h;
  Var c;
};

/// One LSTM cell update on [n x in] inputs with [n x H] state.
LstmState lstm_step(const BoundParams& params, std::string_view prefix, Var x_t, Var h_prev, Var c_prev);

/// Runs the cell over the rows of `sequence` [T x in] from a zero state; returns [T x H].
Var lstm_forward(const BoundParams& params, std::string_view prefix, Var sequence);

struct AttentionResult {
  Var output;   // [T x d]
  Var weights;  // [T x T], rows sum to one
};

/// Single-head scaled dot-product self-attention with residual connection:
/// out = X + softmax(X Wq (X Wk)^T / sqrt(d)) X Wv.
AttentionResult self_attention(const BoundParams& params, std::string_view prefix, Var sequence, bool causal = true);

/// Row `id` of `table` [V x E] as a [1 x E] matrix.
Var embedding_lookup(Var table, std::size_t id);

}  // namespace mmmie
