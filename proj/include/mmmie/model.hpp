#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "mmmie/blocks.hpp"
#include "mmmie/data.hpp"

namespace mmmie {

/// Architecture sizes. Every modality is projected to `embed_dim`, the width
/// shared by the attention encoder and the identity and position tables.
struct ModelSpec {
  std::array<std::size_t, kModalities> input_dims{16, 16, 16};
  std::size_t embed_dim = 16;
  std::size_t lstm_hidden = 16;
  std::size_t fusion_hidden = 32;
  std::size_t num_classes = 4;
  std::size_t num_speakers = 2;
  std::size_t max_length = 64;

  void validate() const;
  MlpSpec projection(std::size_t modality) const;
  MlpSpec fusion() const;
};

/// Learned per-speaker rows, stored in the model ParamSet under kIdentityTable.
struct IdentityEmbedder {
  std::size_t num_speakers = 2;
  std::size_t embed_dim = 0;
};

/// Learned per-position rows, stored under kPositionTable.
struct PositionEmbedder {
  std::size_t max_length = 0;
  std::size_t embed_dim = 0;
};

inline constexpr const char* kIdentityTable = "identity";
inline constexpr const char* kPositionTable = "position";

/// Parameter prefix of a modality branch, e.g. "text/".
std::string branch_prefix(std::size_t modality);

/// All model parameters in one namespace: `<modality>/proj/`, `<modality>/attn/`,
/// `<modality>/lstm/`, `identity`, `position` and `fusion/`.
ParamSet init_model(const ModelSpec& spec, std::uint64_t seed);

/// feature + identity[speaker_ids] + position[positions], row by row. A missing
/// identity table drops the speaker term entirely.
Var compose_input(Var feature, std::span<const std::size_t> speaker_ids, std::span<const std::size_t> positions,
                  std::optional<Var> identity_table, Var position_table);

struct ForwardOptions {
  bool identity_on = true;
  /// Absent modalities receive all-zero input features.
  std::array<bool, kModalities> modalities{true, true, true};
};

struct ModelOutput {
  std::array<Var, kModalities> inputs;    // h_m as fed to the encoder, [T x d_m]
  std::array<Var, kModalities> features;  // f_m, [T x lstm_hidden]
  Var logits;                             // [T x num_classes]
};

ModelOutput forward(const BoundParams& params, const ModelSpec& spec, const ConversationBatch& conversation,
                    const ForwardOptions& options = {});

/// Mean cross-entropy over rows.
Var task_loss(Var logits, std::span<const std::size_t> labels);

/// Loss components in nats, with the weights actually applied.
struct LossBundle {
  double task = 0.0;
  double mi = 0.0;
  double msi = 0.0;
  double total = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
};

/// task + alpha * mi + beta * msi; throws NumericalError naming any non-finite term.
LossBundle total_loss(double task, double mi, double msi, double alpha, double beta);

struct TapedLoss {
  Var total;
  LossBundle bundle;
};

/// Taped version. An absent term is left off the tape and its weight recorded as zero;
/// the bundle still reports the measured value passed in `*_value`.
TapedLoss total_loss(Var task, std::optional<Var> mi, std::optional<Var> msi, double alpha, double beta,
                     double mi_value, double msi_value);

}  // namespace mmmie
