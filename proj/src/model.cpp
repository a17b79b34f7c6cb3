#include "mmmie/model.hpp"

#include <cmath>
#include <numeric>

namespace mmmie {

void ModelSpec::validate() const {
  for (std::size_t d : input_dims)
    if (d == 0) throw std::invalid_argument("ModelSpec: input dims must be positive");
  if (embed_dim == 0 || lstm_hidden == 0 || fusion_hidden == 0 || max_length == 0) {
    throw std::invalid_argument("ModelSpec: sizes must be positive");
  }
  if (num_classes < 2) throw std::invalid_argument("ModelSpec: need at least two classes");
  if (num_speakers == 0) throw std::invalid_argument("ModelSpec: num_speakers must be positive");
}

MlpSpec ModelSpec::projection(std::size_t modality) const {
  return MlpSpec{{input_dims.at(modality), embed_dim}, Activation::none, Activation::none};
}

MlpSpec ModelSpec::fusion() const {
  return MlpSpec{{kModalities * lstm_hidden, fusion_hidden, num_classes}, Activation::relu, Activation::none};
}

std::string branch_prefix(std::size_t modality) { return std::string(kModalityNames.at(modality)) + "/"; }

ParamSet init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ParamSet p;
  for (std::size_t m = 0; m < kModalities; ++m) {
    const std::string prefix = branch_prefix(m);
    init_mlp(p, prefix + "proj/", spec.projection(m), rng);
    init_attention(p, prefix + "attn/", AttentionSpec{spec.embed_dim}, rng);
    init_lstm(p, prefix + "lstm/", LstmSpec{spec.embed_dim, spec.lstm_hidden}, rng);
  }
  init_embedding(p, kIdentityTable, spec.num_speakers, spec.embed_dim, rng);
  init_embedding(p, kPositionTable, spec.max_length, spec.embed_dim, rng);
  init_mlp(p, "fusion/", spec.fusion(), rng);
  return p;
}

Var compose_input(Var feature, std::span<const std::size_t> speaker_ids, std::span<const std::size_t> positions,
                  std::optional<Var> identity_table, Var position_table) {
  const Tensor& f = feature.value();
  if (f.rank() != 2) throw ShapeError("compose_input: feature must be [T x E]");
  const std::size_t n = f.rows();
  if (speaker_ids.size() != n || positions.size() != n) {
    throw ShapeError("compose_input: need one speaker id and one position per row");
  }
  if (position_table.value().cols() != f.cols() ||
      (identity_table && identity_table->value().cols() != f.cols())) {
    throw ShapeError("compose_input: feature width " + std::to_string(f.cols()) +
                     " differs from the embedding width");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0 ? positions[0] != 0 : positions[i] <= positions[i - 1]) {
      throw std::invalid_argument("compose_input: positions must increase strictly from 0");
    }
  }
  Var out = add(feature, gather_rows(position_table, positions));
  if (identity_table) out = add(out, gather_rows(*identity_table, speaker_ids));
  return out;
}

ModelOutput forward(const BoundParams& params, const ModelSpec& spec, const ConversationBatch& conversation,
                    const ForwardOptions& options) {
  conversation.validate();
  const std::size_t n = conversation.length();
  if (n > spec.max_length) {
    throw std::invalid_argument("forward: conversation '" + conversation.id + "' has " + std::to_string(n) +
                                " utterances, more than max_length " + std::to_string(spec.max_length));
  }
  Tape& tape = params.tape();
  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  std::optional<Var> identity;
  if (options.identity_on) identity = params[kIdentityTable];
  const Var position = params[kPositionTable];

  ModelOutput out;
  for (std::size_t m = 0; m < kModalities; ++m) {
    const Tensor& raw = conversation.features[m];
    if (raw.cols() != spec.input_dims[m]) {
      throw ShapeError("forward: " + std::string(kModalityNames[m]) + " features are " + std::to_string(raw.cols()) +
                       " wide, the model expects " + std::to_string(spec.input_dims[m]));
    }
    out.inputs[m] = tape.constant(options.modalities[m] ? raw : Tensor(raw.shape()));
    const std::string prefix = branch_prefix(m);
    Var encoded = mlp_forward(params, prefix + "proj/", spec.projection(m), out.inputs[m]);
    encoded = self_attention(params, prefix + "attn/", encoded, true).output;
    Var composed = compose_input(encoded, conversation.speaker_ids, positions, identity, position);
    out.features[m] = lstm_forward(params, prefix + "lstm/", composed);
  }
  out.logits = mlp_forward(params, "fusion/", spec.fusion(), concat_cols(out.features));
  return out;
}

Var task_loss(Var logits, std::span<const std::size_t> labels) {
  const Tensor& l = logits.value();
  if (l.rank() != 2 || l.rows() != labels.size() || labels.empty()) {
    throw ShapeError("task_loss: need one label per logit row");
  }
  for (std::size_t y : labels) {
    if (y >= l.cols()) throw std::out_of_range("task_loss: label " + std::to_string(y) + " out of range");
  }
  return neg(mean(sub(pick(logits, labels), logsumexp(logits, 1))));
}

LossBundle total_loss(double task, double mi, double msi, double alpha, double beta) {
  const std::pair<const char*, double> terms[] = {{"task", task}, {"mi", mi}, {"msi", msi}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) throw NumericalError(std::string("total_loss: ") + name + " term is not finite");
  }
  if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("total_loss: weights must be non-negative");
  return LossBundle{task, mi, msi, task + alpha * mi + beta * msi, alpha, beta};
}

TapedLoss total_loss(Var task, std::optional<Var> mi, std::optional<Var> msi, double alpha, double beta,
                     double mi_value, double msi_value) {
  const double a = mi ? alpha : 0.0;
  const double b = msi ? beta : 0.0;
  LossBundle bundle = total_loss(task.value().item(), mi ? mi->value().item() : mi_value,
                                 msi ? msi->value().item() : msi_value, a, b);
  Var total = task;
  if (mi) total = add(total, scale(*mi, a));
  if (msi) total = add(total, scale(*msi, b));
  bundle.total = total.value().item();
  return {total, bundle};
}

}  // namespace mmmie
