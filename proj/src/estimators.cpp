#include "mmmie/estimators.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace mmmie {
namespace {

MlpSpec hidden_stack(std::size_t in, std::span<const std::size_t> hidden, std::size_t out) {
  MlpSpec spec;
  spec.layer_widths.push_back(in);
  spec.layer_widths.insert(spec.layer_widths.end(), hidden.begin(), hidden.end());
  spec.layer_widths.push_back(out);
  spec.activation = Activation::relu;
  spec.output_activation = Activation::none;
  return spec;
}

void require_same_rows(const Var& a, const Var& b, const char* op) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.value().rows() != b.value().rows()) {
    throw ShapeError(std::string(op) + ": batches " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()) + " are not row-aligned");
  }
}

}  // namespace

StatisticNet StatisticNet::create(std::size_t x_dim, std::size_t y_dim, std::span<const std::size_t> hidden,
                                  std::uint64_t seed) {
  StatisticNet net;
  net.spec = hidden_stack(x_dim + y_dim, hidden, 1);
  net.params = init_params(net.spec, seed);
  return net;
}

BoundStatisticNet bind(Tape& tape, const StatisticNet& net, bool trainable) {
  return BoundStatisticNet{&net.spec, BoundParams(tape, net.params, trainable)};
}

Var BoundStatisticNet::operator()(Var x, Var y) const {
  require_same_rows(x, y, "statistic network");
  const Var parts[] = {x, y};
  Var joined = concat_cols(parts);
  if (joined.value().cols() != spec->input_width()) {
    throw ShapeError("statistic network: feature widths " + std::to_string(x.value().cols()) + "+" +
                     std::to_string(y.value().cols()) + " do not match input width " +
                     std::to_string(spec->input_width()));
  }
  Var out = mlp_forward(params, "", *spec, joined);
  return reshape(out, {out.value().rows()});
}

VariationalNet VariationalNet::create(std::size_t x_dim, std::size_t y_dim, std::span<const std::size_t> hidden,
                                      std::uint64_t seed) {
  VariationalNet net;
  net.mean_spec = hidden_stack(x_dim, hidden, y_dim);
  net.logvar_spec = hidden_stack(x_dim, hidden, y_dim);
  Rng rng(seed);
  init_mlp(net.params, "mean/", net.mean_spec, rng);
  init_mlp(net.params, "logvar/", net.logvar_spec, rng);
  return net;
}

BoundVariationalNet bind(Tape& tape, const VariationalNet& net, bool trainable) {
  return BoundVariationalNet{&net, BoundParams(tape, net.params, trainable)};
}

Var BoundVariationalNet::mean(Var x) const { return mlp_forward(params, "mean/", net->mean_spec, x); }

Var BoundVariationalNet::log_variance(Var x) const {
  return clamp(mlp_forward(params, "logvar/", net->logvar_spec, x), kLogVarMin, kLogVarMax);
}

std::vector<std::size_t> shuffle_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i-- > 1;) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(perm[i], perm[pick(rng)]);
  }
  return perm;
}

std::vector<std::size_t> shuffle_permutation(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return shuffle_permutation(n, rng);
}

Tensor shuffle_marginals(const Tensor& y, std::uint64_t seed) {
  const std::size_t n = y.rows();
  if (n < 2) throw std::invalid_argument("shuffle_marginals: batch needs at least two samples");
  const auto perm = shuffle_permutation(n, seed);
  const std::size_t c = y.cols();
  Tensor out({n, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = y.at(perm[i], j);
  return out;
}

TapedEstimate dv_lower_bound(const BoundStatisticNet& net, Var x, Var y, Var x_marginal, Var y_marginal) {
  if (x.value().rows() == 0 || x_marginal.value().rows() == 0) {
    throw ShapeError("dv_lower_bound: empty batch");
  }
  if (x.value().cols() != x_marginal.value().cols() || y.value().cols() != y_marginal.value().cols()) {
    throw ShapeError("dv_lower_bound: joint and marginal feature dimensions differ");
  }
  Var t_joint = net(x, y);
  Var t_marginal = net(x_marginal, y_marginal);
  const double n = static_cast<double>(t_marginal.value().size());
  Var joint_mean = mean(t_joint);
  Var log_partition = add_scalar(logsumexp(t_marginal), -std::log(n));
  Var value = sub(joint_mean, log_partition);
  MiEstimate stats{EstimateKind::dv_lower, value.value().item(), x.value().rows(), joint_mean.value().item(),
                   log_partition.value().item()};
  return {value, stats};
}

TapedEstimate dv_lower_bound(const BoundStatisticNet& net, Var x, Var y, std::span<const std::size_t> permutation) {
  if (permutation.size() != y.value().rows()) throw ShapeError("dv_lower_bound: permutation length mismatch");
  return dv_lower_bound(net, x, y, x, gather_rows(y, permutation));
}

PairwiseLoss mine_loss(std::span<const BoundStatisticNet, 3> nets, Var f_t, Var f_v, Var f_a,
                       std::span<const std::vector<std::size_t>, 3> permutations) {
  const std::size_t n = f_t.value().rows();
  if (f_v.value().rows() != n || f_a.value().rows() != n) throw ShapeError("mine_loss: batch sizes differ");
  const std::array<std::pair<Var, Var>, 3> pairs = {{{f_t, f_v}, {f_t, f_a}, {f_v, f_a}}};
  PairwiseLoss out;
  Var total;
  for (std::size_t k = 0; k < 3; ++k) {
    TapedEstimate e = dv_lower_bound(nets[k], pairs[k].first, pairs[k].second, permutations[k]);
    out.estimates[k] = e.stats;
    total = k == 0 ? e.value : add(total, e.value);
  }
  out.loss = neg(total);
  return out;
}

Var q_log_likelihood(const BoundVariationalNet& q, Var x, Var y) {
  require_same_rows(x, y, "q_log_likelihood");
  Var mu = q.mean(x);
  Var logvar = q.log_variance(x);
  if (mu.shape() != y.shape()) throw ShapeError("q_log_likelihood: y width does not match the net output");
  Var terms = add(mul(square(sub(y, mu)), exp(neg(logvar))), add_scalar(logvar, std::log(2.0 * std::numbers::pi)));
  return scale(sum(terms, 1), -0.5);
}

Var q_cross_log_likelihood(const BoundVariationalNet& q, Var x, Var y) {
  require_same_rows(x, y, "q_cross_log_likelihood");
  const std::size_t n = x.value().rows();
  const std::size_t d = y.value().cols();
  Var mu = q.mean(x);
  Var logvar = q.log_variance(x);
  if (mu.shape() != y.shape()) throw ShapeError("q_cross_log_likelihood: y width does not match the net output");
  // tiled[j, i, :] = y_j; the [N x D] parameters broadcast over the leading axis to index i.
  std::vector<std::size_t> repeat(n * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) repeat[j * n + i] = j;
  Var tiled = reshape(gather_rows(y, repeat), {n, n, d});
  Var terms = add(mul(square(sub(tiled, mu)), exp(neg(logvar))), add_scalar(logvar, std::log(2.0 * std::numbers::pi)));
  return scale(sum(terms, 2), -0.5);
}

TapedEstimate vclub_estimate(const BoundVariationalNet& q, Var x, Var y) {
  const std::size_t n = x.value().rows();
  if (n < 2) throw std::invalid_argument("vclub_estimate: need at least two samples");
  Var positive = mean(q_log_likelihood(q, x, y));
  Var negative = mean(q_cross_log_likelihood(q, x, y));
  Var value = sub(positive, negative);
  MiEstimate stats{EstimateKind::vclub_upper, value.value().item(), n, positive.value().item(),
                   negative.value().item()};
  return {value, stats};
}

QFitReport q_fit_step(VariationalNet& net, const Tensor& x, const Tensor& y, AdamState& state,
                      const AdamHyper& hyper) {
  if (x.rows() == 0) throw std::invalid_argument("q_fit_step: empty batch");
  Tape tape;
  BoundVariationalNet q = bind(tape, net, true);
  Var ll = mean(q_log_likelihood(q, tape.constant(x), tape.constant(y)));
  Var loss = neg(ll);
  tape.backward(loss);
  Gradients grads = q.params.gradients();
  QFitReport report{ll.value().item(), gradient_norm(grads)};
  adam_step(net.params, grads, state, hyper);
  return report;
}

PairwiseLoss msi_loss(std::span<const BoundVariationalNet, 3> q_nets, std::span<const Var, 3> inputs,
                      std::span<const Var, 3> features) {
  const std::size_t n = inputs[0].value().rows();
  PairwiseLoss out;
  Var total;
  for (std::size_t k = 0; k < 3; ++k) {
    if (inputs[k].value().rows() != n || features[k].value().rows() != n) {
      throw ShapeError("msi_loss: batch sizes differ across modalities");
    }
    TapedEstimate e = vclub_estimate(q_nets[k], inputs[k], features[k]);
    out.estimates[k] = e.stats;
    total = k == 0 ? e.value : add(total, e.value);
  }
  out.loss = total;
  return out;
}

}  // namespace mmmie
