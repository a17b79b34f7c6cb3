#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mmmie/blocks.hpp"
#include "mmmie/optim.hpp"

namespace mmmie {

enum class EstimateKind { dv_lower, vclub_upper };

/// A mutual-information bound in nats together with the two terms it is built from.
///   dv_lower:    value = joint_mean - log_partition
///   vclub_upper: value = positive_mean - negative_mean
struct MiEstimate {
  EstimateKind kind = EstimateKind::dv_lower;
  double value = 0.0;
  std::size_t batch_size = 0;
  double first = 0.0;
  double second = 0.0;

  double recombined() const { return first - second; }
};

struct TapedEstimate {
  Var value;
  MiEstimate stats;
};

/// Statistic network T(x, y): an MLP over concat(x, y) with a scalar output.
struct StatisticNet {
  MlpSpec spec;
  ParamSet params;

  static StatisticNet create(std::size_t x_dim, std::size_t y_dim, std::span<const std::size_t> hidden,
                             std::uint64_t seed);
};

struct BoundStatisticNet {
  const MlpSpec* spec = nullptr;
  BoundParams params;

  /// One statistic value per row pair; returns shape [n].
  Var operator()(Var x, Var y) const;
};

BoundStatisticNet bind(Tape& tape, const StatisticNet& net, bool trainable = true);

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

/// Diagonal Gaussian q(y | x) with separate mean and log-variance MLPs
/// (parameters prefixed `mean/` and `logvar/`). Log-variance is clamped.
struct VariationalNet {
  MlpSpec mean_spec;
  MlpSpec logvar_spec;
  ParamSet params;

  static VariationalNet create(std::size_t x_dim, std::size_t y_dim, std::span<const std::size_t> hidden,
                               std::uint64_t seed);
};

struct BoundVariationalNet {
  const VariationalNet* net = nullptr;
  BoundParams params;

  Var mean(Var x) const;
  Var log_variance(Var x) const;
};

BoundVariationalNet bind(Tape& tape, const VariationalNet& net, bool trainable = true);

/// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> shuffle_permutation(std::size_t n, Rng& rng);
std::vector<std::size_t> shuffle_permutation(std::size_t n, std::uint64_t seed);
/// Rows of `y` reordered by shuffle_permutation(rows, seed). Requires at least two rows.
Tensor shuffle_marginals(const Tensor& y, std::uint64_t seed);

/// Donsker-Varadhan bound: mean T(joint) - (logsumexp T(marginal) - log n).
TapedEstimate dv_lower_bound(const BoundStatisticNet& net, Var x, Var y, Var x_marginal, Var y_marginal);
/// Same, with the marginal batch formed as (x, y[permutation]).
TapedEstimate dv_lower_bound(const BoundStatisticNet& net, Var x, Var y, std::span<const std::size_t> permutation);

struct PairwiseLoss {
  Var loss;
  std::array<MiEstimate, 3> estimates;
};

/// -(I(t;v) + I(t;a) + I(v;a)), each pair with its own network and permutation.
/// Networks and permutations are ordered (t,v), (t,a), (v,a).
PairwiseLoss mine_loss(std::span<const BoundStatisticNet, 3> nets, Var f_t, Var f_v, Var f_a,
                       std::span<const std::vector<std::size_t>, 3> permutations);

/// log q(y_i | x_i) for each row; shape [N].
Var q_log_likelihood(const BoundVariationalNet& q, Var x, Var y);
/// Matrix L with L[j, i] = log q(y_j | x_i); shape [N x N].
Var q_cross_log_likelihood(const BoundVariationalNet& q, Var x, Var y);

/// (1/N^2) sum_i sum_j [log q(y_i|x_i) - log q(y_j|x_i)], evaluated over all N^2 pairs.
TapedEstimate vclub_estimate(const BoundVariationalNet& q, Var x, Var y);

struct QFitReport {
  double log_likelihood = 0.0;  // batch mean before the step
  double gradient_norm = 0.0;
};

/// One Adam ascent step on mean log q(y_i | x_i); touches only `net.params`.
QFitReport q_fit_step(VariationalNet& net, const Tensor& x, const Tensor& y, AdamState& state,
                      const AdamHyper& hyper);

/// Sum of vCLUB(h_m, f_m) over the three modalities. The q-networks must be
/// bound as constants so the loss never trains them.
PairwiseLoss msi_loss(std::span<const BoundVariationalNet, 3> q_nets, std::span<const Var, 3> inputs,
                      std::span<const Var, 3> features);

}  // namespace mmmie
