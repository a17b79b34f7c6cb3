#pragma once

#include <cstdint>
#include <vector>

#include "mmmie/data.hpp"
#include "mmmie/estimators.hpp"

namespace mmmie {

struct MiBenchOptions {
  std::size_t steps = 2000;
  std::size_t batch_size = 256;
  std::vector<std::size_t> hidden{64, 64};
  double learning_rate = 1e-3;
  /// Fresh batches used to evaluate the trained estimators.
  std::size_t eval_batches = 20;
  std::size_t eval_batch_size = 512;
  std::uint64_t seed = 100;
};

struct MiBenchRow {
  double rho = 0.0;
  std::size_t dim = 1;
  double analytic_mi = 0.0;
  /// Means over the evaluation batches.
  double dv_estimate = 0.0;
  double vclub_estimate = 0.0;
  /// Sample standard deviations over the evaluation batches.
  double dv_std = 0.0;
  double vclub_std = 0.0;

  double dv_err() const { return dv_estimate - analytic_mi; }
  double vclub_err() const { return vclub_estimate - analytic_mi; }
  /// 3 x the estimate's spread over evaluation batches.
  double dv_eps_stat() const { return 3.0 * dv_std; }
  double vclub_eps_stat() const { return 3.0 * vclub_std; }
};

/// Trains a statistic network (DV) and a variational network (vCLUB, likelihood
/// fitting only) on fresh Gaussian batches, then evaluates both on held-out batches.
MiBenchRow run_mi_bench(const GaussianPairSpec& spec, const MiBenchOptions& options);

struct MiBenchVerdict {
  bool dv_ok = false;
  bool vclub_ok = false;
  /// vCLUB >= DV - 2 eps_stat.
  bool ordering_ok = false;
  bool passed() const { return dv_ok && vclub_ok && ordering_ok; }
};

/// DV must lie within `tolerance` of the analytic value; vCLUB is an upper
/// bound, so only vclub >= analytic - tolerance is required of it.
MiBenchVerdict judge_mi_bench(const MiBenchRow& row, double tolerance);

}  // namespace mmmie
