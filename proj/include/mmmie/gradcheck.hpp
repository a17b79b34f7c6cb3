#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmmie/params.hpp"

namespace mmmie {

/// Builds a scalar loss on `tape` from leaf variables holding the inputs.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> inputs)>;

struct FiniteDifferenceOptions {
  double step = 1e-5;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-4;
  /// Multiplies the analytic gradient before comparison (negative-control hook).
  double analytic_scale = 1.0;
};

/// Worst relative error between backward() and central differences over every input element.
double finite_difference_error(const LossBuilder& build, std::span<const Tensor> inputs,
                               const FiniteDifferenceOptions& options = {});

/// Builds a scalar loss from bound parameters plus extra inputs.
using ParamLossBuilder = std::function<Var(Tape& tape, const BoundParams& params, std::span<const Var> inputs)>;

/// finite_difference_error over every parameter entry and every extra input.
double param_finite_difference_error(const ParamSet& params, std::span<const Tensor> inputs,
                                     const ParamLossBuilder& build, const FiniteDifferenceOptions& options = {});

struct GradcheckEntry {
  std::string block;
  double worst_relative_error = 0.0;
  bool passed = false;
};

struct GradcheckOptions {
  std::uint64_t seed = 100;
  double tolerance = 1e-4;
  /// Block whose analytic gradient is deliberately perturbed; used to prove the check can fail.
  std::optional<std::string> corrupt_block;
};

/// Names of every block the suite covers, in report order.
std::vector<std::string> gradcheck_blocks();

/// Runs the finite-difference check over every primitive op, every neural block,
/// both estimators, the task loss, and the assembled model.
std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& options);

}  // namespace mmmie
