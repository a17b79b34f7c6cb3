#include <algorithm>
#include <cmath>

#include "mmmie/gradcheck.hpp"

namespace mmmie {
namespace {

double evaluate(const LossBuilder& build, std::span<const Tensor> inputs) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(tape.constant(t));
  return build(tape, leaves).value().item();
}

}  // namespace

double finite_difference_error(const LossBuilder& build, std::span<const Tensor> inputs,
                               const FiniteDifferenceOptions& options) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.variable(t));
    Var loss = build(tape, leaves);
    tape.backward(loss);
    for (const Var& v : leaves) analytic.push_back(tape.has_grad(v) ? tape.grad(v) : Tensor(v.shape()));
  }
  std::vector<Tensor> probe(inputs.begin(), inputs.end());
  double worst = 0.0;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double original = probe[k][i];
      probe[k][i] = original + options.step;
      const double up = evaluate(build, probe);
      probe[k][i] = original - options.step;
      const double down = evaluate(build, probe);
      probe[k][i] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k][i] * options.analytic_scale;
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

double param_finite_difference_error(const ParamSet& params, std::span<const Tensor> inputs,
                                     const ParamLossBuilder& build, const FiniteDifferenceOptions& options) {
  const std::vector<std::string> names = params.names();
  std::vector<Tensor> all;
  for (const auto& n : names) all.push_back(params.get(n));
  all.insert(all.end(), inputs.begin(), inputs.end());
  LossBuilder flat = [&](Tape& tape, std::span<const Var> leaves) {
    std::map<std::string, Var, std::less<>> vars;
    for (std::size_t i = 0; i < names.size(); ++i) vars.emplace(names[i], leaves[i]);
    BoundParams bound(tape, std::move(vars), true);
    return build(tape, bound, leaves.subspan(names.size()));
  };
  return finite_difference_error(flat, all, options);
}

}  // namespace mmmie
