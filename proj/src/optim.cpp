#include "mmmie/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace mmmie {

void adam_step(ParamSet& params, const Gradients& grads, AdamState& state, const AdamHyper& hyper) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(params.size()) + " parameters");
  }
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw std::invalid_argument("adam_step: gradient for unknown parameter " + name);
    if (params.get(name).shape() != g.shape()) {
      throw ShapeError("adam_step: gradient shape mismatch for " + name);
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (const auto& [name, g] : grads) {
    auto [mit, m_new] = state.m.try_emplace(name, Tensor(g.shape()));
    auto [vit, v_new] = state.v.try_emplace(name, Tensor(g.shape()));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    std::span<double> w = params.values(name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
  }
}

double gradient_norm(const Gradients& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace mmmie
