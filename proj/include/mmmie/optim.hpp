#pragma once

#include <cstdint>

#include "mmmie/params.hpp"

namespace mmmie {

struct AdamHyper {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates per parameter plus the shared step count.
struct AdamState {
  std::uint64_t step = 0;
  Gradients m;
  Gradients v;
};

/// Bias-corrected Adam update. `grads` must name exactly the entries of `params`.
void adam_step(ParamSet& params, const Gradients& grads, AdamState& state, const AdamHyper& hyper);

/// Euclidean norm over all gradient entries.
double gradient_norm(const Gradients& grads);

}  // namespace mmmie
