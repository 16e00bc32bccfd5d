#pragma once

#include <cstddef>
#include <vector>

#include "detangle/tensor.hpp"

namespace detangle {

// Adam with bias correction, beta1=0.9, beta2=0.999, eps=1e-8.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Clamp every gradient entry into [-limit, limit].
void clip_gradients(std::vector<Tensor*>& grads, double limit = 5.0);

// One update over aligned (params, grads). Initializes moments on first call.
// Throws on non-finite gradient entries so training can abort with a
// diagnostic instead of corrupting the parameters.
void adam_step(std::vector<Tensor*>& params, const std::vector<Tensor*>& grads,
               AdamState& state, double lr);

}  // namespace detangle
