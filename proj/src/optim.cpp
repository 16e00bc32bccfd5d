#include "detangle/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace detangle {

void clip_gradients(std::vector<Tensor*>& grads, double limit) {
  for (Tensor* g : grads)
    for (double& x : g->data) x = std::clamp(x, -limit, limit);
}

void adam_step(std::vector<Tensor*>& params, const std::vector<Tensor*>& grads,
               AdamState& state, double lr) {
  if (params.size() != grads.size())
    throw std::runtime_error("adam: params/grads size mismatch");
  if (state.m.empty()) {
    for (Tensor* p : params) {
      state.m.emplace_back(p->shape);
      state.v.emplace_back(p->shape);
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->same_shape(*grads[k]) || !params[k]->same_shape(state.m[k]))
      throw std::runtime_error("adam: shape mismatch at parameter " + std::to_string(k));
    for (double g : grads[k]->data)
      if (!std::isfinite(g)) throw std::runtime_error("adam: non-finite gradient entry");
  }
  state.step += 1;
  double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = *grads[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      double mhat = m[i] / c1;
      double vhat = v[i] / c2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace detangle
