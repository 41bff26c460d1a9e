#include "uspg/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace uspg {

AdamState AdamState::for_params(const std::vector<Tensor*>& params) {
  AdamState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const Tensor* p : params) {
    s.m.emplace_back(p->shape());
    s.v.emplace_back(p->shape());
  }
  return s;
}

void adam_step(AdamState& state, const std::vector<Tensor*>& params,
               const std::vector<const Tensor*>& grads, const AdamConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: group size mismatch");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double lr_t =
      cfg.lr * std::sqrt(1.0 - std::pow(cfg.beta2, t)) / (1.0 - std::pow(cfg.beta1, t));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    if (p.shape() != g.shape())
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (int j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      p[j] -= lr_t * m[j] / (std::sqrt(v[j]) + cfg.eps);
    }
  }
}

}  // namespace uspg
