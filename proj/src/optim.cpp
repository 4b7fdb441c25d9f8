#include <cmath>

#include "codebias/errors.hpp"
#include "codebias/model.hpp"

namespace codebias {

AdamState make_adam_state(const ModelParams& params) {
  AdamState s;
  s.m = zeros_like(params);
  s.v = zeros_like(params);
  return s;
}

void adam_step(ModelParams& params, const Grads& grads, AdamState& state, const AdamHyper& hyper) {
  if (!all_finite(grads)) throw NonFinite("non-finite gradient passed to the optimizer");
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  for (std::size_t t = 0; t < kNumTensors; ++t) {
    auto& pd = p[t]->data;
    const auto& gd = g[t]->data;
    auto& md = m[t]->data;
    auto& vd = v[t]->data;
    for (std::size_t i = 0; i < pd.size(); ++i) {
      const double gi = gd[i];
      md[i] = hyper.beta1 * md[i] + (1.0 - hyper.beta1) * gi;
      vd[i] = hyper.beta2 * vd[i] + (1.0 - hyper.beta2) * gi * gi;
      pd[i] -= hyper.lr * (md[i] / c1) / (std::sqrt(vd[i] / c2) + hyper.eps);
    }
  }
}

}  // namespace codebias
