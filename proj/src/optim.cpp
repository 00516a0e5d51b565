#include "latsg/optim.hpp"

#include <cmath>

namespace latsg {

AdamW::AdamW(ParamStore& params, Options opt) : params_(params), opt_(opt) {
  state_.resize(params.items().size());
  for (std::size_t i = 0; i < state_.size(); ++i) {
    std::size_t n = params.items()[i].second.size();
    state_[i].m.assign(n, 0.0);
    state_[i].v.assign(n, 0.0);
  }
}

void AdamW::step() {
  bool any = false;
  for (std::size_t i = 0; i < params_.items().size(); ++i) {
    Tensor p = params_.items()[i].second;
    if (p.grad().empty()) continue;
    any = true;
    SlotState& s = state_[i];
    s.t += 1;
    double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(s.t));
    double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(s.t));
    auto& w = p.values();
    const auto& g = p.grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      s.m[j] = opt_.beta1 * s.m[j] + (1.0 - opt_.beta1) * g[j];
      s.v[j] = opt_.beta2 * s.v[j] + (1.0 - opt_.beta2) * g[j] * g[j];
      double mhat = s.m[j] / bc1;
      double vhat = s.v[j] / bc2;
      w[j] -= opt_.lr * opt_.weight_decay * w[j];
      w[j] -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
    }
  }
  if (!any) throw UsageError("adamw step: no parameter has gradients; run backward first");
}

void AdamW::zero_grad() { params_.zero_grads(); }

}  // namespace latsg
