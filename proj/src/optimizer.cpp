#include "splatshard/optimizer.hpp"

#include "splatshard/errors.hpp"

#include <algorithm>
#include <cmath>

namespace splatshard {

void AdamState::remap(const IdRemap& r) {
  m = apply_remap(m, r);
  v = apply_remap(v, r);
}

ParamVector learning_rates(const AdamConfig& cfg, std::int64_t step, double scene_extent) {
  ParamVector lr;
  const double t = cfg.position_lr_max_steps > 0
                       ? std::clamp(double(step) / double(cfg.position_lr_max_steps), 0.0, 1.0)
                       : 1.0;
  const double pos = std::exp((1 - t) * std::log(cfg.position_lr_init) +
                              t * std::log(cfg.position_lr_final));
  lr.segment<3>(param::kPosition).setConstant(pos * scene_extent);
  lr.segment<4>(param::kRotation).setConstant(cfg.rotation_lr);
  lr.segment<3>(param::kLogScale).setConstant(cfg.scale_lr);
  lr[param::kOpacity] = cfg.opacity_lr;
  lr.segment<3>(param::kSh).setConstant(cfg.sh_dc_lr);
  lr.tail(kParamCount - param::kSh - 3).setConstant(cfg.sh_rest_lr);
  return lr;
}

void adam_update(GaussianModel& model, AdamState& state, std::span<const std::int64_t> ids,
                 std::span<const ParamVector> grads, const ParamVector& lr, const AdamConfig& cfg) {
  require(state.size() == model.size() && grads.size() == model.size(),
          "adam_update: state or gradients do not match the model");
  require(state.step >= 1, "adam_update: begin_step was not called");
  const double bc1 = 1 - std::pow(cfg.beta1, double(state.step));
  const double bc2 = 1 - std::pow(cfg.beta2, double(state.step));
  const double sqrt_bc2 = std::sqrt(bc2);
  for (std::int64_t id : ids) {
    const auto i = std::size_t(id);
    ParamVector& m = state.m[i];
    ParamVector& v = state.v[i];
    const ParamVector& g = grads[i];
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g.cwiseProduct(g);
    const ParamVector denom = (v.cwiseSqrt() / sqrt_bc2).array() + cfg.eps;
    model[i].params -= (lr / bc1).cwiseProduct(m).cwiseQuotient(denom);
    auto q = model[i].rotation();
    const double norm = q.norm();
    if (norm > 0) q /= norm;
  }
}

}  // namespace splatshard
