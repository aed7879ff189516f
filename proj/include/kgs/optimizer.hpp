#pragma once

#include "kgs/common.hpp"

#include <cstdint>

namespace kgs {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;

  void validate() const;
};

/// First and second moments for one parameter block.
struct AdamMoments {
  VecX m;
  VecX v;

  static AdamMoments zeros(Eigen::Index n) { return {VecX::Zero(n), VecX::Zero(n)}; }
};

/// One Adam update with per-component learning rates; `step` counts from 1.
void adam_update(const AdamConfig& cfg, std::int64_t step, Eigen::Ref<VecX> params, const Eigen::Ref<const VecX>& grad,
                 const Eigen::Ref<const VecX>& lr, Eigen::Ref<VecX> m, Eigen::Ref<VecX> v);

/// Log-linear interpolation from `init` to `final` over `max_steps`.
double exponential_lr(double init, double final, std::int64_t step, std::int64_t max_steps);

}  // namespace kgs
