#include "kgs/optimizer.hpp"

#include <algorithm>

namespace kgs {

void AdamConfig::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
    throw InvalidInput("adam: need 0 <= beta < 1 and eps > 0");
  }
}

void adam_update(const AdamConfig& cfg, std::int64_t step, Eigen::Ref<VecX> params, const Eigen::Ref<const VecX>& grad,
                 const Eigen::Ref<const VecX>& lr, Eigen::Ref<VecX> m, Eigen::Ref<VecX> v) {
  if (step < 1) {
    throw InvalidInput("adam_update: step counts from 1");
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    params[i] -= lr[i] * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

double exponential_lr(double init, double final, std::int64_t step, std::int64_t max_steps) {
  if (init <= 0.0 || final <= 0.0) {
    return 0.0;
  }
  const double f = max_steps > 0 ? std::clamp(static_cast<double>(step) / max_steps, 0.0, 1.0) : 1.0;
  return std::exp(std::log(init) * (1.0 - f) + std::log(final) * f);
}

}  // namespace kgs
