#pragma once

#include "kgs/trainer.hpp"

#include <Eigen/Eigenvalues>

#include <fstream>
#include <functional>
#include <random>
#include <string>

namespace kgs::test {

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline double normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline Vec3 random_unit(Rng& rng) {
  Vec3 v(normal(rng), normal(rng), normal(rng));
  while (v.norm() < 1e-12) {
    v = Vec3(normal(rng), normal(rng), normal(rng));
  }
  return v.normalized();
}

inline Vec4 random_quaternion(Rng& rng) {
  Vec4 q(normal(rng), normal(rng), normal(rng), normal(rng));
  return q.normalized();
}

inline void fill_uniform(MatX& m, Rng& rng, double scale) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = uniform(rng, -scale, scale);
  }
}

inline void fill_uniform(VecX& v, Rng& rng, double scale) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v[i] = uniform(rng, -scale, scale);
  }
}

inline Image random_image(int w, int h, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Image img(w, h);
  for (double& x : img.data) {
    x = uniform(rng, lo, hi);
  }
  return img;
}

inline Camera pinhole(int w, int h, double f) {
  Camera c;
  c.width = w;
  c.height = h;
  c.fx = f;
  c.fy = f;
  c.cx = 0.5 * w;
  c.cy = 0.5 * h;
  return c;
}

/// Small fully dynamic-capable scene for derivative checks: wide, faint
/// primitives so every splat stays above the alpha cutoff on the whole image.
struct GradScene {
  Model model;
  RunConfig cfg;
  RenderSettings settings;
  Camera camera;
  Image target;
  double t = 0.37;
  double sigma = 0.05;
  std::uint64_t noise_seed = 99;
};

inline GradScene make_grad_scene(std::uint64_t seed, int count = 20, int dynamic = 10) {
  Rng rng(seed);
  GradScene s;
  s.camera = pinhole(8, 8, 10.0);
  s.cfg.field.time_bands = 2;
  s.cfg.field.position_bands = 2;
  s.cfg.field.feature_dim = 4;
  s.cfg.field.hidden = 8;
  s.cfg.field.neighbors = 3;
  s.cfg.field.max_dx = 10.0;
  s.cfg.render.lod.max_level = 2;
  s.cfg.render.lod.lambda = 0.05;
  s.cfg.loss.reg = 0.1;
  s.cfg.loss.ani = 0.01;
  s.cfg.render.background = Vec3(0.1, 0.2, 0.3);
  s.settings = make_render_settings(s.cfg, 0.1);

  s.model.field = FieldParams::create(s.cfg.field, 2.0, rng);
  fill_uniform(s.model.field.deform.w2, rng, 0.3);
  fill_uniform(s.model.field.deform.b2, rng, 0.02);
  fill_uniform(s.model.field.fine.w2, rng, 0.3);
  fill_uniform(s.model.field.fine.b2, rng, 0.02);

  std::vector<double> scores(count, 0.0);
  for (int i = 0; i < count; ++i) {
    Gaussian g;
    g.position = Vec3(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3), uniform(rng, 2.5, 3.5));
    g.rotation = random_quaternion(rng) * uniform(rng, 0.8, 1.2);
    g.level = 1 + i % 2;
    const double floor = min_scale(g.level, s.settings.lod);
    for (int c = 0; c < 3; ++c) {
      g.log_scale_opt[c] = std::log(uniform(rng, 0.9, 1.6) - floor);
      g.color[c] = uniform(rng, 0.1, 0.9);
    }
    g.opacity_logit = logit(uniform(rng, 0.1, 0.3));
    g.feature = VecX(s.cfg.field.feature_dim);
    for (Eigen::Index k = 0; k < g.feature.size(); ++k) {
      g.feature[k] = normal(rng);
    }
    s.model.gaussians.push_back(g);
    scores[i] = i < dynamic ? 1.0 : 0.0;
  }
  s.model.partition = classify(scores, 0.5);
  s.model.refresh_neighbors(s.cfg.field.neighbors);
  s.target = random_image(8, 8, rng);
  return s;
}

inline LossRecord grad_scene_loss(const GradScene& s, const Model& m, ModelGrad* grad,
                                  RenderMode mode = RenderMode::train) {
  Rng noise(s.noise_seed);
  RenderRequest req{s.camera, s.t, mode, s.sigma, &noise};
  return loss_and_gradient(m, s.cfg, s.settings, req, s.target, grad);
}

/// Analytic and central-difference gradients for one parameter class.
struct ClassCheck {
  std::string name;
  VecX analytic;
  VecX numeric;
  double relative_error() const {
    const double scale = std::max(analytic.norm(), numeric.norm());
    return scale > 0.0 ? (analytic - numeric).norm() / scale : 0.0;
  }
};

/// Every optimized parameter class of a GradScene checked against central differences.
inline std::vector<ClassCheck> check_gradients(const GradScene& s, double step = 1e-4, double rotation_step = 1e-5,
                                               RenderMode mode = RenderMode::train) {
  ModelGrad grad;
  grad_scene_loss(s, s.model, &grad, mode);
  const std::size_t n = s.model.size();
  Model m = s.model;
  auto central = [&](double& x, double h) {
    const double x0 = x;
    x = x0 + h;
    const double up = grad_scene_loss(s, m, nullptr, mode).total;
    x = x0 - h;
    const double down = grad_scene_loss(s, m, nullptr, mode).total;
    x = x0;
    return (up - down) / (2.0 * h);
  };
  auto per_gaussian = [&](const std::string& name, int dims, double h, auto&& param, auto&& analytic) {
    ClassCheck c{name, VecX(n * dims), VecX(n * dims)};
    for (std::size_t i = 0; i < n; ++i) {
      for (int d = 0; d < dims; ++d) {
        c.analytic[i * dims + d] = analytic(grad.gaussians[i], d);
        c.numeric[i * dims + d] = central(param(m.gaussians[i], d), h);
      }
    }
    return c;
  };
  std::vector<ClassCheck> out;
  out.push_back(per_gaussian(
      "position", 3, step, [](Gaussian& g, int d) -> double& { return g.position[d]; },
      [](const GaussianGrad& g, int d) { return g.d_position[d]; }));
  out.push_back(per_gaussian(
      "rotation", 4, rotation_step, [](Gaussian& g, int d) -> double& { return g.rotation[d]; },
      [](const GaussianGrad& g, int d) { return g.d_rotation[d]; }));
  out.push_back(per_gaussian(
      "scale", 3, step, [](Gaussian& g, int d) -> double& { return g.log_scale_opt[d]; },
      [](const GaussianGrad& g, int d) { return g.d_log_scale_opt[d]; }));
  out.push_back(per_gaussian(
      "opacity", 1, step, [](Gaussian& g, int) -> double& { return g.opacity_logit; },
      [](const GaussianGrad& g, int) { return g.d_opacity_logit; }));
  out.push_back(per_gaussian(
      "color", 3, step, [](Gaussian& g, int d) -> double& { return g.color[d]; },
      [](const GaussianGrad& g, int d) { return g.d_color[d]; }));
  const int fd = s.cfg.field.feature_dim;
  out.push_back(per_gaussian(
      "feature", fd, step, [](Gaussian& g, int d) -> double& { return g.feature[d]; },
      [](const GaussianGrad& g, int d) { return g.d_feature.size() > d ? g.d_feature[d] : 0.0; }));
  auto mlp_check = [&](const std::string& name, Mlp& target, const Mlp& g) {
    ClassCheck c{name, g.flatten(), VecX(static_cast<Eigen::Index>(target.parameter_count()))};
    VecX flat = target.flatten();
    for (Eigen::Index k = 0; k < flat.size(); ++k) {
      const double x0 = flat[k];
      flat[k] = x0 + step;
      target.assign(flat);
      const double up = grad_scene_loss(s, m, nullptr, mode).total;
      flat[k] = x0 - step;
      target.assign(flat);
      const double down = grad_scene_loss(s, m, nullptr, mode).total;
      flat[k] = x0;
      target.assign(flat);
      c.numeric[k] = (up - down) / (2.0 * step);
    }
    return c;
  };
  out.push_back(mlp_check("deform_mlp", m.field.deform, grad.d_deform));
  out.push_back(mlp_check("fine_mlp", m.field.fine, grad.d_fine));
  return out;
}

/// Unique scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  std::random_device rd;
  const auto dir = std::filesystem::temp_directory_path() / ("kgs_" + tag + "_" + std::to_string(rd()));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace kgs::test
