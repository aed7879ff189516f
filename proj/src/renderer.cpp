#include "kgs/renderer.hpp"

#include "kgs/parallel.hpp"

#include <string>

namespace kgs {

namespace {

Mat3 build_covariance(const Mat3& r, const Vec3& s) {
  const Vec3 s2 = s.cwiseProduct(s);
  return r * s2.asDiagonal() * r.transpose();
}

/// Pulls dL/dSigma for Sigma = R diag(s^2) R^T back to R and s.
void covariance_backward(const Mat3& r, const Vec3& s, const Mat3& d_cov, Mat3& d_r, Vec3& d_s) {
  const Mat3 g = 0.5 * (d_cov + d_cov.transpose());
  const Vec3 s2 = s.cwiseProduct(s);
  d_r += 2.0 * g * r * s2.asDiagonal();
  d_s += 2.0 * s.cwiseProduct((r.transpose() * g * r).diagonal());
}

template <typename Fn>
void for_each_primitive(std::size_t n, int threads, Fn&& fn) {
  parallel_for(n, threads, [&](std::size_t i) {
    try {
      fn(i);
    } catch (const NumericalError& e) {
      throw NumericalError("gaussian " + std::to_string(i) + ": " + e.what());
    }
  });
}

std::span<const double> noise_column(const MatX& noise, std::size_t i) {
  if (noise.size() == 0) {
    return {};
  }
  const Eigen::Index c = noise.cols() == 1 ? 0 : static_cast<Eigen::Index>(i);
  return {noise.data() + c * noise.rows(), static_cast<std::size_t>(noise.rows())};
}

}  // namespace

void Model::validate() const {
  const std::size_t n = gaussians.size();
  if (partition.size() != n) {
    throw InvalidInput("model: partition covers " + std::to_string(partition.size()) + " primitives, scene has " +
                       std::to_string(n));
  }
  if (neighbors.size() != n) {
    throw InvalidInput("model: neighbor table size mismatch");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (gaussians[i].feature.size() != field.feature_dim) {
      throw InvalidInput("model: feature dimension mismatch at primitive " + std::to_string(i));
    }
    for (std::uint32_t j : neighbors[i]) {
      if (j >= n || !partition.is_dynamic(j) || !partition.is_dynamic(i)) {
        throw InvalidInput("model: neighbor list of primitive " + std::to_string(i) + " is stale");
      }
    }
  }
  if (field.deform.input_dim() != field.deform_input_dim() || field.fine.input_dim() != field.fine_input_dim() ||
      field.deform.output_dim() != 9 || field.fine.output_dim() != 9) {
    throw InvalidInput("model: field dimensions are inconsistent");
  }
}

void Model::refresh_neighbors(int k) {
  std::vector<Vec3> pos;
  pos.reserve(gaussians.size());
  for (const Gaussian& g : gaussians) {
    pos.push_back(g.position);
  }
  neighbors = build_neighbor_table(pos, partition.dynamic_indices, static_cast<std::size_t>(std::max(k, 0)));
}

std::vector<Vec3> effective_scales(const Model& model, const LodConfig& lod) {
  std::vector<Vec3> out;
  out.reserve(model.size());
  for (const Gaussian& g : model.gaussians) {
    out.push_back(effective_scale(g.log_scale_opt, g.level, lod));
  }
  return out;
}

RenderedFrame render(const Model& model, const RenderSettings& settings, const RenderRequest& request,
                     RenderTape* tape_out) {
  model.validate();
  request.camera.validate();
  const std::size_t n = model.size();
  if (n == 0) {
    throw InvalidInput("render: empty scene");
  }
  if (!(settings.frame_interval > 0.0)) {
    throw InvalidInput("render: frame interval must be positive");
  }
  RenderTape local;
  RenderTape& tp = tape_out != nullptr ? *tape_out : local;
  tp = RenderTape{};
  tp.t = request.t;
  tp.mode = request.mode;
  tp.camera = request.camera;
  const FieldParams& fp = model.field;
  const double dt = settings.frame_interval;

  const double sigma = request.mode == RenderMode::train ? request.noise_sigma : 0.0;
  if (sigma > 0.0) {
    if (request.rng == nullptr) {
      throw InvalidInput("render: noise requested without a random generator");
    }
    const Eigen::Index cols = settings.per_gaussian_noise ? static_cast<Eigen::Index>(n) : 1;
    tp.noise.resize(2 * fp.time_bands, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
      for (Eigen::Index r = 0; r < tp.noise.rows(); ++r) {
        std::normal_distribution<double> normal(0.0, sigma);
        tp.noise(r, c) = normal(*request.rng);
      }
    }
  }

  tp.effective_scale = effective_scales(model, settings.lod);
  tp.dynamic_column.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (model.partition.is_dynamic(i)) {
      tp.dynamic_column[i] = static_cast<std::int64_t>(tp.dynamic.size());
      tp.dynamic.push_back(i);
    }
  }
  const std::size_t n_dyn = tp.dynamic.size();

  std::vector<double> times{request.t};
  if (settings.kinematic_refinement && n_dyn > 0 && settings.velocity_mode == VelocityMode::displacement) {
    times.push_back(request.t - 0.5 * dt);
    times.push_back(request.t + 0.5 * dt);
  }

  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) {
    all[i] = i;
  }
  tp.slots.resize(times.size());
  for (std::size_t s = 0; s < times.size(); ++s) {
    SlotTape& slot = tp.slots[s];
    slot.time = times[s];
    slot.members = s == 0 ? all : tp.dynamic;
    const std::size_t m = slot.members.size();
    slot.deform_input.resize(fp.deform_input_dim(), static_cast<Eigen::Index>(m));
    parallel_for(m, settings.threads, [&](std::size_t j) {
      const std::size_t i = slot.members[j];
      const Gaussian& g = model.gaussians[i];
      slot.deform_input.col(static_cast<Eigen::Index>(j)) =
          deform_input(fp, g.position, g.rotation, tp.effective_scale[i].array().log().matrix(), slot.time,
                       noise_column(tp.noise, i));
    });
    slot.raw = fp.deform.forward_batch(slot.deform_input, &slot.deform_hidden);
    for (Eigen::Index j = 0; j < slot.raw.cols(); ++j) {
      if (!slot.raw.col(j).allFinite()) {
        throw NumericalError("gaussian " + std::to_string(slot.members[static_cast<std::size_t>(j)]) +
                             ": non-finite output from deformation predictor");
      }
    }
    if (n_dyn == 0) {
      continue;
    }
    slot.fine_input.resize(fp.fine_input_dim(), static_cast<Eigen::Index>(n_dyn));
    for (std::size_t d = 0; d < n_dyn; ++d) {
      slot.fine_input.col(static_cast<Eigen::Index>(d)) =
          fine_input(fp, model.gaussians[tp.dynamic[d]].feature, slot.time);
    }
    const MatX fine = fp.fine.forward_batch(slot.fine_input, &slot.fine_hidden);
    for (Eigen::Index d = 0; d < fine.cols(); ++d) {
      if (!fine.col(d).allFinite()) {
        throw NumericalError("gaussian " + std::to_string(tp.dynamic[static_cast<std::size_t>(d)]) +
                             ": non-finite output from fine residual predictor");
      }
    }
    slot.composed = fine;
    slot.clamped.resize(9, static_cast<Eigen::Index>(n_dyn));
    auto raw_col = [&](std::size_t i) {
      return static_cast<Eigen::Index>(s == 0 ? i : static_cast<std::size_t>(tp.dynamic_column[i]));
    };
    for (std::size_t d = 0; d < n_dyn; ++d) {
      const std::size_t i = tp.dynamic[d];
      const auto& nb = model.neighbors[i];
      const auto col = static_cast<Eigen::Index>(d);
      if (settings.coarse_to_fine && !nb.empty()) {
        VecX mean = VecX::Zero(9);
        for (std::uint32_t j : nb) {
          mean += slot.raw.col(raw_col(j));
        }
        slot.composed.col(col) += mean / static_cast<double>(nb.size());
      } else {
        slot.composed.col(col) += slot.raw.col(raw_col(i));
      }
      const DeformationOffsets pre = DeformationOffsets::unpack(slot.composed.col(col));
      slot.clamped.col(col) = clamp_offsets(fp, pre).pack();
    }
  }

  tp.raw_dx.resize(n);
  tp.dx.assign(n, Vec3::Zero());
  for (std::size_t i = 0; i < n; ++i) {
    tp.raw_dx[i] = tp.slots[0].raw.col(static_cast<Eigen::Index>(i)).head<3>();
  }

  tp.prims.resize(n);
  std::vector<std::optional<Projection>> projections(n);
  for_each_primitive(n, settings.threads, [&](std::size_t i) {
    const Gaussian& g = model.gaussians[i];
    PrimitiveTape& p = tp.prims[i];
    p.unit_rotation = g.rotation.normalized();
    p.r0 = quat_to_matrix(p.unit_rotation);
    const std::int64_t d = tp.dynamic_column[i];
    if (d >= 0) {
      p.dynamic = true;
      const DeformationOffsets off =
          DeformationOffsets::unpack(tp.slots[0].clamped.col(static_cast<Eigen::Index>(d)));
      tp.dx[i] = off.dx;
      p.exp_dr = exp_map_so3(off.dr);
      p.r_pred = p.r0 * p.exp_dr;
      p.s_pred = tp.effective_scale[i].cwiseProduct(off.ds.array().exp().matrix());
      p.mean = g.position + off.dx;
      const Mat3 cov_pred = build_covariance(p.r_pred, p.s_pred);
      p.cov = cov_pred;
      if (settings.kinematic_refinement) {
        if (tp.slots.size() == 3) {
          const Vec3 minus = tp.slots[1].clamped.col(static_cast<Eigen::Index>(d)).head<3>();
          const Vec3 plus = tp.slots[2].clamped.col(static_cast<Eigen::Index>(d)).head<3>();
          p.velocity = (plus - minus) / dt;
        } else {
          p.velocity = off.dx / dt;
        }
        if (p.velocity.norm() >= kVelocityFloor) {
          p.refine_in.cov = Covariance3::from_matrix(cov_pred);
          p.refine_in.velocity = p.velocity;
          p.refine_in.dt = dt;
          p.refine_in.ds = off.ds;
          p.refine_in.dr = off.dr;
          p.refine_in.rz = p.r_pred.col(2);
          p.refine_in.kappa = settings.kappa;
          const RefinedShape shape = refine_covariance(p.refine_in, settings.refine, &p.refine);
          p.cov = shape.cov.matrix();
          p.opacity_scale = shape.opacity_scale;
          p.refined = true;
        }
      }
    } else {
      p.r_pred = p.r0;
      p.s_pred = tp.effective_scale[i];
      p.mean = g.position;
      p.cov = build_covariance(p.r0, p.s_pred);
    }
    if (!p.cov.allFinite() || !p.mean.allFinite()) {
      throw NumericalError("gaussian " + std::to_string(i) + ": non-finite covariance or mean");
    }
    projections[i] = project_gaussian(Covariance3::from_matrix(p.cov), p.mean, request.camera);
  });

  for (std::size_t i = 0; i < n; ++i) {
    if (!projections[i]) {
      continue;
    }
    PrimitiveTape& p = tp.prims[i];
    p.proj = *projections[i];
    const Gaussian& g = model.gaussians[i];
    Splat s;
    s.mean = p.proj.mean;
    s.conic = p.proj.cov.inverse();
    s.opacity = g.opacity() * p.opacity_scale;
    s.color = g.color;
    s.depth = p.proj.depth;
    if (!s.mean.allFinite() || !s.conic.allFinite() || !std::isfinite(s.opacity) || !s.color.allFinite()) {
      throw NumericalError("gaussian " + std::to_string(i) + ": non-finite splat");
    }
    p.splat = static_cast<std::int64_t>(tp.splats.size());
    tp.splats.push_back(s);
    tp.splat_owner.push_back(i);
  }

  RasterOutput raster = rasterize(tp.splats, request.camera.width, request.camera.height, settings.background,
                                  settings.threads, &tp.raster);
  for (std::size_t k = 0; k < raster.image.data.size(); ++k) {
    if (!std::isfinite(raster.image.data[k])) {
      throw NumericalError("non-finite pixel at offset " + std::to_string(k / 3));
    }
  }
  RenderedFrame frame;
  frame.image = std::move(raster.image);
  frame.transmittance = std::move(raster.transmittance);
  frame.importance.assign(n, 0.0);
  for (std::size_t k = 0; k < tp.splats.size(); ++k) {
    frame.importance[tp.splat_owner[k]] += raster.importance[k];
  }
  return frame;
}

ModelGrad ModelGrad::zeros(const Model& model) {
  ModelGrad g;
  g.gaussians.resize(model.size());
  for (GaussianGrad& gg : g.gaussians) {
    gg.d_feature = VecX::Zero(model.field.feature_dim);
  }
  g.d_deform = model.field.deform.zeros_like();
  g.d_fine = model.field.fine.zeros_like();
  g.screen_grad.assign(model.size(), 0.0);
  g.visible.assign(model.size(), 0);
  return g;
}

ModelGrad& ModelGrad::operator+=(const ModelGrad& o) {
  if (o.gaussians.size() != gaussians.size()) {
    throw InvalidInput("ModelGrad: size mismatch");
  }
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    GaussianGrad& a = gaussians[i];
    const GaussianGrad& b = o.gaussians[i];
    a.d_position += b.d_position;
    a.d_rotation += b.d_rotation;
    a.d_log_scale_opt += b.d_log_scale_opt;
    a.d_opacity_logit += b.d_opacity_logit;
    a.d_color += b.d_color;
    a.d_feature += b.d_feature;
  }
  d_deform += o.d_deform;
  d_fine += o.d_fine;
  return *this;
}

ModelGrad render_backward(const Model& model, const RenderSettings& settings, const RenderTape& tp,
                          const RenderUpstream& up) {
  const std::size_t n = model.size();
  if (tp.prims.size() != n || tp.effective_scale.size() != n) {
    throw InvalidInput("render_backward: tape does not match the scene");
  }
  if (up.d_image.width != tp.raster.width || up.d_image.height != tp.raster.height) {
    throw InvalidInput("render_backward: image gradient shape mismatch");
  }
  auto check_size = [&](const std::vector<Vec3>& v, const char* what) {
    if (!v.empty() && v.size() != n) {
      throw InvalidInput(std::string("render_backward: ") + what + " size mismatch");
    }
  };
  check_size(up.d_raw_dx, "raw offset gradient");
  check_size(up.d_dx, "offset gradient");
  check_size(up.d_effective_scale, "scale gradient");

  const FieldParams& fp = model.field;
  const double dt = settings.frame_interval;
  const Camera& cam = tp.camera;
  ModelGrad g = ModelGrad::zeros(model);

  const std::vector<SplatGrad> sg = rasterize_backward(tp.splats, tp.raster, settings.background, up.d_image,
                                                       settings.threads);
  std::vector<Vec3> d_mean(n, Vec3::Zero());
  std::vector<Mat3> d_cov(n, Mat3::Zero());
  std::vector<double> d_opacity_scale(n, 0.0);
  for (std::size_t k = 0; k < tp.splats.size(); ++k) {
    const std::size_t i = tp.splat_owner[k];
    const PrimitiveTape& p = tp.prims[i];
    const Gaussian& gs = model.gaussians[i];
    const SplatGrad& s = sg[k];
    GaussianGrad& gg = g.gaussians[i];
    gg.d_color += s.d_color;
    const double op = gs.opacity();
    gg.d_opacity_logit += s.d_opacity * p.opacity_scale * op * (1.0 - op);
    d_opacity_scale[i] = s.d_opacity * op;
    const Mat2& conic = tp.splats[k].conic;
    const Mat2 d_cov2d = -conic * s.d_conic * conic;
    const ProjectionGrad pg = project_gaussian_backward(p.proj, p.cov, cam, s.d_mean, d_cov2d);
    d_mean[i] = pg.d_position;
    d_cov[i] = pg.d_cov;
    g.screen_grad[i] = Vec2(s.d_mean.x() * 0.5 * cam.width, s.d_mean.y() * 0.5 * cam.height).norm();
    g.visible[i] = 1;
  }

  const std::size_t n_dyn = tp.dynamic.size();
  std::vector<MatX> d_clamped(tp.slots.size(), MatX::Zero(9, static_cast<Eigen::Index>(n_dyn)));
  std::vector<Vec3> d_eff(n, Vec3::Zero());

  for_each_primitive(n, settings.threads, [&](std::size_t i) {
    const PrimitiveTape& p = tp.prims[i];
    const Gaussian& gs = model.gaussians[i];
    GaussianGrad& gg = g.gaussians[i];
    Mat3 d_r0 = Mat3::Zero();
    gg.d_position += d_mean[i];
    if (p.dynamic) {
      const auto d = static_cast<Eigen::Index>(tp.dynamic_column[i]);
      const DeformationOffsets off = DeformationOffsets::unpack(tp.slots[0].clamped.col(d));
      DeformationOffsets dd;
      Mat3 d_rpred = Mat3::Zero();
      Vec3 d_spred = Vec3::Zero();
      Mat3 d_cov_pred = d_cov[i];
      Vec3 d_velocity = Vec3::Zero();
      if (p.refined) {
        const RefineGrad rg =
            refine_covariance_backward(p.refine_in, settings.refine, p.refine, d_cov[i], d_opacity_scale[i]);
        d_cov_pred = rg.d_cov;
        d_rpred.col(2) += rg.d_rz;
        dd.ds += rg.d_ds;
        dd.dr += rg.d_dr;
        d_velocity = rg.d_velocity;
      }
      covariance_backward(p.r_pred, p.s_pred, d_cov_pred, d_rpred, d_spred);
      dd.dx += d_mean[i];
      if (!up.d_dx.empty()) {
        dd.dx += up.d_dx[i];
      }
      if (p.refined) {
        if (tp.slots.size() == 3) {
          d_clamped[2].col(d).head<3>() += d_velocity / dt;
          d_clamped[1].col(d).head<3>() -= d_velocity / dt;
        } else {
          dd.dx += d_velocity / dt;
        }
      }
      const Vec3 growth = off.ds.array().exp().matrix();
      d_eff[i] += d_spred.cwiseProduct(growth);
      dd.ds += d_spred.cwiseProduct(p.s_pred);
      d_r0 += d_rpred * p.exp_dr.transpose();
      dd.dr += exp_map_so3_backward(off.dr, p.r0.transpose() * d_rpred);
      d_clamped[0].col(d) += dd.pack();
    } else {
      Vec3 d_s = Vec3::Zero();
      covariance_backward(p.r0, p.s_pred, d_cov[i], d_r0, d_s);
      d_eff[i] += d_s;
    }
    gg.d_rotation += normalize_backward(gs.rotation, quat_to_matrix_backward(p.unit_rotation, d_r0));
  });

  for (std::size_t s = 0; s < tp.slots.size(); ++s) {
    const SlotTape& slot = tp.slots[s];
    MatX d_raw = MatX::Zero(9, static_cast<Eigen::Index>(slot.members.size()));
    if (s == 0 && !up.d_raw_dx.empty()) {
      for (std::size_t i = 0; i < n; ++i) {
        d_raw.col(static_cast<Eigen::Index>(i)).head<3>() += up.d_raw_dx[i];
      }
    }
    if (n_dyn > 0) {
      MatX d_composed(9, static_cast<Eigen::Index>(n_dyn));
      for (std::size_t d = 0; d < n_dyn; ++d) {
        const auto col = static_cast<Eigen::Index>(d);
        d_composed.col(col) =
            clamp_offsets_backward(fp, DeformationOffsets::unpack(slot.composed.col(col)),
                                   DeformationOffsets::unpack(d_clamped[s].col(col)))
                .pack();
      }
      MatX d_fine_in;
      fp.fine.backward_batch(slot.fine_input, slot.fine_hidden, d_composed, g.d_fine, &d_fine_in);
      auto raw_col = [&](std::size_t i) {
        return static_cast<Eigen::Index>(s == 0 ? i : static_cast<std::size_t>(tp.dynamic_column[i]));
      };
      for (std::size_t d = 0; d < n_dyn; ++d) {
        const std::size_t i = tp.dynamic[d];
        const auto col = static_cast<Eigen::Index>(d);
        g.gaussians[i].d_feature += d_fine_in.col(col).head(fp.feature_dim);
        const auto& nb = model.neighbors[i];
        if (settings.coarse_to_fine && !nb.empty()) {
          const VecX share = d_composed.col(col) / static_cast<double>(nb.size());
          for (std::uint32_t j : nb) {
            d_raw.col(raw_col(j)) += share;
          }
        } else {
          d_raw.col(raw_col(i)) += d_composed.col(col);
        }
      }
    }
    MatX d_in;
    fp.deform.backward_batch(slot.deform_input, slot.deform_hidden, d_raw, g.d_deform, &d_in);
    for (std::size_t j = 0; j < slot.members.size(); ++j) {
      const std::size_t i = slot.members[j];
      const Gaussian& gs = model.gaussians[i];
      const DeformInputGrad dig =
          deform_input_backward(fp, gs.position, gs.rotation, d_in.col(static_cast<Eigen::Index>(j)));
      GaussianGrad& gg = g.gaussians[i];
      gg.d_position += dig.d_position;
      gg.d_rotation += dig.d_rotation;
      d_eff[i] += dig.d_log_scale.cwiseQuotient(tp.effective_scale[i]);
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!up.d_effective_scale.empty()) {
      d_eff[i] += up.d_effective_scale[i];
    }
    g.gaussians[i].d_log_scale_opt = d_eff[i].cwiseProduct(model.gaussians[i].log_scale_opt.array().exp().matrix());
  }
  return g;
}

std::vector<std::vector<Vec3>> sample_offsets(const Model& model, const RenderSettings& settings,
                                              const std::vector<double>& times) {
  model.validate();
  const std::size_t n = model.size();
  const FieldParams& fp = model.field;
  const std::vector<Vec3> eff = effective_scales(model, settings.lod);
  std::vector<std::vector<Vec3>> out(n, std::vector<Vec3>(times.size()));
  MatX input(fp.deform_input_dim(), static_cast<Eigen::Index>(n));
  for (std::size_t s = 0; s < times.size(); ++s) {
    parallel_for(n, settings.threads, [&](std::size_t i) {
      const Gaussian& g = model.gaussians[i];
      input.col(static_cast<Eigen::Index>(i)) =
          deform_input(fp, g.position, g.rotation, eff[i].array().log().matrix(), times[s]);
    });
    const MatX raw = fp.deform.forward_batch(input);
    for (Eigen::Index i = 0; i < raw.cols(); ++i) {
      if (!raw.col(i).allFinite()) {
        throw NumericalError("gaussian " + std::to_string(i) + ": non-finite output from deformation predictor");
      }
    }
    parallel_for(n, settings.threads, [&](std::size_t i) {
      const auto col = static_cast<Eigen::Index>(i);
      if (!model.partition.is_dynamic(i)) {
        out[i][s] = raw.col(col).head<3>();
        return;
      }
      const auto& nb = model.neighbors[i];
      VecX composed = fp.fine.forward(fine_input(fp, model.gaussians[i].feature, times[s]));
      if (settings.coarse_to_fine && !nb.empty()) {
        VecX mean = VecX::Zero(9);
        for (std::uint32_t j : nb) {
          mean += raw.col(static_cast<Eigen::Index>(j));
        }
        composed += mean / static_cast<double>(nb.size());
      } else {
        composed += raw.col(col);
      }
      out[i][s] = clamp_offsets(fp, DeformationOffsets::unpack(composed)).dx;
    });
  }
  return out;
}

std::vector<double> decomposition_scores(const Model& model, const RenderSettings& settings, int samples) {
  if (samples < 2) {
    throw InvalidInput("decomposition_scores: need at least two samples");
  }
  return deformation_variance(sample_offsets(model, settings, stratified_times(samples)));
}

}  // namespace kgs
