#include "kgs/trainer.hpp"

#include "kgs/checkpoint.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

namespace kgs {

namespace {

TrainingFrame make_frame(const Frame& f, const Image8& pixels) {
  return TrainingFrame{f.index, f.timestamp, f.camera, to_float(pixels)};
}

void scale_grad(ModelGrad& g, double s) {
  for (GaussianGrad& gg : g.gaussians) {
    gg.d_position *= s;
    gg.d_rotation *= s;
    gg.d_log_scale_opt *= s;
    gg.d_opacity_logit *= s;
    gg.d_color *= s;
    gg.d_feature *= s;
  }
  for (Mlp* m : {&g.d_deform, &g.d_fine}) {
    m->w1 *= s;
    m->b1 *= s;
    m->w2 *= s;
    m->b2 *= s;
  }
}

void apply_remap(TrainState& s, const Remap& r) {
  const Eigen::Index p = s.gaussian_m.rows();
  MatX m = MatX::Zero(p, static_cast<Eigen::Index>(r.source.size()));
  MatX v = MatX::Zero(p, static_cast<Eigen::Index>(r.source.size()));
  for (std::size_t j = 0; j < r.source.size(); ++j) {
    if (!r.fresh[j]) {
      m.col(static_cast<Eigen::Index>(j)) = s.gaussian_m.col(static_cast<Eigen::Index>(r.source[j]));
      v.col(static_cast<Eigen::Index>(j)) = s.gaussian_v.col(static_cast<Eigen::Index>(r.source[j]));
    }
  }
  s.gaussian_m = std::move(m);
  s.gaussian_v = std::move(v);
  s.model.partition = remap_partition(s.model.partition, r.source);
  s.densify.reset(r.source.size());
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<TrainingFrame> training_frames(const Dataset& data) {
  std::vector<TrainingFrame> out;
  for (const Frame& f : data.frames) {
    if (!is_held_out(f.index)) {
      out.push_back(make_frame(f, f.blurred));
    }
  }
  return out;
}

std::vector<TrainingFrame> held_out_frames(const Dataset& data) {
  std::vector<TrainingFrame> out;
  for (const Frame& f : data.frames) {
    if (is_held_out(f.index)) {
      out.push_back(make_frame(f, f.sharp));
    }
  }
  return out;
}

RenderSettings make_render_settings(const RunConfig& cfg, double frame_interval) {
  RenderSettings s = cfg.render;
  s.frame_interval = frame_interval;
  s.threads = cfg.threads;
  s.coarse_to_fine = cfg.field.coarse_to_fine;
  s.per_gaussian_noise = cfg.field.per_gaussian_noise;
  return s;
}

int packed_size(const Model& model) { return 14 + model.field.feature_dim; }

VecX pack_gaussian(const Gaussian& g) {
  VecX p(14 + g.feature.size());
  p << g.position, g.rotation, g.log_scale_opt, g.opacity_logit, g.color, g.feature;
  return p;
}

void unpack_gaussian(const VecX& p, Gaussian& g) {
  g.position = p.segment<3>(0);
  g.rotation = p.segment<4>(3);
  g.log_scale_opt = p.segment<3>(7);
  g.opacity_logit = p[10];
  g.color = p.segment<3>(11);
  g.feature = p.tail(p.size() - 14);
}

VecX pack_gaussian_grad(const GaussianGrad& g) {
  VecX p(14 + g.d_feature.size());
  p << g.d_position, g.d_rotation, g.d_log_scale_opt, g.d_opacity_logit, g.d_color, g.d_feature;
  return p;
}

double scene_extent(std::span<const Vec3> points) {
  if (points.empty()) {
    return 1.0;
  }
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : points) {
    c += p;
  }
  c /= static_cast<double>(points.size());
  double r = 0.0;
  for (const Vec3& p : points) {
    r = std::max(r, (p - c).norm());
  }
  return r > 0.0 ? 1.1 * r : 1.0;
}

Model initial_model(const RunConfig& cfg, const SceneSpec& spec, Rng& rng, double* extent) {
  if (spec.primitives.empty()) {
    throw InvalidInput("initial_model: scene has no primitives");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vec3> points;
  for (const ScenePrimitive& p : spec.primitives) {
    const Pose pose = eval_trajectory(p.trajectory, p.position, p.rotation, 0.5);
    const double spread = cfg.init.jitter * p.scale.maxCoeff();
    for (int k = 0; k < cfg.init.points_per_prototype; ++k) {
      Vec3 offset;
      for (int a = 0; a < 3; ++a) {
        offset[a] = normal(rng) * spread;
      }
      points.push_back(pose.position + offset);
    }
  }
  const double ext = scene_extent(points);
  if (extent != nullptr) {
    *extent = ext;
  }
  const KdTree tree(points);
  Model m;
  m.field = FieldParams::create(cfg.field, ext, rng);
  for (std::size_t i = 0; i < points.size(); ++i) {
    Gaussian g;
    g.position = points[i];
    double d2 = 0.0;
    const auto nn = tree.nearest(points[i], 3, i);
    for (std::size_t j : nn) {
      d2 += (points[j] - points[i]).squaredNorm();
    }
    const double s = nn.empty() ? 0.01 * ext : std::sqrt(std::max(d2 / static_cast<double>(nn.size()), 1e-14));
    solve_scale_opt(Vec3::Constant(s), 1, cfg.render.lod, g.log_scale_opt);
    g.opacity_logit = logit(cfg.init.opacity);
    g.color = Vec3::Constant(cfg.init.color);
    g.level = 1;
    g.feature.resize(cfg.field.feature_dim);
    for (Eigen::Index k = 0; k < g.feature.size(); ++k) {
      g.feature[k] = normal(rng);
    }
    m.gaussians.push_back(std::move(g));
  }
  m.partition = all_dynamic(m.size(), cfg.tau);
  m.refresh_neighbors(cfg.field.neighbors);
  return m;
}

TrainState initialize(const RunConfig& cfg, const SceneSpec& spec) {
  cfg.validate();
  TrainState s;
  s.rng.seed(cfg.seed);
  s.model = initial_model(cfg, spec, s.rng, &s.scene_extent);
  const auto n = static_cast<Eigen::Index>(s.model.size());
  s.gaussian_m = MatX::Zero(packed_size(s.model), n);
  s.gaussian_v = MatX::Zero(packed_size(s.model), n);
  s.deform = AdamMoments::zeros(static_cast<Eigen::Index>(s.model.field.deform.parameter_count()));
  s.fine = AdamMoments::zeros(static_cast<Eigen::Index>(s.model.field.fine.parameter_count()));
  s.densify.reset(s.model.size());
  return s;
}

Model oracle_model(const RunConfig& cfg, const SceneSpec& spec) {
  Model m;
  Rng rng(cfg.seed);
  std::vector<Vec3> points;
  for (const ScenePrimitive& p : spec.primitives) {
    if (p.trajectory.kind != TrajectoryKind::fixed) {
      throw InvalidInput("oracle_model: scene has moving primitives");
    }
    points.push_back(p.position);
  }
  m.field = FieldParams::create(cfg.field, scene_extent(points), rng);
  const int level = cfg.render.lod.max_level;
  for (const ScenePrimitive& p : spec.primitives) {
    Gaussian g;
    g.position = p.position;
    g.rotation = p.rotation.normalized();
    solve_scale_opt(p.scale, level, cfg.render.lod, g.log_scale_opt);
    g.level = level;
    g.opacity_logit = logit(p.opacity);
    g.color = p.color;
    g.feature = VecX::Zero(cfg.field.feature_dim);
    m.gaussians.push_back(std::move(g));
  }
  m.partition = classify(std::vector<double>(m.size(), 0.0), cfg.tau);
  m.refresh_neighbors(cfg.field.neighbors);
  return m;
}

LossRecord frame_loss(const Model& model, const RunConfig& cfg, const RenderedFrame& frame, const RenderTape& tape,
                      const Image& target, RenderUpstream* up) {
  const std::size_t n = model.size();
  LossRecord r;
  Image d_img;
  r.image = image_loss(frame.image, target, cfg.loss.dssim, up != nullptr ? &d_img : nullptr);
  const auto& mask = model.partition.dynamic_mask;
  std::vector<Vec3> used(n);
  for (std::size_t i = 0; i < n; ++i) {
    used[i] = mask[i] ? tape.dx[i] : tape.raw_dx[i];
  }
  std::vector<Vec3> d_reg, d_ani;
  r.reg = reg_loss(used, mask, up != nullptr ? &d_reg : nullptr);
  r.ani = ani_loss(tape.effective_scale, cfg.loss.eps_ani, up != nullptr ? &d_ani : nullptr);
  r.total = r.image + cfg.loss.reg * r.reg + cfg.loss.ani * r.ani;
  r.psnr = psnr(frame.image, target);
  if (up != nullptr) {
    up->d_image = std::move(d_img);
    up->d_dx.assign(n, Vec3::Zero());
    up->d_raw_dx.assign(n, Vec3::Zero());
    up->d_effective_scale.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      (mask[i] ? up->d_dx[i] : up->d_raw_dx[i]) = cfg.loss.reg * d_reg[i];
      up->d_effective_scale[i] = cfg.loss.ani * d_ani[i];
    }
  }
  return r;
}

LossRecord loss_and_gradient(const Model& model, const RunConfig& cfg, const RenderSettings& settings,
                             const RenderRequest& request, const Image& target, ModelGrad* grad,
                             RenderedFrame* frame_out) {
  RenderTape tape;
  RenderedFrame frame = render(model, settings, request, &tape);
  RenderUpstream up;
  const LossRecord r = frame_loss(model, cfg, frame, tape, target, grad != nullptr ? &up : nullptr);
  if (grad != nullptr && std::isfinite(r.total)) {
    *grad = render_backward(model, settings, tape, up);
  }
  if (frame_out != nullptr) {
    *frame_out = std::move(frame);
  }
  return r;
}

IterationRecord train_step(TrainState& state, const RunConfig& cfg, const RenderSettings& settings,
                           std::span<const TrainingFrame> frames) {
  if (frames.empty()) {
    throw InvalidInput("train_step: no training frames");
  }
  Model& model = state.model;
  const std::int64_t k = state.iteration + 1;
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), frames.size());
  std::vector<std::size_t> picks;
  for (std::size_t b = 0; b < batch; ++b) {
    std::uniform_int_distribution<std::size_t> pick(0, frames.size() - 1 - b);
    std::size_t idx = pick(state.rng);
    for (std::size_t prev : picks) {  // skip frames already in the batch
      if (idx >= prev) {
        ++idx;
      }
    }
    picks.push_back(idx);
    std::sort(picks.begin(), picks.end());
  }

  const double sigma = noise_sigma(cfg.noise, k);
  ModelGrad total = ModelGrad::zeros(model);
  LossRecord mean;
  std::vector<RenderedFrame> rendered(batch);
  std::vector<ModelGrad> grads(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const TrainingFrame& f = frames[picks[b]];
    RenderRequest req{f.camera, f.t, RenderMode::train, sigma, &state.rng};
    const LossRecord l = loss_and_gradient(model, cfg, settings, req, f.target, &grads[b], &rendered[b]);
    if (!std::isfinite(l.total)) {
      throw NumericalError("non-finite loss at iteration " + std::to_string(k));
    }
    total += grads[b];
    mean.total += l.total / batch;
    mean.image += l.image / batch;
    mean.reg += l.reg / batch;
    mean.ani += l.ani / batch;
    mean.psnr += l.psnr / batch;
  }
  scale_grad(total, 1.0 / static_cast<double>(batch));

  for (std::size_t b = 0; b < batch; ++b) {
    accumulate_importance(model.gaussians, rendered[b].importance);
    for (std::size_t i = 0; i < model.size(); ++i) {
      if (grads[b].visible[i]) {
        state.densify.add(i, grads[b].screen_grad[i]);
      }
    }
  }

  // Adam
  const double pos_lr = exponential_lr(cfg.lr.position_init * state.scene_extent,
                                       cfg.lr.position_final * state.scene_extent, k, cfg.iterations);
  const double field_lr = exponential_lr(cfg.lr.field_init, cfg.lr.field_final, k, cfg.iterations);
  const int p = packed_size(model);
  VecX lr(p);
  lr.segment<3>(0).setConstant(pos_lr);
  lr.segment<4>(3).setConstant(cfg.lr.rotation);
  lr.segment<3>(7).setConstant(cfg.lr.scale);
  lr[10] = cfg.lr.opacity;
  lr.segment<3>(11).setConstant(cfg.lr.color);
  lr.tail(p - 14).setConstant(cfg.lr.feature);
  for (std::size_t i = 0; i < model.size(); ++i) {
    Gaussian& g = model.gaussians[i];
    VecX params = pack_gaussian(g);
    const VecX grad = pack_gaussian_grad(total.gaussians[i]);
    adam_update(cfg.adam, k, params, grad, lr, state.gaussian_m.col(static_cast<Eigen::Index>(i)),
                state.gaussian_v.col(static_cast<Eigen::Index>(i)));
    unpack_gaussian(params, g);
    g.rotation.normalize();
    g.color = g.color.cwiseMax(0.0).cwiseMin(1.0);
  }
  for (auto [mlp, grad, moments] : {std::tuple{&model.field.deform, &total.d_deform, &state.deform},
                                    std::tuple{&model.field.fine, &total.d_fine, &state.fine}}) {
    VecX params = mlp->flatten();
    const VecX g = grad->flatten();
    adam_update(cfg.adam, k, params, g, VecX::Constant(params.size(), field_lr), moments->m, moments->v);
    mlp->assign(params);
  }
  state.iteration = k;

  // Structural events at the iteration barrier.
  const LodConfig& lod = cfg.render.lod;
  bool rebuilt = false;
  if (is_densify_iteration(k, lod) || k == lod.opacity_reset_at) {
    const DensifyReport rep = densify_and_prune(model.gaussians, state.densify, k, lod, state.scene_extent, state.rng);
    apply_remap(state, rep.remap);
    rebuilt = true;
  }
  const int level = model.gaussians.front().level;
  if (level < lod.max_level && k == level_start(level, cfg.iterations, lod)) {
    const LevelReport rep = advance_level(model.gaussians, lod);
    apply_remap(state, rep.remap);
    rebuilt = true;
  }
  if (evaluate_partition_schedule(k, cfg.decomp)) {
    if (rebuilt) {
      model.refresh_neighbors(cfg.field.neighbors);
    }
    model.partition = classify(decomposition_scores(model, settings, cfg.decomp_samples), cfg.tau);
    rebuilt = true;
  }
  if (rebuilt || k % cfg.field.neighbor_refresh == 0) {
    model.refresh_neighbors(cfg.field.neighbors);
  }

  IterationRecord rec;
  rec.iteration = k;
  rec.loss = mean;
  rec.gaussians = model.size();
  rec.dynamic = model.partition.dynamic_indices.size();
  return rec;
}

void write_train_log_header(std::ostream& out) {
  out << "iteration,loss,l_img,l_reg,l_ani,psnr,gaussians,dynamic\n";
}

void write_train_log_row(std::ostream& out, const IterationRecord& r) {
  out << r.iteration << ',' << num(r.loss.total) << ',' << num(r.loss.image) << ',' << num(r.loss.reg) << ','
      << num(r.loss.ani) << ',' << num(r.loss.psnr) << ',' << r.gaussians << ',' << r.dynamic << '\n';
}

void run_training(TrainState& state, const RunConfig& cfg, const Dataset& data, const TrainOptions& options) {
  const RenderSettings settings = make_render_settings(cfg, data.frame_interval());
  const std::vector<TrainingFrame> frames = training_frames(data);
  std::ofstream log, timing;
  if (options.write_logs) {
    std::error_code ec;
    std::filesystem::create_directories(options.out_dir, ec);
    if (ec) {
      throw IoError("cannot create directory " + options.out_dir.string() + ": " + ec.message());
    }
    log.open(options.out_dir / "train_log.csv");
    timing.open(options.out_dir / "train_timing.csv");
    if (!log || !timing) {
      throw IoError("cannot write logs in " + options.out_dir.string());
    }
    write_train_log_header(log);
    timing << "iteration,wall_ms\n";
  }
  while (state.iteration < cfg.iterations) {
    const auto start = std::chrono::steady_clock::now();
    IterationRecord rec;
    try {
      rec = train_step(state, cfg, settings, frames);
    } catch (const NumericalError&) {
      if (options.write_logs) {
        save_checkpoint(options.out_dir / "checkpoint_abort", state, cfg);
      }
      throw;
    }
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (options.write_logs) {
      write_train_log_row(log, rec);
      timing << rec.iteration << ',' << ms << '\n';
      if (cfg.checkpoint_interval > 0 && rec.iteration % cfg.checkpoint_interval == 0) {
        char name[32];
        std::snprintf(name, sizeof name, "checkpoint_%06lld", static_cast<long long>(rec.iteration));
        save_checkpoint(options.out_dir / name, state, cfg);
      }
    }
    if (options.on_iteration) {
      options.on_iteration(rec);
    }
  }
  if (options.write_logs) {
    log.flush();
    if (!log) {
      throw IoError("write failed: " + (options.out_dir / "train_log.csv").string());
    }
    save_checkpoint(options.out_dir / "checkpoint_final", state, cfg);
  }
}

Image render_frame(const Model& model, const RunConfig& cfg, const Dataset& data, int frame, bool sharp) {
  if (frame < 0 || frame >= static_cast<int>(data.frames.size())) {
    throw InvalidInput("render_frame: frame index out of range");
  }
  RenderSettings settings = make_render_settings(cfg, data.frame_interval());
  if (sharp) {
    settings.refine.include_blur = false;
  }
  const Frame& f = data.frames[static_cast<std::size_t>(frame)];
  return render(model, settings, RenderRequest{f.camera, f.timestamp, RenderMode::eval, 0.0, nullptr}).image;
}

EvalResult evaluate(const Model& model, const RunConfig& cfg, const Dataset& data) {
  EvalResult out;
  for (const TrainingFrame& f : held_out_frames(data)) {
    const Image img = render_frame(model, cfg, data, f.index, true);
    out.frames.push_back(FrameMetric{f.index, psnr(img, f.target), ssim(img, f.target)});
  }
  for (const FrameMetric& m : out.frames) {
    out.mean_psnr += m.psnr / static_cast<double>(out.frames.size());
    out.mean_ssim += m.ssim / static_cast<double>(out.frames.size());
  }
  return out;
}

}  // namespace kgs
