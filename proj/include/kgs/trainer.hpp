#pragma once

#include "kgs/config.hpp"
#include "kgs/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace kgs {

struct TrainingFrame {
  int index = 0;
  double t = 0.0;
  Camera camera;
  Image target;
};

/// Blurred, non-held-out frames.
std::vector<TrainingFrame> training_frames(const Dataset& data);
/// Held-out frames paired with their sharp targets.
std::vector<TrainingFrame> held_out_frames(const Dataset& data);

/// Complete optimizer state; enough to resume bit-exactly.
struct TrainState {
  Model model;
  std::int64_t iteration = 0;  // completed iterations
  MatX gaussian_m;             // Adam moments, one packed block per column
  MatX gaussian_v;
  AdamMoments deform;
  AdamMoments fine;
  DensifyStats densify;
  Rng rng;
  double scene_extent = 1.0;
};

struct LossRecord {
  double total = 0.0;
  double image = 0.0;
  double reg = 0.0;
  double ani = 0.0;
  double psnr = 0.0;
};

struct IterationRecord {
  std::int64_t iteration = 0;
  LossRecord loss;
  std::size_t gaussians = 0;
  std::size_t dynamic = 0;
};

RenderSettings make_render_settings(const RunConfig& cfg, double frame_interval);

/// Size of one packed per-primitive parameter block.
int packed_size(const Model& model);
VecX pack_gaussian(const Gaussian& g);
void unpack_gaussian(const VecX& block, Gaussian& g);
VecX pack_gaussian_grad(const GaussianGrad& g);

/// Scene extent: 1.1 x the largest distance from the centroid.
double scene_extent(std::span<const Vec3> points);

/// Point cloud drawn around the scene's rest positions at t = 0.5.
Model initial_model(const RunConfig& cfg, const SceneSpec& spec, Rng& rng, double* extent);
TrainState initialize(const RunConfig& cfg, const SceneSpec& spec);

/// Ground-truth primitives of a static scene as a model (zero field, all static).
Model oracle_model(const RunConfig& cfg, const SceneSpec& spec);

/// Objective for one rendered frame. Fills `upstream` when given.
LossRecord frame_loss(const Model& model, const RunConfig& cfg, const RenderedFrame& frame, const RenderTape& tape,
                      const Image& target, RenderUpstream* upstream);

/// Renders, evaluates the objective, and (when `grad` is set) backpropagates.
LossRecord loss_and_gradient(const Model& model, const RunConfig& cfg, const RenderSettings& settings,
                             const RenderRequest& request, const Image& target, ModelGrad* grad,
                             RenderedFrame* frame = nullptr);

/// One optimization iteration including the structural events scheduled after it.
IterationRecord train_step(TrainState& state, const RunConfig& cfg, const RenderSettings& settings,
                           std::span<const TrainingFrame> frames);

struct TrainOptions {
  std::filesystem::path out_dir;
  bool write_logs = true;
  /// Invoked after every iteration.
  std::function<void(const IterationRecord&)> on_iteration;
};

/// Runs until cfg.iterations; writes train_log.csv, train_timing.csv and
/// checkpoints. On a non-finite loss saves checkpoint_abort and rethrows.
void run_training(TrainState& state, const RunConfig& cfg, const Dataset& data, const TrainOptions& options);

struct FrameMetric {
  int frame = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalResult {
  std::vector<FrameMetric> frames;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

/// Renders held-out frames without the motion-blur extent and scores them against the sharp targets.
EvalResult evaluate(const Model& model, const RunConfig& cfg, const Dataset& data);
Image render_frame(const Model& model, const RunConfig& cfg, const Dataset& data, int frame, bool sharp);

void write_train_log_header(std::ostream& out);
void write_train_log_row(std::ostream& out, const IterationRecord& r);

}  // namespace kgs
