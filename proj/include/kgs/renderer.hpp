#pragma once

#include "kgs/decomposition.hpp"
#include "kgs/deform_field.hpp"
#include "kgs/kinematics.hpp"
#include "kgs/knn.hpp"
#include "kgs/lod.hpp"
#include "kgs/rasterizer.hpp"

#include <cstdint>
#include <vector>

namespace kgs {

/// Scene state optimized by training.
struct Model {
  std::vector<Gaussian> gaussians;
  FieldParams field;
  Partition partition;
  NeighborTable neighbors;

  std::size_t size() const { return gaussians.size(); }
  /// Throws InvalidInput when per-primitive tables disagree with the primitive count.
  void validate() const;
  /// Rebuilds neighbor lists over the current dynamic set.
  void refresh_neighbors(int k);
};

enum class RenderMode { train, eval };

/// How the velocity fed to the refinement is derived from predicted offsets.
enum class VelocityMode {
  /// (dx(t + dt/2) - dx(t - dt/2)) / dt
  displacement,
  /// dx(t) / dt
  offset,
};

struct RenderSettings {
  LodConfig lod;
  Vec3 background = Vec3::Zero();
  double frame_interval = 1.0 / 48.0;
  bool kinematic_refinement = true;
  bool coarse_to_fine = true;
  VelocityMode velocity_mode = VelocityMode::displacement;
  RefineOptions refine;
  double kappa = kDefaultKappa;
  bool per_gaussian_noise = true;
  int threads = 1;
};

struct RenderRequest {
  Camera camera;
  double t = 0.0;
  RenderMode mode = RenderMode::eval;
  double noise_sigma = 0.0;  // ignored in eval mode
  Rng* rng = nullptr;        // required when train mode draws noise
};

struct RenderedFrame {
  Image image;
  std::vector<double> transmittance;  // per pixel
  std::vector<double> importance;     // per primitive
};

/// Field evaluation at one time slot.
struct SlotTape {
  double time = 0.0;
  std::vector<std::size_t> members;  // primitives evaluated by F_theta, in column order
  MatX deform_input;
  MatX deform_hidden;
  MatX raw;  // 9 x members
  MatX fine_input;   // columns follow the dynamic list
  MatX fine_hidden;
  MatX composed;     // coarse + fine, before clamping
  MatX clamped;
};

struct PrimitiveTape {
  bool dynamic = false;
  bool refined = false;
  Vec4 unit_rotation = Vec4(1.0, 0.0, 0.0, 0.0);
  Mat3 r0 = Mat3::Identity();
  Mat3 exp_dr = Mat3::Identity();
  Mat3 r_pred = Mat3::Identity();
  Vec3 s_pred = Vec3::Ones();
  Vec3 velocity = Vec3::Zero();
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Identity();
  RefinementInputs refine_in;
  RefineTape refine;
  double opacity_scale = 1.0;
  Projection proj;
  std::int64_t splat = -1;
};

struct RenderTape {
  double t = 0.0;
  RenderMode mode = RenderMode::eval;
  Camera camera;
  MatX noise;  // 2L x (1 or N); empty when noise-free
  std::vector<Vec3> effective_scale;
  std::vector<std::size_t> dynamic;          // dynamic primitives in index order
  std::vector<std::int64_t> dynamic_column;  // per primitive, -1 if static
  std::vector<SlotTape> slots;               // [t, t - dt/2, t + dt/2] (the latter two when needed)
  std::vector<PrimitiveTape> prims;
  std::vector<Splat> splats;
  std::vector<std::size_t> splat_owner;
  RasterTape raster;
  std::vector<Vec3> raw_dx;  // unclamped F_theta position offsets at t, every primitive
  std::vector<Vec3> dx;      // applied position offsets at t (zero for static primitives)
};

RenderedFrame render(const Model& model, const RenderSettings& settings, const RenderRequest& request,
                     RenderTape* tape = nullptr);

struct GaussianGrad {
  Vec3 d_position = Vec3::Zero();
  Vec4 d_rotation = Vec4::Zero();
  Vec3 d_log_scale_opt = Vec3::Zero();
  double d_opacity_logit = 0.0;
  Vec3 d_color = Vec3::Zero();
  VecX d_feature;
};

struct ModelGrad {
  std::vector<GaussianGrad> gaussians;
  Mlp d_deform;
  Mlp d_fine;
  /// |d mean2d| in normalized device units per primitive, and whether it was on screen.
  std::vector<double> screen_grad;
  std::vector<std::uint8_t> visible;

  static ModelGrad zeros(const Model& model);
  ModelGrad& operator+=(const ModelGrad& other);
};

/// Upstream gradients; empty vectors are treated as zero.
struct RenderUpstream {
  Image d_image;
  std::vector<Vec3> d_raw_dx;
  std::vector<Vec3> d_dx;
  std::vector<Vec3> d_effective_scale;
};

ModelGrad render_backward(const Model& model, const RenderSettings& settings, const RenderTape& tape,
                          const RenderUpstream& upstream);

/// Position offsets at `times` without noise; one row of samples per primitive.
/// Dynamic primitives get the applied (composed, clamped) offset, static ones the raw F_theta offset.
std::vector<std::vector<Vec3>> sample_offsets(const Model& model, const RenderSettings& settings,
                                              const std::vector<double>& times);

/// Per-primitive variance scores over `samples` stratified timestamps.
std::vector<double> decomposition_scores(const Model& model, const RenderSettings& settings, int samples = 16);

std::vector<Vec3> effective_scales(const Model& model, const LodConfig& lod);

}  // namespace kgs
