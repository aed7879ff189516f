#pragma once

#include "kgs/core.hpp"
#include "kgs/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace kgs {

enum class TrajectoryKind { fixed, linear, sinusoid, bounce, spin };

/// Closed-form motion over normalized time t in [0, 1].
struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::fixed;
  Vec3 velocity = Vec3::Zero();    // linear: world units per unit time
  Vec3 amplitude = Vec3::Zero();   // sinusoid
  double frequency = 1.0;          // sinusoid: cycles per unit time
  double phase = 0.0;              // sinusoid: radians
  Vec3 up = Vec3(0.0, -1.0, 0.0);  // bounce: unit direction away from the floor
  double height = 0.0;             // bounce: apex height above the floor
  double period = 1.0;             // bounce: time between floor contacts
  Vec3 omega = Vec3::Zero();       // spin: axis-angle rate per unit time
};

struct Pose {
  Vec3 position;
  Vec4 rotation;
};

/// Pose of a primitive whose rest pose is (origin, rotation). For a bounce the
/// origin lies on the floor.
Pose eval_trajectory(const TrajectorySpec& spec, const Vec3& origin, const Vec4& rotation, double t);

struct ScenePrimitive {
  Vec3 position = Vec3::Zero();
  Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
  Vec3 scale = Vec3::Constant(0.1);
  double opacity = 0.9;
  Vec3 color = Vec3::Constant(0.5);
  TrajectorySpec trajectory;
};

/// Static camera, or one translating at a constant rate (linear pan).
struct CameraPath {
  Camera camera;
  Vec3 pan_velocity = Vec3::Zero();  // camera-center motion, world units per unit time

  Camera at(double t) const;
};

struct SceneSpec {
  std::string name = "scene";
  std::vector<ScenePrimitive> primitives;
  CameraPath camera;
  int frame_count = 48;
  double fps = 24.0;
  double exposure_fraction = 1.0;
  int blur_samples = 33;
  std::uint64_t seed = 0;
  Vec3 background = Vec3::Zero();

  void validate() const;
  double frame_interval() const { return 1.0 / frame_count; }
  double timestamp(int frame) const { return (frame + 0.5) / frame_count; }
  double exposure() const { return exposure_fraction * frame_interval(); }
};

std::string trajectory_kind_name(TrajectoryKind k);
TrajectoryKind parse_trajectory_kind(const std::string& s);

std::string scene_to_json(const SceneSpec& spec);
/// Throws ConfigError with line/column on malformed input.
SceneSpec scene_from_json(const std::string& text, const std::string& origin = "scene");

/// Instantaneous render at time t.
Image render_at(const SceneSpec& spec, double t, int threads = 1);
Image render_sharp(const SceneSpec& spec, int frame, int threads = 1);
/// Mean of blur_samples instantaneous renders, centered-stratified over the exposure window.
Image render_blurred(const SceneSpec& spec, int frame, int threads = 1);
std::vector<double> exposure_samples(const SceneSpec& spec, int frame);

/// Named procedural scenes: rolldice-lite, decomp-100, static-lite.
SceneSpec make_preset(const std::string& name, std::uint64_t seed);
const std::vector<std::string>& preset_names();

struct Frame {
  int index = 0;
  double timestamp = 0.0;
  double exposure = 0.0;
  Camera camera;
  Image8 blurred;
  Image8 sharp;
};

struct Dataset {
  SceneSpec spec;
  std::vector<Frame> frames;

  double frame_interval() const { return spec.frame_interval(); }
};

/// Every eighth frame (index % 8 == 0) is held out for evaluation.
bool is_held_out(int frame_index);

Dataset synthesize(const SceneSpec& spec, int threads = 1);
void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace kgs
