#pragma once

#include "kgs/deform_field.hpp"
#include "kgs/losses.hpp"
#include "kgs/optimizer.hpp"
#include "kgs/renderer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace kgs {

struct LearningRates {
  double position_init = 1.6e-4;  // multiplied by the scene extent
  double position_final = 1.6e-6;
  double color = 0.0025;
  double opacity = 0.05;
  double scale = 0.005;
  double rotation = 0.001;
  double feature = 0.0025;
  double field_init = 8e-4;
  double field_final = 1.6e-6;
};

struct InitConfig {
  int points_per_prototype = 1;
  double jitter = 0.25;  // relative to the prototype's largest scale
  double opacity = 0.1;
  double color = 0.5;
};

/// Every tunable of a training run.
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  std::int64_t iterations = 30000;
  int batch = 2;
  std::int64_t checkpoint_interval = 0;

  RenderSettings render;
  FieldConfig field;
  NoiseSchedule noise;
  LossWeights loss;
  LearningRates lr;
  AdamConfig adam;
  InitConfig init;
  double tau = kDefaultTau;
  DecompositionSchedule decomp;
  int decomp_samples = 16;

  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Dotted key names accepted in config files, in canonical order.
const std::vector<std::string>& config_keys();

/// Overlays the keys present in `text` onto `cfg`. `origin` labels error messages.
void apply_config_json(RunConfig& cfg, const std::string& text, const std::string& origin = "config");
RunConfig load_config(const std::filesystem::path& path);

std::string config_to_json(const RunConfig& cfg);

/// Applies a named ablation: full, no-cf, no-kr, no-lreg, no-lani, tau=<value>.
void apply_ablation(RunConfig& cfg, const std::string& variant);

/// Line and column (1-based) of a byte offset within `text`.
std::pair<int, int> line_column(const std::string& text, std::size_t byte_offset);

}  // namespace kgs
