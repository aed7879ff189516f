#pragma once

#include "kgs/core.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace kgs {

struct LodConfig {
  int max_level = 3;
  double lambda = 0.004;  // world units
  double rho = 0.5;
  /// false: s_min = lambda * rho^(1 - l); true: lambda * rho^(l - 1).
  bool flod_exponent = false;
  double prune_quantile = 0.1;
  double grad_threshold = 1e-4;
  double min_opacity = 0.005;
  std::int64_t densify_from = 500;
  std::int64_t densify_until = 10000;
  std::int64_t densify_interval = 300;
  std::int64_t opacity_reset_at = 3000;
  double opacity_reset_value = 0.01;
  /// Primitives larger than this fraction of the scene extent are split, smaller ones cloned.
  double percent_dense = 0.01;
  std::size_t max_gaussians = 2000;

  void validate() const;
};

double min_scale(int level, const LodConfig& cfg);
Vec3 effective_scale(const Vec3& s_opt, int level, const LodConfig& cfg);

/// s_opt that reproduces `effective` at `level`. Returns false (and a clamped
/// value) when some component is not representable.
bool solve_scale_opt(const Vec3& effective, int level, const LodConfig& cfg, Vec3& s_opt);

/// Level-budget boundaries: the iteration at which level l + 1 starts.
std::int64_t level_start(int level, std::int64_t total_iterations, const LodConfig& cfg);

/// Provenance of a rebuilt primitive list.
struct Remap {
  std::vector<std::size_t> source;  // parent index of each new primitive
  std::vector<std::uint8_t> fresh;  // 1 when the primitive was created (not carried over)

  static Remap identity(std::size_t n);
  bool is_identity() const;
};

void accumulate_importance(std::vector<Gaussian>& gaussians, std::span<const double> increments);

struct LevelReport {
  Remap remap;
  std::size_t pruned = 0;
  std::size_t clamped = 0;  // survivors whose effective scale could not be preserved
  bool kept_top = false;    // pruning would have emptied the scene
};

LevelReport advance_level(std::vector<Gaussian>& gaussians, const LodConfig& cfg);

/// Running view-space gradient statistics between densification steps.
struct DensifyStats {
  std::vector<double> grad_sum;
  std::vector<std::uint32_t> count;

  void reset(std::size_t n);
  void add(std::size_t i, double grad_norm);
};

struct DensifyReport {
  Remap remap;
  std::size_t cloned = 0;
  std::size_t split = 0;
  std::size_t pruned = 0;
  bool opacity_reset = false;
};

bool is_densify_iteration(std::int64_t iteration, const LodConfig& cfg);

/// Split/clone above the gradient threshold (inside the window), prune
/// transparent primitives, and apply the opacity reset on its iteration.
DensifyReport densify_and_prune(std::vector<Gaussian>& gaussians, const DensifyStats& stats, std::int64_t iteration,
                                const LodConfig& cfg, double scene_extent, std::mt19937_64& rng);

}  // namespace kgs
