#pragma once

#include "kgs/common.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace kgs {

inline constexpr double kDefaultTau = 2e-5;

/// Static/dynamic split of the primitives.
struct Partition {
  std::vector<std::size_t> dynamic_indices;  // sorted
  std::vector<std::size_t> static_indices;   // sorted
  std::vector<double> scores;
  std::vector<std::uint8_t> dynamic_mask;    // per primitive, 1 when dynamic
  double tau = kDefaultTau;

  std::size_t size() const { return dynamic_mask.size(); }
  bool is_dynamic(std::size_t i) const { return dynamic_mask[i] != 0; }
  /// Throws InvalidInput when the index lists and mask disagree.
  void validate() const;
};

/// Every primitive dynamic with zero score (state before the first evaluation).
Partition all_dynamic(std::size_t n, double tau = kDefaultTau);

/// Mean squared deviation of the samples from their temporal mean.
double deformation_variance(std::span<const Vec3> samples);
std::vector<double> deformation_variance(const std::vector<std::vector<Vec3>>& samples);

/// Dynamic iff score > tau.
Partition classify(std::span<const double> scores, double tau);

/// Labels carried to a rebuilt primitive list; entry i of `source` names the
/// parent of new primitive i.
Partition remap_partition(const Partition& p, std::span<const std::size_t> source);

struct DecompositionSchedule {
  std::int64_t first = 3000;
  std::int64_t period = 2000;
};

bool evaluate_partition_schedule(std::int64_t iteration, const DecompositionSchedule& schedule = {});

/// (k + 0.5) / count for k in [0, count).
std::vector<double> stratified_times(int count);

/// One `index,score,label` line per primitive.
void write_partition(const std::filesystem::path& path, const Partition& p);
Partition read_partition(const std::filesystem::path& path, double tau = kDefaultTau);

}  // namespace kgs
