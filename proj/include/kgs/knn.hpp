#pragma once

#include "kgs/common.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace kgs {

/// Static 3D kd-tree for exact k-nearest-neighbor queries. Ties in distance
/// are broken by ascending point index.
class KdTree {
public:
  KdTree() = default;
  explicit KdTree(std::span<const Vec3> points);

  /// Up to k nearest points sorted by (distance, index), skipping `exclude`.
  std::vector<std::size_t> nearest(const Vec3& query, std::size_t k, std::size_t exclude = SIZE_MAX) const;

  std::size_t size() const { return points_.size(); }

private:
  struct Node {
    std::uint32_t begin;
    std::uint32_t end;
    std::int32_t left = -1;
    std::int32_t right = -1;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> index_;
  std::vector<Node> nodes_;
};

/// k nearest members of `positions` to positions[query], excluding the query
/// itself unless it is the only member. k >= size returns every other member.
std::vector<std::size_t> knn_dynamic(std::span<const Vec3> positions, std::size_t query, std::size_t k);

/// Exhaustive distance sort with the same ordering contract.
std::vector<std::size_t> knn_brute_force(std::span<const Vec3> positions, std::size_t query, std::size_t k);

/// Per-primitive neighbor lists (global indices); empty for non-members.
using NeighborTable = std::vector<std::vector<std::uint32_t>>;

NeighborTable build_neighbor_table(std::span<const Vec3> all_positions, std::span<const std::size_t> members,
                                   std::size_t k);

}  // namespace kgs
