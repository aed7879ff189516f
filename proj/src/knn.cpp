#include "kgs/knn.hpp"

#include <algorithm>
#include <numeric>
#include <queue>

namespace kgs {

namespace {

constexpr std::uint32_t kLeafSize = 8;

struct Candidate {
  double d2;
  std::size_t index;
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};

}  // namespace

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  index_.resize(points_.size());
  std::iota(index_.begin(), index_.end(), 0u);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 1);
    build(0, static_cast<std::uint32_t>(points_.size()));
  }
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) {
    return id;
  }
  Vec3 lo = points_[index_[begin]], hi = lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[index_[i]]);
    hi = hi.cwiseMax(points_[index_[i]]);
  }
  int axis;
  (hi - lo).maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(index_.begin() + begin, index_.begin() + mid, index_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double pa = points_[a][axis], pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[index_[mid]][axis];
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

std::vector<std::size_t> KdTree::nearest(const Vec3& query, std::size_t k, std::size_t exclude) const {
  std::vector<std::size_t> out;
  if (k == 0 || nodes_.empty()) {
    return out;
  }
  std::priority_queue<Candidate> heap;  // max-heap: worst candidate on top

  auto visit = [&](auto&& self, std::int32_t id) -> void {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = index_[i];
        if (idx == exclude) {
          continue;
        }
        const Candidate c{(points_[idx] - query).squaredNorm(), idx};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      return;
    }
    const double delta = query[n.axis] - n.split;
    const std::int32_t near = delta < 0.0 ? n.left : n.right;
    const std::int32_t far = delta < 0.0 ? n.right : n.left;
    self(self, near);
    // Points equal to the split value may sit on either side, so ties are visited.
    if (heap.size() < k || delta * delta <= heap.top().d2) {
      self(self, far);
    }
  };
  visit(visit, 0);

  out.resize(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top().index;
    heap.pop();
  }
  return out;
}

std::vector<std::size_t> knn_dynamic(std::span<const Vec3> positions, std::size_t query, std::size_t k) {
  if (positions.empty()) {
    throw InvalidInput("knn_dynamic: empty point set");
  }
  if (query >= positions.size()) {
    throw InvalidInput("knn_dynamic: query index out of range");
  }
  if (positions.size() == 1) {
    return {query};
  }
  const KdTree tree(positions);
  return tree.nearest(positions[query], std::min(k, positions.size() - 1), query);
}

std::vector<std::size_t> knn_brute_force(std::span<const Vec3> positions, std::size_t query, std::size_t k) {
  if (positions.size() == 1) {
    return {query};
  }
  std::vector<Candidate> all;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (i != query) {
      all.push_back({(positions[i] - positions[query]).squaredNorm(), i});
    }
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) {
    out.push_back(all[i].index);
  }
  return out;
}

NeighborTable build_neighbor_table(std::span<const Vec3> all_positions, std::span<const std::size_t> members,
                                   std::size_t k) {
  NeighborTable table(all_positions.size());
  if (members.empty()) {
    return table;
  }
  std::vector<Vec3> pts;
  pts.reserve(members.size());
  for (std::size_t m : members) {
    pts.push_back(all_positions[m]);
  }
  const KdTree tree(pts);
  const std::size_t kk = std::min(k, members.size() - 1);
  for (std::size_t i = 0; i < members.size(); ++i) {
    auto& row = table[members[i]];
    for (std::size_t local : tree.nearest(pts[i], kk, i)) {
      row.push_back(static_cast<std::uint32_t>(members[local]));
    }
  }
  return table;
}

}  // namespace kgs
