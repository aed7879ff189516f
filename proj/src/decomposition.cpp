#include "kgs/decomposition.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace kgs {

void Partition::validate() const {
  if (scores.size() != dynamic_mask.size() || dynamic_indices.size() + static_indices.size() != dynamic_mask.size()) {
    throw InvalidInput("partition: inconsistent sizes");
  }
  for (std::size_t i : dynamic_indices) {
    if (i >= size() || !is_dynamic(i)) {
      throw InvalidInput("partition: dynamic index list disagrees with mask");
    }
  }
  for (std::size_t i : static_indices) {
    if (i >= size() || is_dynamic(i)) {
      throw InvalidInput("partition: static index list disagrees with mask");
    }
  }
  if (!std::is_sorted(dynamic_indices.begin(), dynamic_indices.end()) ||
      !std::is_sorted(static_indices.begin(), static_indices.end())) {
    throw InvalidInput("partition: index lists must be sorted");
  }
}

namespace {

Partition from_mask(std::vector<std::uint8_t> mask, std::vector<double> scores, double tau) {
  Partition p;
  p.dynamic_mask = std::move(mask);
  p.scores = std::move(scores);
  p.tau = tau;
  for (std::size_t i = 0; i < p.dynamic_mask.size(); ++i) {
    (p.dynamic_mask[i] ? p.dynamic_indices : p.static_indices).push_back(i);
  }
  return p;
}

}  // namespace

Partition all_dynamic(std::size_t n, double tau) {
  return from_mask(std::vector<std::uint8_t>(n, 1), std::vector<double>(n, 0.0), tau);
}

double deformation_variance(std::span<const Vec3> samples) {
  if (samples.size() < 2) {
    throw InvalidInput("deformation_variance: need at least two samples");
  }
  Vec3 mean = Vec3::Zero();
  for (const Vec3& s : samples) {
    mean += s;
  }
  mean /= static_cast<double>(samples.size());
  double acc = 0.0;
  for (const Vec3& s : samples) {
    acc += (s - mean).squaredNorm();
  }
  return acc / static_cast<double>(samples.size());
}

std::vector<double> deformation_variance(const std::vector<std::vector<Vec3>>& samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    out.push_back(deformation_variance(s));
  }
  return out;
}

Partition classify(std::span<const double> scores, double tau) {
  if (!(tau >= 0.0)) {
    throw InvalidInput("classify: tau must be >= 0");
  }
  std::vector<std::uint8_t> mask(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    mask[i] = scores[i] > tau ? 1 : 0;
  }
  return from_mask(std::move(mask), std::vector<double>(scores.begin(), scores.end()), tau);
}

Partition remap_partition(const Partition& p, std::span<const std::size_t> source) {
  std::vector<std::uint8_t> mask(source.size());
  std::vector<double> scores(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (source[i] >= p.size()) {
      throw InvalidInput("remap_partition: source index out of range");
    }
    mask[i] = p.dynamic_mask[source[i]];
    scores[i] = p.scores[source[i]];
  }
  return from_mask(std::move(mask), std::move(scores), p.tau);
}

bool evaluate_partition_schedule(std::int64_t iteration, const DecompositionSchedule& s) {
  if (iteration < s.first) {
    return false;
  }
  return s.period > 0 ? (iteration - s.first) % s.period == 0 : iteration == s.first;
}

std::vector<double> stratified_times(int count) {
  if (count < 1) {
    throw InvalidInput("stratified_times: count must be >= 1");
  }
  std::vector<double> t(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    t[static_cast<std::size_t>(k)] = (k + 0.5) / count;
  }
  return t;
}

void write_partition(const std::filesystem::path& path, const Partition& p) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open for writing: " + path.string());
  }
  char buf[64];
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", p.scores[i]);
    out << i << ',' << buf << ',' << (p.is_dynamic(i) ? "dynamic" : "static") << '\n';
  }
  if (!out) {
    throw IoError("write failed: " + path.string());
  }
}

Partition read_partition(const std::filesystem::path& path, double tau) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open: " + path.string());
  }
  std::vector<std::uint8_t> mask;
  std::vector<double> scores;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    std::istringstream ls(line);
    std::string idx, score, label;
    if (!std::getline(ls, idx, ',') || !std::getline(ls, score, ',') || !std::getline(ls, label)) {
      throw IoError("malformed partition line in " + path.string());
    }
    std::size_t index = 0;
    double value = 0.0;
    try {
      index = std::stoull(idx);
      value = std::stod(score);
    } catch (const std::logic_error&) {
      throw IoError("malformed partition line in " + path.string() + ": " + line);
    }
    if (index != mask.size()) {
      throw IoError("partition indices out of order in " + path.string());
    }
    if (label != "dynamic" && label != "static") {
      throw IoError("unknown partition label '" + label + "' in " + path.string());
    }
    mask.push_back(label == "dynamic" ? 1 : 0);
    scores.push_back(value);
  }
  return from_mask(std::move(mask), std::move(scores), tau);
}

}  // namespace kgs
