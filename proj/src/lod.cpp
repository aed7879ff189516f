#include "kgs/lod.hpp"

#include <algorithm>
#include <numeric>

namespace kgs {

namespace {

constexpr double kClampedScaleOpt = -13.815510557964274;  // log(1e-6)
constexpr double kSplitShrink = 1.6;

}  // namespace

void LodConfig::validate() const {
  if (max_level < 1) {
    throw InvalidInput("lod: max_level must be >= 1");
  }
  if (!(lambda > 0.0) || !(rho > 0.0 && rho < 1.0)) {
    throw InvalidInput("lod: need lambda > 0 and 0 < rho < 1");
  }
  if (!(prune_quantile >= 0.0 && prune_quantile < 1.0)) {
    throw InvalidInput("lod: prune_quantile must lie in [0, 1)");
  }
  if (!(grad_threshold > 0.0) || !(min_opacity > 0.0) || !(opacity_reset_value > 0.0 && opacity_reset_value < 1.0)) {
    throw InvalidInput("lod: thresholds must be positive");
  }
  if (densify_interval <= 0 || max_gaussians == 0) {
    throw InvalidInput("lod: densify_interval and max_gaussians must be positive");
  }
}

double min_scale(int level, const LodConfig& cfg) {
  if (level < 1 || level > cfg.max_level) {
    throw InvalidInput("min_scale: level " + std::to_string(level) + " outside [1, " +
                       std::to_string(cfg.max_level) + "]");
  }
  if (level == cfg.max_level) {
    return 0.0;
  }
  const double exponent = cfg.flod_exponent ? level - 1.0 : 1.0 - level;
  return cfg.lambda * std::pow(cfg.rho, exponent);
}

Vec3 effective_scale(const Vec3& s_opt, int level, const LodConfig& cfg) {
  return s_opt.array().exp().matrix() + Vec3::Constant(min_scale(level, cfg));
}

bool solve_scale_opt(const Vec3& effective, int level, const LodConfig& cfg, Vec3& s_opt) {
  const double floor = min_scale(level, cfg);
  bool ok = true;
  for (int k = 0; k < 3; ++k) {
    const double rest = effective[k] - floor;
    if (rest > 0.0) {
      s_opt[k] = std::log(rest);
    } else {
      s_opt[k] = kClampedScaleOpt;
      ok = false;
    }
  }
  return ok;
}

std::int64_t level_start(int level, std::int64_t total_iterations, const LodConfig& cfg) {
  return total_iterations * level / cfg.max_level;
}

Remap Remap::identity(std::size_t n) {
  Remap r;
  r.source.resize(n);
  std::iota(r.source.begin(), r.source.end(), std::size_t{0});
  r.fresh.assign(n, 0);
  return r;
}

bool Remap::is_identity() const {
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (source[i] != i || fresh[i] != 0) {
      return false;
    }
  }
  return true;
}

void accumulate_importance(std::vector<Gaussian>& gaussians, std::span<const double> increments) {
  if (increments.size() != gaussians.size()) {
    throw InvalidInput("accumulate_importance: size mismatch");
  }
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    gaussians[i].accumulated_importance += increments[i];
  }
}

LevelReport advance_level(std::vector<Gaussian>& gaussians, const LodConfig& cfg) {
  if (gaussians.empty()) {
    throw InvalidInput("advance_level: empty scene");
  }
  const int level = gaussians.front().level;
  if (level >= cfg.max_level) {
    throw InvalidInput("advance_level: already at the finest level");
  }
  LevelReport report;
  const std::size_t n = gaussians.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return gaussians[a].accumulated_importance < gaussians[b].accumulated_importance;
  });
  std::size_t drop = static_cast<std::size_t>(std::floor(cfg.prune_quantile * static_cast<double>(n)));
  if (drop >= n) {
    drop = n - 1;
    report.kept_top = true;
  }
  std::vector<std::uint8_t> keep(n, 1);
  for (std::size_t i = 0; i < drop; ++i) {
    keep[order[i]] = 0;
  }
  std::vector<Gaussian> next;
  next.reserve(n - drop);
  for (std::size_t i = 0; i < n; ++i) {
    if (!keep[i]) {
      continue;
    }
    Gaussian g = gaussians[i];
    const Vec3 eff = effective_scale(g.log_scale_opt, level, cfg);
    if (!solve_scale_opt(eff, level + 1, cfg, g.log_scale_opt)) {
      ++report.clamped;
    }
    g.level = level + 1;
    g.accumulated_importance = 0.0;
    next.push_back(std::move(g));
    report.remap.source.push_back(i);
    report.remap.fresh.push_back(0);
  }
  report.pruned = drop;
  gaussians = std::move(next);
  return report;
}

void DensifyStats::reset(std::size_t n) {
  grad_sum.assign(n, 0.0);
  count.assign(n, 0);
}

void DensifyStats::add(std::size_t i, double grad_norm) {
  grad_sum[i] += grad_norm;
  ++count[i];
}

bool is_densify_iteration(std::int64_t iteration, const LodConfig& cfg) {
  return iteration > cfg.densify_from && iteration <= cfg.densify_until && iteration % cfg.densify_interval == 0;
}

DensifyReport densify_and_prune(std::vector<Gaussian>& gaussians, const DensifyStats& stats, std::int64_t iteration,
                                const LodConfig& cfg, double scene_extent, std::mt19937_64& rng) {
  DensifyReport report;
  const std::size_t n = gaussians.size();
  if (stats.grad_sum.size() != n || stats.count.size() != n) {
    throw InvalidInput("densify_and_prune: statistics do not match the scene");
  }
  std::vector<Gaussian> next;
  std::vector<std::size_t> source;
  std::vector<std::uint8_t> fresh;
  next.reserve(n);

  const bool densify = is_densify_iteration(iteration, cfg);
  std::vector<std::uint8_t> split(n, 0);
  std::vector<std::uint8_t> clone(n, 0);
  if (densify) {
    std::size_t budget = cfg.max_gaussians > n ? cfg.max_gaussians - n : 0;
    for (std::size_t i = 0; i < n && budget > 0; ++i) {
      if (stats.count[i] == 0) {
        continue;
      }
      const double mean_grad = stats.grad_sum[i] / stats.count[i];
      if (!(mean_grad >= cfg.grad_threshold)) {
        continue;
      }
      const Vec3 eff = effective_scale(gaussians[i].log_scale_opt, gaussians[i].level, cfg);
      if (eff.maxCoeff() > cfg.percent_dense * scene_extent) {
        split[i] = 1;  // one parent becomes two children
      } else {
        clone[i] = 1;
      }
      --budget;
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    const Gaussian& g = gaussians[i];
    if (split[i]) {
      const Vec3 eff = effective_scale(g.log_scale_opt, g.level, cfg);
      const Mat3 r = quat_to_matrix(g.rotation.normalized());
      std::normal_distribution<double> normal(0.0, 1.0);
      for (int c = 0; c < 2; ++c) {
        Gaussian child = g;
        Vec3 offset;
        for (int k = 0; k < 3; ++k) {
          offset[k] = normal(rng) * eff[k];
        }
        child.position = g.position + r * offset;
        solve_scale_opt(eff / kSplitShrink, g.level, cfg, child.log_scale_opt);
        next.push_back(std::move(child));
        source.push_back(i);
        fresh.push_back(1);
      }
      ++report.split;
      continue;
    }
    next.push_back(g);
    source.push_back(i);
    fresh.push_back(0);
    if (clone[i]) {
      next.push_back(g);
      source.push_back(i);
      fresh.push_back(1);
      ++report.cloned;
    }
  }

  // Prune, keeping the most opaque primitive if nothing would survive.
  std::vector<std::uint8_t> keep(next.size());
  bool any = false;
  for (std::size_t i = 0; i < next.size(); ++i) {
    keep[i] = next[i].opacity() >= cfg.min_opacity ? 1 : 0;
    any = any || keep[i];
  }
  if (!any && !next.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < next.size(); ++i) {
      if (next[i].opacity_logit > next[best].opacity_logit) {
        best = i;
      }
    }
    keep[best] = 1;
  }
  std::vector<Gaussian> kept;
  kept.reserve(next.size());
  for (std::size_t i = 0; i < next.size(); ++i) {
    if (keep[i]) {
      kept.push_back(std::move(next[i]));
      report.remap.source.push_back(source[i]);
      report.remap.fresh.push_back(fresh[i]);
    } else {
      ++report.pruned;
    }
  }

  if (iteration == cfg.opacity_reset_at) {
    const double cap = logit(cfg.opacity_reset_value);
    for (Gaussian& g : kept) {
      g.opacity_logit = std::min(g.opacity_logit, cap);
    }
    report.opacity_reset = true;
  }
  gaussians = std::move(kept);
  return report;
}

}  // namespace kgs
