#include "support.hpp"

#include <gtest/gtest.h>

namespace kgs {
namespace {

using test::uniform;

LodConfig lod(int max_level, double lambda = 0.1, double rho = 0.5) {
  LodConfig c;
  c.max_level = max_level;
  c.lambda = lambda;
  c.rho = rho;
  return c;
}

Gaussian blob(double opacity, double scale) {
  Gaussian g;
  g.opacity_logit = logit(opacity);
  g.log_scale_opt = Vec3::Constant(std::log(scale));
  g.level = 3;
  return g;
}

TEST(MinScale, Branches) {
  const LodConfig c = lod(5);
  EXPECT_DOUBLE_EQ(min_scale(1, c), 0.1);
  EXPECT_DOUBLE_EQ(min_scale(3, c), 0.4);
  EXPECT_EQ(min_scale(5, c), 0.0);
  EXPECT_THROW(min_scale(0, c), InvalidInput);
  EXPECT_THROW(min_scale(6, c), InvalidInput);
  LodConfig f = c;
  f.flod_exponent = true;
  EXPECT_DOUBLE_EQ(min_scale(3, f), 0.025);
}

TEST(EffectiveScale, FloorAndFinestLevel) {
  const LodConfig c = lod(3);
  EXPECT_EQ(effective_scale(Vec3::Zero(), 3, c), Vec3::Ones());
  const Vec3 tiny = effective_scale(Vec3::Constant(-800.0), 1, c);
  EXPECT_EQ(tiny, Vec3::Constant(0.1));
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const Vec3 s(uniform(rng, -10, 2), uniform(rng, -10, 2), uniform(rng, -10, 2));
    for (int l = 1; l <= 3; ++l) {
      EXPECT_TRUE((effective_scale(s, l, c).array() >= min_scale(l, c)).all());
    }
  }
}

TEST(SolveScale, RoundTripAndInfeasible) {
  const LodConfig c = lod(3);
  Vec3 s;
  ASSERT_TRUE(solve_scale_opt(Vec3(0.5, 0.3, 1.0), 2, c, s));
  EXPECT_LT((effective_scale(s, 2, c) - Vec3(0.5, 0.3, 1.0)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_FALSE(solve_scale_opt(Vec3(0.1, 0.3, 1.0), 2, c, s));  // 0.1 < floor 0.2
  EXPECT_TRUE(std::isfinite(s[0]));
}

TEST(AdvanceLevel, PureCloneAtZeroQuantile) {
  LodConfig c = lod(3, 0.01);
  c.prune_quantile = 0.0;
  std::vector<Gaussian> gs(5, blob(0.5, 0.2));
  for (Gaussian& g : gs) {
    g.level = 1;
    g.accumulated_importance = 3.0;
  }
  const LevelReport r = advance_level(gs, c);
  EXPECT_EQ(gs.size(), 5u);
  EXPECT_EQ(r.pruned, 0u);
  EXPECT_TRUE(r.remap.is_identity());
  for (const Gaussian& g : gs) {
    EXPECT_EQ(g.level, 2);
    EXPECT_EQ(g.accumulated_importance, 0.0);
    EXPECT_NEAR(effective_scale(g.log_scale_opt, 2, c)[0], std::exp(std::log(0.2)) + 0.01, 1e-12);
  }
}

TEST(AdvanceLevel, PrunesLowestImportance) {
  LodConfig c = lod(3, 0.01);
  c.prune_quantile = 0.5;
  std::vector<Gaussian> gs(2, blob(0.5, 0.2));
  gs[0].level = gs[1].level = 1;
  gs[0].accumulated_importance = 0.0;
  gs[1].accumulated_importance = 10.0;
  gs[1].color = Vec3(1, 0, 0);
  const LevelReport r = advance_level(gs, c);
  ASSERT_EQ(gs.size(), 1u);
  EXPECT_EQ(gs[0].color, Vec3(1, 0, 0));
  EXPECT_EQ(r.remap.source, std::vector<std::size_t>{1});
}

TEST(AdvanceLevel, PreservesEffectiveScaleOrCountsClamps) {
  Rng rng(2);
  LodConfig c = lod(4, 0.05, 0.5);  // floors 0.05, 0.1, 0.2, 0
  c.prune_quantile = 0.2;
  std::vector<Gaussian> gs(50);
  for (Gaussian& g : gs) {
    g.level = 1;
    g.log_scale_opt = Vec3(uniform(rng, -5, 0), uniform(rng, -5, 0), uniform(rng, -5, 0));
    g.accumulated_importance = uniform(rng, 0, 10);
  }
  const std::vector<Gaussian> before = gs;
  const LevelReport r = advance_level(gs, c);
  EXPECT_EQ(gs.size(), 40u);
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < gs.size(); ++i) {
    const Vec3 old_eff = effective_scale(before[r.remap.source[i]].log_scale_opt, 1, c);
    const Vec3 new_eff = effective_scale(gs[i].log_scale_opt, 2, c);
    if ((old_eff.array() > min_scale(2, c)).all()) {
      EXPECT_LT(((new_eff - old_eff).array().abs() / old_eff.array()).maxCoeff(), 1e-9);
    } else {
      ++clamped;
    }
  }
  EXPECT_EQ(clamped, r.clamped);
  EXPECT_GT(r.clamped, 0u);
  EXPECT_THROW(advance_level(gs, lod(2)), InvalidInput);
}

TEST(Densify, QuietGradientsAddNothing) {
  LodConfig c = lod(3);
  std::vector<Gaussian> gs(4, blob(0.5, 0.01));
  DensifyStats st;
  st.reset(4);
  for (std::size_t i = 0; i < 4; ++i) {
    st.add(i, 5e-5);
  }
  Rng rng(3);
  const DensifyReport r = densify_and_prune(gs, st, 600, c, 1.0, rng);
  EXPECT_EQ(gs.size(), 4u);
  EXPECT_EQ(r.cloned + r.split, 0u);
}

TEST(Densify, SplitAndClone) {
  LodConfig c = lod(3);
  std::vector<Gaussian> gs{blob(0.5, 0.5), blob(0.5, 0.001)};
  DensifyStats st;
  st.reset(2);
  st.add(0, 1e-3);
  st.add(1, 1e-3);
  Rng rng(4);
  const DensifyReport r = densify_and_prune(gs, st, 600, c, 1.0, rng);
  EXPECT_EQ(r.split, 1u);
  EXPECT_EQ(r.cloned, 1u);
  ASSERT_EQ(gs.size(), 4u);
  EXPECT_EQ(r.remap.source, (std::vector<std::size_t>{0, 0, 1, 1}));
  EXPECT_EQ(r.remap.fresh, (std::vector<std::uint8_t>{1, 1, 0, 1}));
  for (int k = 0; k < 2; ++k) {
    EXPECT_NEAR(effective_scale(gs[k].log_scale_opt, 3, c)[0], 0.5 / 1.6, 1e-12);
  }
  EXPECT_EQ(gs[2].position, gs[3].position);
}

TEST(Densify, OutsideWindowOnlyPrunes) {
  LodConfig c = lod(3);
  std::vector<Gaussian> gs{blob(0.5, 0.5), blob(0.004, 0.1)};
  DensifyStats st;
  st.reset(2);
  st.add(0, 1.0);
  Rng rng(5);
  EXPECT_FALSE(is_densify_iteration(500, c));
  EXPECT_TRUE(is_densify_iteration(600, c));
  EXPECT_FALSE(is_densify_iteration(10200, c));
  const DensifyReport r = densify_and_prune(gs, st, 12000, c, 1.0, rng);
  EXPECT_EQ(r.pruned, 1u);
  EXPECT_EQ(gs.size(), 1u);
}

TEST(Densify, RespectsCapAndKeepsSomething) {
  LodConfig c = lod(3);
  c.max_gaussians = 3;
  std::vector<Gaussian> gs(3, blob(0.5, 0.001));
  DensifyStats st;
  st.reset(3);
  for (std::size_t i = 0; i < 3; ++i) {
    st.add(i, 1.0);
  }
  Rng rng(6);
  densify_and_prune(gs, st, 600, c, 1.0, rng);
  EXPECT_EQ(gs.size(), 3u);
  std::vector<Gaussian> faint{blob(0.001, 0.1), blob(0.002, 0.1)};
  st.reset(2);
  densify_and_prune(faint, st, 12000, c, 1.0, rng);
  ASSERT_EQ(faint.size(), 1u);
  EXPECT_NEAR(faint[0].opacity(), 0.002, 1e-12);
}

TEST(Densify, OpacityResetAndFloorInvariant) {
  LodConfig c = lod(3);
  Rng rng(7);
  std::vector<Gaussian> gs;
  for (int i = 0; i < 30; ++i) {
    gs.push_back(blob(uniform(rng, 0.001, 0.99), 0.01));
  }
  DensifyStats st;
  st.reset(gs.size());
  const DensifyReport r = densify_and_prune(gs, st, c.opacity_reset_at, c, 1.0, rng);
  EXPECT_TRUE(r.opacity_reset);
  for (const Gaussian& g : gs) {
    EXPECT_GE(g.opacity(), c.min_opacity);
    EXPECT_LE(g.opacity(), c.opacity_reset_value + 1e-12);
  }
}

TEST(Importance, AccumulatesAndChecksSize) {
  std::vector<Gaussian> gs(2);
  const std::vector<double> inc{1.5, 0.0};
  accumulate_importance(gs, inc);
  accumulate_importance(gs, inc);
  EXPECT_EQ(gs[0].accumulated_importance, 3.0);
  EXPECT_EQ(gs[1].accumulated_importance, 0.0);
  const std::vector<double> bad{1.0};
  EXPECT_THROW(accumulate_importance(gs, bad), InvalidInput);
}

TEST(Importance, LoneOpaqueSplatCountsCoveredPixels) {
  Splat s;
  s.mean = Vec2(4, 4);
  s.conic = Mat2::Identity() * 1e-8;
  s.opacity = 0.99;
  s.color = Vec3::Ones();
  const std::vector<Splat> splats{s};
  const RasterOutput out = rasterize(splats, 8, 8, Vec3::Zero(), 1);
  EXPECT_NEAR(out.importance[0], 64 * 0.99, 1e-5);
}

TEST(LodConfig, Validation) {
  LodConfig c;
  EXPECT_NO_THROW(c.validate());
  c.rho = 1.0;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = LodConfig{};
  c.prune_quantile = 1.0;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = LodConfig{};
  c.max_level = 0;
  EXPECT_THROW(c.validate(), InvalidInput);
  EXPECT_EQ(level_start(1, 30000, LodConfig{}), 10000);
}

}  // namespace
}  // namespace kgs
