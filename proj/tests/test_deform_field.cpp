#include "support.hpp"

#include <gtest/gtest.h>

namespace kgs {
namespace {

using test::normal;
using test::uniform;

TEST(PositionalEncoding, InterleavedSinCos) {
  const VecX e = positional_encoding(0.25, 3);
  ASSERT_EQ(e.size(), 6);
  for (int l = 0; l < 3; ++l) {
    const double a = std::pow(2.0, l) * kPi * 0.25;
    EXPECT_DOUBLE_EQ(e[2 * l], std::sin(a));
    EXPECT_DOUBLE_EQ(e[2 * l + 1], std::cos(a));
  }
  EXPECT_THROW(positional_encoding(0.3, 0), InvalidInput);
}

TEST(Offsets, PackRoundTrip) {
  DeformationOffsets o{Vec3(1, 2, 3), Vec3(4, 5, 6), Vec3(7, 8, 9)};
  EXPECT_EQ(DeformationOffsets::unpack(o.pack()), o);
}

TEST(Mlp, ZeroOutputHeadPredictsZero) {
  Rng rng(1);
  const Mlp m = Mlp::create(5, 7, 9, rng);
  EXPECT_EQ(m.parameter_count(), 5u * 7 + 7 + 7 * 9 + 9);
  EXPECT_EQ(m.forward(VecX::Ones(5)), VecX::Zero(9));
}

TEST(Mlp, FlattenAssignRoundTrip) {
  Rng rng(2);
  Mlp m = Mlp::create(4, 6, 3, rng, false);
  const VecX flat = m.flatten();
  Mlp z = m.zeros_like();
  EXPECT_EQ(z.flatten(), VecX::Zero(flat.size()));
  z.assign(flat);
  EXPECT_EQ(z.flatten(), flat);
  z += m;
  EXPECT_EQ(z.flatten(), 2.0 * flat);
  EXPECT_THROW(z.assign(VecX::Zero(3)), InvalidInput);
}

TEST(Mlp, BatchMatchesSingleSample) {
  Rng rng(3);
  const Mlp m = Mlp::create(6, 10, 4, rng, false);
  MatX x(6, 5);
  test::fill_uniform(x, rng, 2.0);
  MatX hidden;
  const MatX y = m.forward_batch(x, &hidden);
  MatX d(4, 5);
  test::fill_uniform(d, rng, 1.0);
  Mlp g_batch = m.zeros_like(), g_single = m.zeros_like();
  MatX dx;
  m.backward_batch(x, hidden, d, g_batch, &dx);
  for (int c = 0; c < 5; ++c) {
    Mlp::Cache cache;
    const VecX yc = m.forward(x.col(c), &cache);
    EXPECT_LT((yc - y.col(c)).norm(), 1e-12);
    VecX dxc;
    m.backward(cache, d.col(c), g_single, &dxc);
    EXPECT_LT((dxc - dx.col(c)).norm(), 1e-12);
  }
  EXPECT_LT((g_batch.flatten() - g_single.flatten()).norm(), 1e-11);
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
  Rng rng(4);
  Mlp m = Mlp::create(5, 8, 3, rng, false);
  const VecX x = VecX::Random(5);
  const VecX w = VecX::Random(3);
  Mlp::Cache cache;
  m.forward(x, &cache);
  Mlp grad = m.zeros_like();
  VecX dx;
  m.backward(cache, w, grad, &dx);
  VecX flat = m.flatten();
  const VecX g = grad.flatten();
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < flat.size(); ++k) {
    const double x0 = flat[k];
    flat[k] = x0 + h;
    m.assign(flat);
    const double up = m.forward(x).dot(w);
    flat[k] = x0 - h;
    m.assign(flat);
    const double down = m.forward(x).dot(w);
    flat[k] = x0;
    m.assign(flat);
    EXPECT_NEAR(g[k], (up - down) / (2 * h), 1e-7);
  }
  for (int k = 0; k < 5; ++k) {
    VecX xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    EXPECT_NEAR(dx[k], (m.forward(xp).dot(w) - m.forward(xm).dot(w)) / (2 * h), 1e-7);
  }
}

TEST(NoiseSchedule, WarmupDecayAndEndpoint) {
  NoiseSchedule s;
  EXPECT_NEAR(noise_sigma(s, 0), s.w_delay * s.sigma_init, 1e-15);
  EXPECT_EQ(noise_sigma(s, s.k_max), s.sigma_final);
  EXPECT_EQ(noise_sigma(s, s.k_max + 5000), s.sigma_final);
  for (std::int64_t k = 0; k < s.k_delay; ++k) {
    EXPECT_LE(noise_sigma(s, k), s.sigma_init);
  }
  for (std::int64_t k = s.k_delay + 1; k <= s.k_max; ++k) {
    EXPECT_LE(noise_sigma(s, k), noise_sigma(s, k - 1));
  }
  NoiseSchedule bad;
  bad.sigma_final = 1.0;
  EXPECT_THROW(bad.validate(), InvalidInput);
  bad = NoiseSchedule{};
  bad.k_delay = bad.k_max + 1;
  EXPECT_THROW(bad.validate(), InvalidInput);
}

TEST(FieldParams, DimensionsFollowConfig) {
  Rng rng(5);
  FieldConfig cfg;
  cfg.time_bands = 3;
  cfg.position_bands = 2;
  cfg.feature_dim = 5;
  const FieldParams p = FieldParams::create(cfg, 4.0, rng);
  EXPECT_EQ(p.deform.input_dim(), 6 * 2 + 4 + 3 + 6);
  EXPECT_EQ(p.fine.input_dim(), 5 + 6);
  EXPECT_EQ(p.deform.output_dim(), 9);
  EXPECT_DOUBLE_EQ(p.position_scale, 0.25);
  EXPECT_DOUBLE_EQ(p.max_dx, 4.0);
}

TEST(DeformInput, NoiseOnlyTouchesTimeEncoding) {
  Rng rng(6);
  const FieldParams p = FieldParams::create(FieldConfig{}, 1.0, rng);
  const Vec3 pos(0.1, 0.2, 0.3);
  const Vec4 q(2, 0, 0, 0);
  const VecX clean = deform_input(p, pos, q, Vec3::Zero(), 0.4);
  std::vector<double> noise(2 * p.time_bands, 0.5);
  const VecX noisy = deform_input(p, pos, q, Vec3::Zero(), 0.4, noise);
  const int head = p.deform_input_dim() - 2 * p.time_bands;
  EXPECT_EQ(clean.head(head), noisy.head(head));
  EXPECT_LT((noisy.tail(2 * p.time_bands) - clean.tail(2 * p.time_bands) - VecX::Constant(2 * p.time_bands, 0.5))
                .norm(),
            1e-15);
  EXPECT_EQ(clean.segment<4>(6 * p.position_bands), Vec4(1, 0, 0, 0));
}

TEST(DeformInput, BackwardMatchesFiniteDifferences) {
  Rng rng(7);
  const FieldParams p = FieldParams::create(FieldConfig{}, 2.0, rng);
  const Vec3 pos(0.3, -0.2, 1.1);
  const Vec4 q = test::random_quaternion(rng) * 1.7;
  VecX w(p.deform_input_dim());
  test::fill_uniform(w, rng, 1.0);
  const DeformInputGrad g = deform_input_backward(p, pos, q, w);
  const double h = 1e-6;
  for (int c = 0; c < 3; ++c) {
    Vec3 a = pos, b = pos;
    a[c] += h;
    b[c] -= h;
    const double num = (deform_input(p, a, q, Vec3::Zero(), 0.3).dot(w) - deform_input(p, b, q, Vec3::Zero(), 0.3).dot(w)) / (2 * h);
    EXPECT_NEAR(g.d_position[c], num, 1e-6);
  }
  for (int c = 0; c < 4; ++c) {
    Vec4 a = q, b = q;
    a[c] += h;
    b[c] -= h;
    const double num = (deform_input(p, pos, a, Vec3::Zero(), 0.3).dot(w) - deform_input(p, pos, b, Vec3::Zero(), 0.3).dot(w)) / (2 * h);
    EXPECT_NEAR(g.d_rotation[c], num, 1e-6);
  }
  const int log_scale_at = 6 * p.position_bands + 4;
  EXPECT_EQ(g.d_log_scale, w.segment<3>(log_scale_at));
}

TEST(CoarseToFine, CoarseIsNeighborMean) {
  std::vector<DeformationOffsets> all(4);
  for (int i = 0; i < 4; ++i) {
    all[i].dx = Vec3::Constant(i);
    all[i].ds = Vec3::Constant(-i);
  }
  const std::vector<std::uint32_t> nb{1, 3};
  const DeformationOffsets c = coarse_deform(0, nb, all);
  EXPECT_EQ(c.dx, Vec3::Constant(2.0));
  EXPECT_EQ(c.ds, Vec3::Constant(-2.0));
  EXPECT_EQ(coarse_deform(2, {}, all), all[2]);
  const DeformationOffsets f{Vec3::Ones(), Vec3::Ones(), Vec3::Ones()};
  EXPECT_EQ(compose_deformation(c, f).dx, Vec3::Constant(3.0));
}

TEST(CoarseToFine, FineHeadStartsAtZero) {
  Rng rng(8);
  const FieldParams p = FieldParams::create(FieldConfig{}, 1.0, rng);
  EXPECT_EQ(fine_deform(p, VecX::Ones(p.feature_dim), 0.7), DeformationOffsets{});
}

TEST(Clamp, NormAndBoxLimits) {
  Rng rng(9);
  FieldParams p = FieldParams::create(FieldConfig{}, 1.0, rng);
  p.max_dx = 0.5;
  p.max_dr = 1.0;
  p.max_ds = 2.0;
  const DeformationOffsets o{Vec3(3, 4, 0), Vec3(0, 0, 0.5), Vec3(-3, 1, 2.5)};
  const DeformationOffsets c = clamp_offsets(p, o);
  EXPECT_NEAR(c.dx.norm(), 0.5, 1e-15);
  EXPECT_LT((c.dx.normalized() - o.dx.normalized()).norm(), 1e-15);
  EXPECT_EQ(c.dr, o.dr);
  EXPECT_EQ(c.ds, Vec3(-2, 1, 2));
  const DeformationOffsets up{Vec3(1, 0, 0), Vec3(1, 1, 1), Vec3(1, 1, 1)};
  const DeformationOffsets d = clamp_offsets_backward(p, o, up);
  EXPECT_EQ(d.dr, up.dr);
  EXPECT_EQ(d.ds, Vec3(0, 1, 0));
  const double h = 1e-7;
  for (int k = 0; k < 3; ++k) {
    DeformationOffsets a = o, b = o;
    a.dx[k] += h;
    b.dx[k] -= h;
    EXPECT_NEAR(d.dx[k], (clamp_offsets(p, a).dx.x() - clamp_offsets(p, b).dx.x()) / (2 * h), 1e-7);
  }
}

TEST(PredictOffsets, NoiseFreeIsDeterministic) {
  Rng rng(10);
  FieldParams p = FieldParams::create(FieldConfig{}, 1.0, rng);
  test::fill_uniform(p.deform.w2, rng, 0.1);
  Gaussian g;
  g.position = Vec3(0.1, 0.2, 0.3);
  Rng a(1), b(2);
  const DeformationOffsets x = predict_offsets(p, g, Vec3::Constant(0.1), 0.5, 0.0, a);
  const DeformationOffsets y = predict_offsets(p, g, Vec3::Constant(0.1), 0.5, 0.0, b);
  EXPECT_EQ(x, y);
  EXPECT_NE(predict_offsets(p, g, Vec3::Constant(0.1), 0.5, 0.1, a), x);
}

}  // namespace
}  // namespace kgs
