#include "support.hpp"

#include <gtest/gtest.h>

namespace kgs {
namespace {

using test::random_image;

TEST(Psnr, ConstantOffsetIsTwentyDecibels) {
  Rng rng(1);
  const Image a = random_image(20, 10, rng, 0.0, 0.9);
  Image b = a;
  for (double& x : b.data) {
    x += 0.1;
  }
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  EXPECT_THROW(psnr(a, Image(3, 3)), InvalidInput);
}

TEST(Ssim, IdentityAndSymmetry) {
  Rng rng(2);
  const Image a = random_image(17, 13, rng);
  const Image b = random_image(17, 13, rng);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  EXPECT_LT(ssim(a, b), 0.5);
  EXPECT_GE(ssim(a, b), -1.0);
}

TEST(Ssim, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  Image a = random_image(9, 7, rng);
  const Image b = random_image(9, 7, rng);
  Image grad;
  ssim(a, b, &grad);
  const double h = 1e-6;
  for (std::size_t i = 0; i < a.data.size(); i += 5) {
    const double x0 = a.data[i];
    a.data[i] = x0 + h;
    const double up = ssim(a, b);
    a.data[i] = x0 - h;
    const double down = ssim(a, b);
    a.data[i] = x0;
    EXPECT_NEAR(grad.data[i], (up - down) / (2 * h), 1e-8);
  }
}

TEST(ImageLoss, ZeroOnIdentityAndGradientChecks) {
  Rng rng(4);
  Image a = random_image(8, 8, rng);
  const Image b = random_image(8, 8, rng);
  EXPECT_EQ(image_loss(a, a, 0.2), 0.0);
  Image grad;
  image_loss(a, b, 0.2, &grad);
  const double h = 1e-6;
  for (std::size_t i = 0; i < a.data.size(); i += 7) {
    const double x0 = a.data[i];
    a.data[i] = x0 + h;
    const double up = image_loss(a, b, 0.2);
    a.data[i] = x0 - h;
    const double down = image_loss(a, b, 0.2);
    a.data[i] = x0;
    EXPECT_NEAR(grad.data[i], (up - down) / (2 * h), 1e-8);
  }
}

TEST(L1, MeanAbsoluteDifference) {
  Image a(2, 1, 0.5), b(2, 1, 0.25);
  EXPECT_DOUBLE_EQ(l1_loss(a, b), 0.25);
  Image d;
  l1_loss(a, b, &d);
  EXPECT_DOUBLE_EQ(d.data[0], 1.0 / 6.0);
}

TEST(RegLoss, PerSetMeans) {
  const std::vector<Vec3> dx{Vec3(3, 4, 0), Vec3::Zero(), Vec3(0, 0, 2)};
  const std::vector<std::uint8_t> mask{1, 0, 0};
  std::vector<Vec3> d;
  EXPECT_DOUBLE_EQ(reg_loss(dx, mask, &d), 5.0 + 1.0);
  EXPECT_EQ(d[1], Vec3::Zero());
  EXPECT_LT((d[0] - Vec3(0.6, 0.8, 0)).norm(), 1e-15);
  EXPECT_LT((d[2] - Vec3(0, 0, 0.5)).norm(), 1e-15);
  const std::vector<std::uint8_t> none(3, 0);
  EXPECT_DOUBLE_EQ(reg_loss(dx, none), 7.0 / 3.0);
}

TEST(AniLoss, RatioAndGradient) {
  const std::vector<Vec3> s{Vec3(1, 2, 4), Vec3::Constant(0.5)};
  std::vector<Vec3> d;
  const double v = ani_loss(s, 0.0, &d);
  EXPECT_DOUBLE_EQ(v, (4.0 + 1.0) / 2.0);
  EXPECT_DOUBLE_EQ(d[0][2], 0.5);
  EXPECT_DOUBLE_EQ(d[0][0], -0.5 * 4.0);
  EXPECT_DOUBLE_EQ(d[0][1], 0.0);
}

TEST(LossWeights, Validation) {
  LossWeights w;
  EXPECT_NO_THROW(w.validate());
  w.dssim = 1.5;
  EXPECT_THROW(w.validate(), InvalidInput);
}

}  // namespace
}  // namespace kgs
