#include "support.hpp"

#include <gtest/gtest.h>

namespace kgs {
namespace {

TEST(Variance, ConstantSamplesHaveZeroScore) {
  const std::vector<Vec3> s(16, Vec3(0.3, -1.0, 2.0));
  EXPECT_NEAR(deformation_variance(s), 0.0, 1e-30);
}

TEST(Variance, SinusoidMatchesClosedForm) {
  // Stratified samples of A sin(2 pi t) average A^2 / 2 exactly.
  const double a = 0.1;
  std::vector<Vec3> s;
  for (double t : stratified_times(16)) {
    s.emplace_back(a * std::sin(2 * kPi * t), 0.0, 0.0);
  }
  EXPECT_NEAR(deformation_variance(s), a * a / 2.0, 1e-15);
}

TEST(Variance, NeedsTwoSamples) {
  const std::vector<Vec3> one{Vec3::Zero()};
  EXPECT_THROW(deformation_variance(one), InvalidInput);
}

TEST(Classify, StrictThreshold) {
  const std::vector<double> scores{0.0, 2e-5, 2.0000001e-5, 1.0};
  const Partition p = classify(scores, 2e-5);
  EXPECT_EQ(p.dynamic_indices, (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(p.static_indices, (std::vector<std::size_t>{0, 1}));
  EXPECT_NO_THROW(p.validate());
  EXPECT_THROW(classify(scores, -1.0), InvalidInput);
}

TEST(Classify, PartitionIsExhaustiveAndDisjoint) {
  Rng rng(1);
  std::vector<double> scores(200);
  for (double& s : scores) {
    s = test::uniform(rng, 0, 1e-4);
  }
  const Partition p = classify(scores, 5e-5);
  std::vector<int> seen(scores.size(), 0);
  for (std::size_t i : p.dynamic_indices) {
    ++seen[i];
  }
  for (std::size_t i : p.static_indices) {
    ++seen[i];
  }
  EXPECT_EQ(seen, std::vector<int>(scores.size(), 1));
}

TEST(Partition, RemapInheritsParentLabels) {
  const Partition p = classify(std::vector<double>{1.0, 0.0, 1.0}, 0.5);
  const std::vector<std::size_t> source{2, 2, 1, 0};
  const Partition q = remap_partition(p, source);
  EXPECT_EQ(q.dynamic_mask, (std::vector<std::uint8_t>{1, 1, 0, 1}));
  const std::vector<std::size_t> bad{3};
  EXPECT_THROW(remap_partition(p, bad), InvalidInput);
}

TEST(Partition, ValidateCatchesDisagreement) {
  Partition p = all_dynamic(3);
  EXPECT_NO_THROW(p.validate());
  p.static_indices.push_back(1);
  EXPECT_THROW(p.validate(), InvalidInput);
}

TEST(Schedule, FirstThenPeriodic) {
  EXPECT_FALSE(evaluate_partition_schedule(2999));
  EXPECT_TRUE(evaluate_partition_schedule(3000));
  EXPECT_FALSE(evaluate_partition_schedule(4000));
  EXPECT_TRUE(evaluate_partition_schedule(5000));
  EXPECT_TRUE(evaluate_partition_schedule(7000));
  EXPECT_EQ(stratified_times(4), (std::vector<double>{0.125, 0.375, 0.625, 0.875}));
}

TEST(Partition, DumpRoundTrip) {
  const auto dir = test::scratch_dir("partition");
  const Partition p = classify(std::vector<double>{0.1, 3e-7, 0.25}, 1e-5);
  write_partition(dir / "p.txt", p);
  const Partition q = read_partition(dir / "p.txt", 1e-5);
  EXPECT_EQ(q.dynamic_mask, p.dynamic_mask);
  EXPECT_EQ(q.scores, p.scores);
  std::ofstream(dir / "bad.txt") << "0,abc,static\n";
  EXPECT_THROW(read_partition(dir / "bad.txt"), IoError);
  std::ofstream(dir / "bad2.txt") << "0,0.1,moving\n";
  EXPECT_THROW(read_partition(dir / "bad2.txt"), IoError);
  EXPECT_THROW(read_partition(dir / "missing.txt"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Scores, StaticFieldGivesZeroScores) {
  test::GradScene s = test::make_grad_scene(5);
  s.model.field.deform.w2.setZero();
  s.model.field.deform.b2.setZero();
  s.model.field.fine.w2.setZero();
  s.model.field.fine.b2.setZero();
  const auto scores = decomposition_scores(s.model, s.settings, 16);
  for (double v : scores) {
    EXPECT_EQ(v, 0.0);
  }
}

TEST(Scores, TimeVaryingFieldSeparatesAtThreshold) {
  const test::GradScene s = test::make_grad_scene(6);
  const auto scores = decomposition_scores(s.model, s.settings, 16);
  const auto samples = sample_offsets(s.model, s.settings, stratified_times(16));
  for (std::size_t i = 0; i < scores.size(); ++i) {
    EXPECT_GT(scores[i], 0.0);
    EXPECT_NEAR(scores[i], deformation_variance(samples[i]), 1e-15);
  }
}

}  // namespace
}  // namespace kgs
