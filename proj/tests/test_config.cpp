#include "support.hpp"

#include "kgs/optimizer.hpp"

#include <gtest/gtest.h>

namespace kgs {
namespace {

TEST(Config, DefaultsValidate) { EXPECT_NO_THROW(RunConfig{}.validate()); }

TEST(Config, OverlayKnownKeys) {
  RunConfig c;
  apply_config_json(c, R"({"iterations": 12, "kinematics.enabled": false, "lod.exponent_sign": "flod",
                           "kinematics.blur_model": "additive", "render.background": [0.1, 0.2, 0.3],
                           "decomp.tau": 1e-3})");
  EXPECT_EQ(c.iterations, 12);
  EXPECT_FALSE(c.render.kinematic_refinement);
  EXPECT_TRUE(c.render.lod.flod_exponent);
  EXPECT_EQ(c.render.refine.model, BlurModel::additive);
  EXPECT_EQ(c.render.background, Vec3(0.1, 0.2, 0.3));
  EXPECT_DOUBLE_EQ(c.tau, 1e-3);
}

TEST(Config, RejectsUnknownKeysAndBadTypes) {
  RunConfig c;
  EXPECT_THROW(apply_config_json(c, R"({"iteration": 3})"), ConfigError);
  EXPECT_THROW(apply_config_json(c, R"({"iterations": "many"})"), ConfigError);
  EXPECT_THROW(apply_config_json(c, R"({"iterations": 1.5})"), ConfigError);
  EXPECT_THROW(apply_config_json(c, R"({"kinematics.blur_model": "box"})"), ConfigError);
  EXPECT_THROW(apply_config_json(c, R"([1, 2])"), ConfigError);
}

TEST(Config, ParseErrorsCarryLineAndColumn) {
  RunConfig c;
  try {
    apply_config_json(c, "{\n  \"seed\": 1,\n  \"batch\": ,\n}", "run.json");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.json:3:"), std::string::npos) << e.what();
  }
  EXPECT_EQ(line_column("ab\ncd", 4), std::make_pair(2, 2));
}

TEST(Config, RoundTripThroughJson) {
  RunConfig c;
  apply_config_json(c, R"({"seed": 42, "lod.max_level": 4, "loss.lambda_reg": 0.5, "noise.k_max": 777})");
  RunConfig d;
  apply_config_json(d, config_to_json(c));
  EXPECT_EQ(config_to_json(c), config_to_json(d));
  EXPECT_EQ(d.seed, 42u);
  EXPECT_EQ(d.render.lod.max_level, 4);
}

TEST(Config, EveryKeyIsEmitted) {
  const std::string json = config_to_json(RunConfig{});
  for (const std::string& k : config_keys()) {
    EXPECT_NE(json.find("\"" + k + "\""), std::string::npos) << k;
  }
}

TEST(Config, ValidationNamesTheKey) {
  RunConfig c;
  c.batch = 0;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
  }
  RunConfig d;
  d.render.lod.rho = 2.0;
  EXPECT_THROW(d.validate(), ConfigError);
}

TEST(Config, LoadMissingFileIsIoError) { EXPECT_THROW(load_config("/nonexistent/kgs.json"), IoError); }

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"configs/rolldice-lite.json", "configs/decomp-100.json"}) {
    EXPECT_NO_THROW(load_config(std::filesystem::path(KGS_SOURCE_DIR) / name).validate()) << name;
  }
}

TEST(Ablation, Variants) {
  RunConfig c;
  apply_ablation(c, "no-kr");
  EXPECT_FALSE(c.render.kinematic_refinement);
  apply_ablation(c, "no-cf");
  EXPECT_FALSE(c.field.coarse_to_fine);
  apply_ablation(c, "no-lreg");
  EXPECT_EQ(c.loss.reg, 0.0);
  apply_ablation(c, "no-lani");
  EXPECT_EQ(c.loss.ani, 0.0);
  apply_ablation(c, "tau=3e-4");
  EXPECT_DOUBLE_EQ(c.tau, 3e-4);
  EXPECT_THROW(apply_ablation(c, "tau=abc"), ConfigError);
  EXPECT_THROW(apply_ablation(c, "tau=-1"), ConfigError);
  EXPECT_THROW(apply_ablation(c, "no-everything"), ConfigError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  VecX p = VecX::Zero(3), m = VecX::Zero(3), v = VecX::Zero(3);
  const VecX g = (VecX(3) << 2.0, -0.5, 0.0).finished();
  const VecX lr = VecX::Constant(3, 0.1);
  adam_update(AdamConfig{}, 1, p, g, lr, m, v);
  EXPECT_NEAR(p[0], -0.1, 1e-12);
  EXPECT_NEAR(p[1], 0.1, 1e-12);
  EXPECT_EQ(p[2], 0.0);
  EXPECT_THROW(adam_update(AdamConfig{}, 0, p, g, lr, m, v), InvalidInput);
}

TEST(Adam, MinimizesQuadratic) {
  VecX p = VecX::Constant(2, 3.0), m = VecX::Zero(2), v = VecX::Zero(2);
  const VecX lr = VecX::Constant(2, 0.05);
  for (int k = 1; k <= 2000; ++k) {
    adam_update(AdamConfig{}, k, p, 2.0 * p, lr, m, v);
  }
  EXPECT_LT(p.norm(), 1e-2);
}

TEST(Adam, ExponentialLearningRate) {
  EXPECT_DOUBLE_EQ(exponential_lr(1e-2, 1e-4, 0, 100), 1e-2);
  EXPECT_NEAR(exponential_lr(1e-2, 1e-4, 50, 100), 1e-3, 1e-15);
  EXPECT_NEAR(exponential_lr(1e-2, 1e-4, 500, 100), 1e-4, 1e-18);
}

}  // namespace
}  // namespace kgs
