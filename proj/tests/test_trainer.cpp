#include "support.hpp"

#include "kgs/checkpoint.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

namespace kgs {
namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Dataset small_dataset(const std::string& preset, int frames) {
  SceneSpec s = make_preset(preset, 0);
  s.frame_count = frames;
  return synthesize(s);
}

RunConfig short_config(std::int64_t iterations) {
  RunConfig c;
  c.iterations = iterations;
  c.field.hidden = 16;
  c.field.feature_dim = 4;
  c.render.lod.densify_from = 2;
  c.render.lod.densify_interval = 3;
  c.render.lod.opacity_reset_at = 7;
  c.decomp.first = 5;
  c.decomp.period = 4;
  c.field.neighbor_refresh = 6;
  return c;
}

TEST(Packing, RoundTrip) {
  Gaussian g;
  g.position = Vec3(1, 2, 3);
  g.rotation = Vec4(0.5, 0.5, 0.5, 0.5);
  g.log_scale_opt = Vec3(-1, -2, -3);
  g.opacity_logit = 0.3;
  g.color = Vec3(0.1, 0.2, 0.3);
  g.feature = VecX::LinSpaced(4, 0, 1);
  Gaussian h;
  h.feature = VecX::Zero(4);
  unpack_gaussian(pack_gaussian(g), h);
  EXPECT_EQ(pack_gaussian(h), pack_gaussian(g));
}

TEST(Setup, SceneExtent) {
  const std::vector<Vec3> pts{Vec3(-1, 0, 0), Vec3(1, 0, 0)};
  EXPECT_DOUBLE_EQ(scene_extent(pts), 1.1);
}

TEST(Setup, InitialModelIsDeterministic) {
  const SceneSpec s = make_preset("rolldice-lite", 0);
  const RunConfig c = short_config(10);
  const TrainState a = initialize(c, s), b = initialize(c, s);
  ASSERT_EQ(a.model.size(), s.primitives.size());
  for (std::size_t i = 0; i < a.model.size(); ++i) {
    EXPECT_EQ(pack_gaussian(a.model.gaussians[i]), pack_gaussian(b.model.gaussians[i]));
    EXPECT_EQ(a.model.gaussians[i].level, 1);
  }
  EXPECT_EQ(a.model.partition.dynamic_indices.size(), a.model.size());
}

TEST(Oracle, StaticSceneReachesFortyDecibels) {
  const Dataset d = small_dataset("static-lite", 16);
  const RunConfig c;
  const Model m = oracle_model(c, d.spec);
  const EvalResult r = evaluate(m, c, d);
  ASSERT_EQ(r.frames.size(), 2u);
  EXPECT_GE(r.mean_psnr, 40.0);
  EXPECT_THROW(oracle_model(c, make_preset("decomp-100", 0)), InvalidInput);
}

TEST(Training, LossDecreasesOnStaticScene) {
  const Dataset d = small_dataset("static-lite", 16);
  RunConfig c = short_config(60);
  TrainState st = initialize(c, d.spec);
  const auto frames = training_frames(d);
  const RenderSettings rs = make_render_settings(c, d.frame_interval());
  double first = 0.0, last = 0.0;
  for (int k = 0; k < 60; ++k) {
    const IterationRecord r = train_step(st, c, rs, frames);
    (k < 10 ? first : last) += k < 10 || k >= 50 ? r.loss.total : 0.0;
  }
  EXPECT_LT(last, first);
  EXPECT_EQ(st.iteration, 60);
}

TEST(Training, NonFiniteLossLeavesModelUntouched) {
  const Dataset d = small_dataset("static-lite", 8);
  RunConfig c = short_config(10);
  TrainState st = initialize(c, d.spec);
  st.model.gaussians[0].color = Vec3::Constant(std::nan(""));
  const TrainState before = st;
  const auto frames = training_frames(d);
  EXPECT_THROW(train_step(st, c, make_render_settings(c, d.frame_interval()), frames), NumericalError);
  EXPECT_EQ(st.iteration, before.iteration);
  EXPECT_EQ(pack_gaussian(st.model.gaussians[1]), pack_gaussian(before.model.gaussians[1]));
  EXPECT_EQ(st.gaussian_m, before.gaussian_m);
}

TEST(Training, AbortWritesCheckpoint) {
  const Dataset d = small_dataset("static-lite", 8);
  RunConfig c = short_config(5);
  TrainState st = initialize(c, d.spec);
  st.model.gaussians[0].opacity_logit = std::numeric_limits<double>::infinity();
  st.model.gaussians[0].color = Vec3::Constant(std::nan(""));
  const auto dir = test::scratch_dir("abort");
  TrainOptions opt;
  opt.out_dir = dir;
  EXPECT_THROW(run_training(st, c, d, opt), NumericalError);
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint_abort"));
  std::filesystem::remove_all(dir);
}

TEST(Training, LogsHaveHeaderAndOneRowPerIteration) {
  const Dataset d = small_dataset("rolldice-lite", 9);
  RunConfig c = short_config(12);
  TrainState st = initialize(c, d.spec);
  const auto dir = test::scratch_dir("logs");
  TrainOptions opt;
  opt.out_dir = dir;
  run_training(st, c, d, opt);
  const std::string log = slurp(dir / "train_log.csv");
  EXPECT_EQ(log.rfind("iteration,loss,l_img,l_reg,l_ani,psnr,gaussians,dynamic\n", 0), 0u);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 13);
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint_final"));
  EXPECT_TRUE(std::filesystem::exists(dir / "train_timing.csv"));
  std::filesystem::remove_all(dir);
}

TEST(Training, DecompositionOnDensifyIterationSeesFreshNeighbors) {
  const Dataset d = small_dataset("rolldice-lite", 9);
  RunConfig c = short_config(9);
  c.render.lod.densify_from = 8;
  ASSERT_TRUE(is_densify_iteration(9, c.render.lod));
  ASSERT_TRUE(evaluate_partition_schedule(9, c.decomp));
  TrainState st = initialize(c, d.spec);
  // Transparent primitives at the end of the list are pruned on iteration 9.
  const std::size_t n = st.model.size();
  for (std::size_t i = n - 4; i < n; ++i) {
    st.model.gaussians[i].opacity_logit = -20.0;
  }
  const auto frames = training_frames(d);
  const RenderSettings rs = make_render_settings(c, d.frame_interval());
  for (int k = 0; k < 9; ++k) {
    ASSERT_NO_THROW(train_step(st, c, rs, frames)) << "iteration " << k + 1;
  }
  EXPECT_NE(st.model.size(), n);
  EXPECT_NO_THROW(st.model.validate());
}

TEST(Training, ThreadCountDoesNotChangeTrajectory) {
  const Dataset d = small_dataset("rolldice-lite", 9);
  std::string logs[2];
  for (int i = 0; i < 2; ++i) {
    RunConfig c = short_config(15);
    c.threads = i == 0 ? 1 : 5;
    TrainState st = initialize(c, d.spec);
    std::ostringstream out;
    TrainOptions opt;
    opt.write_logs = false;
    opt.on_iteration = [&](const IterationRecord& r) { write_train_log_row(out, r); };
    run_training(st, c, d, opt);
    logs[i] = out.str();
  }
  EXPECT_EQ(logs[0], logs[1]);
}

TEST(Checkpoint, SaveLoadIsExact) {
  const Dataset d = small_dataset("rolldice-lite", 9);
  RunConfig c = short_config(9);
  TrainState st = initialize(c, d.spec);
  const auto frames = training_frames(d);
  const RenderSettings rs = make_render_settings(c, d.frame_interval());
  for (int k = 0; k < 9; ++k) {
    train_step(st, c, rs, frames);
  }
  const auto dir = test::scratch_dir("ckpt");
  save_checkpoint(dir / "a", st, c);
  const Checkpoint ck = load_checkpoint(dir / "a");
  save_checkpoint(dir / "b", ck.state, ck.config);
  EXPECT_EQ(slurp(dir / "a"), slurp(dir / "b"));
  EXPECT_EQ(config_to_json(ck.config), config_to_json(c));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, ResumeContinuesBitExactly) {
  const Dataset d = small_dataset("rolldice-lite", 9);
  RunConfig c = short_config(16);
  const auto frames = training_frames(d);
  const RenderSettings rs = make_render_settings(c, d.frame_interval());
  TrainState straight = initialize(c, d.spec);
  std::ostringstream a, b;
  for (int k = 0; k < 16; ++k) {
    write_train_log_row(a, train_step(straight, c, rs, frames));
  }
  TrainState half = initialize(c, d.spec);
  for (int k = 0; k < 8; ++k) {
    write_train_log_row(b, train_step(half, c, rs, frames));
  }
  const auto dir = test::scratch_dir("resume");
  save_checkpoint(dir / "mid", half, c);
  Checkpoint ck = load_checkpoint(dir / "mid");
  for (int k = 0; k < 8; ++k) {
    write_train_log_row(b, train_step(ck.state, ck.config, rs, frames));
  }
  EXPECT_EQ(a.str(), b.str());
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, CorruptionIsIoError) {
  const Dataset d = small_dataset("static-lite", 8);
  RunConfig c = short_config(1);
  const TrainState st = initialize(c, d.spec);
  const auto dir = test::scratch_dir("corrupt");
  save_checkpoint(dir / "ok", st, c);
  std::string bytes = slurp(dir / "ok");
  std::ofstream(dir / "short", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(load_checkpoint(dir / "short"), IoError);
  bytes[0] = 'X';
  std::ofstream(dir / "magic", std::ios::binary) << bytes;
  EXPECT_THROW(load_checkpoint(dir / "magic"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "missing"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Evaluate, UsesHeldOutSharpFrames) {
  const Dataset d = small_dataset("static-lite", 16);
  const auto held = held_out_frames(d);
  ASSERT_EQ(held.size(), 2u);
  EXPECT_EQ(held[0].index, 0);
  EXPECT_EQ(held[1].index, 8);
  EXPECT_EQ(training_frames(d).size(), 14u);
}

}  // namespace
}  // namespace kgs
