#include <gtest/gtest.h>

#include <random>

#include "mivb/inversion_deepdream.hpp"
#include "test_support.hpp"

using namespace mivb;

TEST(Octaves, PyramidSizes) {
  auto img = ImageTensor::uniform(32, 32, 3, 77);
  auto p = build_octave_pyramid(img, 4, 2);
  ASSERT_EQ(p.size(), 4u);
  const int expect[] = {4, 8, 16, 32};
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(p[k].height(), expect[k]);
    EXPECT_EQ(p[k].width(), expect[k]);
    EXPECT_EQ(p[k], ImageTensor::uniform(expect[k], expect[k], 3, 77));
  }
  auto one = build_octave_pyramid(img, 1, 2);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0], img);
  EXPECT_THROW(build_octave_pyramid(img, 5, 2), ConfigError);
  EXPECT_THROW(build_octave_pyramid(img, 2, 1.0), ConfigError);
}

TEST(DreamStep, UniformGradientGivesUnitSteps) {
  std::vector<double> w(2 * 2 * 3, 0.37);
  auto m = fixtures::linear_model<double>(2, 3, {std::vector<double>(12, 0.0), w}, {0, 0});
  auto x = ImageTensor::uniform(2, 2, 3, 128);
  auto r = dream_step(m, x, 1, 2.5, 0.0);
  EXPECT_FALSE(r.skipped);
  EXPECT_EQ(r.image, ImageTensor::uniform(2, 2, 3, 130.5f));
  // Negative uniform gradient steps down by exactly lr.
  for (auto& v : w) v = -4;
  auto n = fixtures::linear_model<double>(2, 3, {std::vector<double>(12, 0.0), w}, {0, 0});
  EXPECT_EQ(dream_step(n, x, 1, 2.5, 0.0).image, ImageTensor::uniform(2, 2, 3, 125.5f));
}

TEST(DreamStep, ZeroGradientIsSkipped) {
  auto m = fixtures::constant_model<double>();
  auto x = ImageTensor::uniform(8, 8, 3, 90);
  auto r = dream_step(m, x, 0, 3.0, 5.0);
  EXPECT_TRUE(r.skipped);
  EXPECT_EQ(r.image, x);
}

TEST(DreamStep, SmoothnessTermFlattensACheckerboard) {
  auto m = fixtures::constant_model<double>(4, 1, 2);
  std::vector<float> px(16);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) px[y * 4 + x] = ((x + y) % 2) ? 200.0f : 50.0f;
  ImageTensor board(4, 4, 1, px);
  auto r = dream_step(m, board, 0, 5.0, 1.0);
  EXPECT_LT(total_variation(r.image), total_variation(board));
  // Top-left is dark with two bright neighbours: it must rise.
  EXPECT_GT(r.image.at(0, 0, 0), board.at(0, 0, 0));
}

TEST(Multiscale, ZeroStepsKeepGrayInit) {
  auto m = build_model<double>(fixtures::small_cnn_config(32, 3, 4), 1);
  DreamConfig cfg;
  cfg.steps_per_octave = 0;
  auto r = invert_class_multiscale(m, cfg);
  EXPECT_EQ(r.result.image, ImageTensor::uniform(32, 32, 3, 128));
  EXPECT_EQ(r.result.iterations_run, 0);
}

TEST(Multiscale, SingleOctaveMatchesPlainNormalizedLoop) {
  auto m = build_model<double>(fixtures::small_cnn_config(16, 3, 4), 2);
  DreamConfig cfg;
  cfg.octaves = 1;
  cfg.outer_iterations = 1;
  cfg.tv_weight = 0.3;
  cfg.init.mode = InitMode::random;
  cfg.seed = 3;
  auto r = invert_class_multiscale(m, cfg);
  ImageTensor x = make_init_image(cfg.init, 16, 16, 3, cfg.seed);
  for (int s = 0; s < 10; ++s) x = dream_step(m, x, cfg.target_class, cfg.lr, *cfg.tv_weight).image;
  EXPECT_EQ(r.result.image, x);
  EXPECT_EQ(r.result.iterations_run, 10);
}

TEST(Multiscale, PaperSettingsTakeTwoHundredSteps) {
  auto m = build_model<double>(fixtures::small_cnn_config(32, 3, 2), 4);
  DreamConfig cfg;
  cfg.target_class = 5;
  cfg.keep_octave_images = true;
  EXPECT_EQ(cfg.total_steps(), 200);
  auto r = invert_class_multiscale(m, cfg);
  EXPECT_EQ(r.result.iterations_run, 200);
  EXPECT_EQ(r.result.trajectory.size(), 200u);
  ASSERT_EQ(r.octave_images.size(), 4u);
  EXPECT_EQ(r.octave_images[0].height(), 4);
  EXPECT_EQ(r.octave_images[3].height(), 32);
  ASSERT_TRUE(r.result.tv_weight_used.has_value());
  EXPECT_GT(*r.result.tv_weight_used, 0.0);
  EXPECT_GT(r.result.final_activation, r.result.initial_activation);
}

TEST(Multiscale, StrongSmoothingLowersTotalVariation) {
  auto m = build_model<double>(fixtures::small_cnn_config(16, 3, 4), 5);
  int lower = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    DreamConfig cfg;
    cfg.octaves = 2;
    cfg.outer_iterations = 2;
    cfg.init.mode = InitMode::random;
    cfg.seed = seed;
    cfg.target_class = static_cast<int>(seed);
    cfg.tv_weight = 0.0;
    const double tv0 = total_variation(invert_class_multiscale(m, cfg).result.image);
    cfg.tv_weight = 1e3;
    const double tv1 = total_variation(invert_class_multiscale(m, cfg).result.image);
    lower += tv1 < tv0;
  }
  EXPECT_EQ(lower, 5);
}
