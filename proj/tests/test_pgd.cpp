#include <gtest/gtest.h>

#include <random>

#include "mivb/inversion_pgd.hpp"
#include "test_support.hpp"

using namespace mivb;

namespace {

ImageTensor from_values(int h, int w, int c, std::vector<float> v) { return ImageTensor(h, w, c, std::move(v)); }

}  // namespace

TEST(PgdStep, ZeroGradientIsAFixedPoint) {
  auto m = fixtures::constant_model<double>();
  std::mt19937_64 rng(1);
  auto x = fixtures::random_image(8, 8, 3, rng);
  EXPECT_EQ(pgd_step(m, x, 4, 10.0), x);
}

TEST(PgdStep, ClipBindsAtTheTop) {
  auto m = fixtures::linear_model<double>(2, 1, {{0, 0, 0, 0}, {1, 2, 3, 4}}, {0, 0});
  auto x = ImageTensor::uniform(2, 2, 1, 255);
  EXPECT_EQ(pgd_step(m, x, 1, 5.0), x);
}

TEST(PgdStep, LinearToyHandComputation) {
  // f = w . x, X = 128, lr = 1: X' = clip(128 + w).
  auto m = fixtures::linear_model<double>(2, 1, {{0, 0, 0, 0}, {10, -20, 200, -150}}, {0, 0});
  auto out = pgd_step(m, ImageTensor::uniform(2, 2, 1, 128), 1, 1.0);
  EXPECT_EQ(out, from_values(2, 2, 1, {138, 108, 255, 0}));
}

TEST(PgdStep, RandomStepsNeverLeaveThePixelRange) {
  std::mt19937_64 rng(2);
  auto m = build_model<double>(fixtures::small_cnn_config(8, 3, 4), 3);
  std::uniform_real_distribution<double> lr(0.0, 1e4);
  std::uniform_int_distribution<int> cls(0, 9);
  auto x = fixtures::random_image(8, 8, 3, rng);
  for (int i = 0; i < 1000; ++i) {
    x = pgd_step(m, x, cls(rng), lr(rng));
    for (float v : x.pixels()) ASSERT_TRUE(v >= 0 && v <= 255);
    if (i % 100 == 0) x = fixtures::random_image(8, 8, 3, rng);
  }
}

TEST(InvertClass, ConstantModelLeavesTheInitUnchanged) {
  auto m = fixtures::constant_model<double>();
  PgdInversionConfig cfg;
  cfg.max_iterations = 20;
  cfg.target_class = 3;
  auto r = invert_class(m, cfg);
  EXPECT_EQ(r.image, ImageTensor::uniform(8, 8, 3, 128));
  EXPECT_FALSE(r.iterations_to_target.has_value());
  EXPECT_EQ(r.trajectory.size(), 20u);
}

TEST(InvertClass, TinyStepIsStationary) {
  auto m = build_model<double>(fixtures::small_cnn_config(8, 3, 4), 4);
  PgdInversionConfig cfg;
  cfg.lr = 1e-6;
  cfg.max_iterations = 10;
  cfg.init.mode = InitMode::random;
  cfg.seed = 5;
  auto r = invert_class(m, cfg);
  auto init = make_init_image(cfg.init, 8, 8, 3, cfg.seed);
  for (std::size_t i = 0; i < init.size(); ++i) EXPECT_LE(std::abs(r.image[i] - init[i]), 1.0f);
}

TEST(InvertClass, IterationsToTargetOnALinearModel) {
  // logit0 = 0, logit1 = sum(x) - 520. From gray 128: logit1 = -8. The
  // calibrated lr is 1 (max |w| = 1), so each step adds 4 to logit1; the tie
  // at t = 2 goes to class 0, so the target is first predicted at t = 3.
  auto m = fixtures::linear_model<double>(2, 1, {{0, 0, 0, 0}, {1, 1, 1, 1}}, {0, -520});
  PgdInversionConfig cfg;
  cfg.target_class = 1;
  cfg.max_iterations = 6;
  auto r = invert_class(m, cfg);
  EXPECT_DOUBLE_EQ(r.lr_used, 1.0);
  ASSERT_TRUE(r.iterations_to_target.has_value());
  EXPECT_EQ(*r.iterations_to_target, 3);
  EXPECT_DOUBLE_EQ(r.initial_activation, -8.0);
  EXPECT_DOUBLE_EQ(r.final_activation, 16.0);
  ASSERT_EQ(r.trajectory.size(), 6u);
  EXPECT_EQ(r.trajectory.front().iteration, 1);
  EXPECT_DOUBLE_EQ(r.trajectory.front().activation, -4.0);
}

TEST(InvertClass, AscentImprovesActivationAndIsDeterministic) {
  auto m = build_model<double>(fixtures::small_cnn_config(8, 3, 6), 6);
  PgdInversionConfig cfg;
  cfg.max_iterations = 30;
  cfg.target_class = 2;
  auto a = invert_class(m, cfg);
  auto b = invert_class(m, cfg);
  EXPECT_EQ(a.image, b.image);
  double best = -1e300;
  for (const auto& p : a.trajectory) best = std::max(best, p.activation);
  EXPECT_GE(best, a.initial_activation);
  EXPECT_GT(a.lr_used, 0.0);
}

TEST(InvertClass, CalibratedFirstStepMovesOnePixel) {
  auto m = build_model<double>(fixtures::small_cnn_config(8, 3, 6), 7);
  PgdInversionConfig cfg;
  cfg.max_iterations = 1;
  auto r = invert_class(m, cfg);
  double mx = 0;
  for (float v : r.image.pixels()) mx = std::max(mx, std::abs(v - 128.0));
  EXPECT_NEAR(mx, 1.0, 1e-5);
}

TEST(InvertFromSeed, ZeroIterationsAndConstantModel) {
  std::mt19937_64 rng(8);
  auto seed_img = fixtures::random_image(8, 8, 3, rng);
  auto m = build_model<double>(fixtures::small_cnn_config(8, 3, 4), 8);
  PgdInversionConfig cfg;
  cfg.max_iterations = 0;
  auto r = invert_from_seed_image(m, seed_img, cfg);
  EXPECT_EQ(r.image, seed_img);
  EXPECT_EQ(*r.displacement_l2, 0.0);

  auto c = fixtures::constant_model<double>();
  cfg.max_iterations = 15;
  auto rc = invert_from_seed_image(c, seed_img, cfg);
  EXPECT_EQ(*rc.displacement_l2, 0.0);

  cfg.max_iterations = 5;
  EXPECT_GT(*invert_from_seed_image(m, seed_img, cfg).displacement_l2, 0.0);
}

TEST(InvertClass, ResultSerializationRoundTrip) {
  auto m = fixtures::linear_model<double>(2, 1, {{0, 0, 0, 0}, {1, 1, 1, 1}}, {0, -520});
  PgdInversionConfig cfg;
  cfg.target_class = 1;
  cfg.max_iterations = 4;
  auto r = invert_class(m, cfg);
  r.model_id = "toy";
  nlohmann::json j = r;
  auto back = j.get<InversionResult>();
  EXPECT_EQ(back.model_id, "toy");
  EXPECT_EQ(back.iterations_to_target, r.iterations_to_target);
  ASSERT_EQ(back.trajectory.size(), r.trajectory.size());
  EXPECT_EQ(back.trajectory[2].activation, r.trajectory[2].activation);
  EXPECT_THROW(init_mode_from_string("blue"), ConfigError);
  cfg.init.gray_value = 300;
  EXPECT_THROW(invert_class(m, cfg), ConfigError);
}
