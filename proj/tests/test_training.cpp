#include <gtest/gtest.h>

#include <random>

#include "mivb/dataset.hpp"
#include "mivb/training.hpp"
#include "test_support.hpp"

using namespace mivb;

namespace {

LabeledDataset small_data(std::size_t n, Split split, std::uint64_t seed, int factor = 4) {
  auto ds = make_synthetic(n, split, seed);
  for (auto& img : ds.images) img = downscale_box(img, factor);
  return ds;
}

TrainConfig quick_config(int epochs, double lr = 0.05) {
  TrainConfig c;
  c.epochs = epochs;
  c.schedule = {{epochs, lr}};
  c.batch_size = 16;
  c.seed = 11;
  return c;
}

std::vector<double> flat_params(ClassifierModel<float>& m) {
  std::vector<double> out;
  for (auto* p : m.parameters()) out.insert(out.end(), p->value.storage().begin(), p->value.storage().end());
  for (auto* b : m.buffers()) out.insert(out.end(), b->storage().begin(), b->storage().end());
  return out;
}

}  // namespace

TEST(Training, ScheduleValidationAndLookup) {
  TrainConfig c;
  c.epochs = 200;
  c.schedule = {{100, 0.1}, {50, 0.01}, {50, 0.001}};
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.lr_at(1), 0.1);
  EXPECT_EQ(c.lr_at(100), 0.1);
  EXPECT_EQ(c.lr_at(101), 0.01);
  EXPECT_EQ(c.lr_at(200), 0.001);
  c.epochs = 199;
  EXPECT_THROW(c.validate(), ConfigError);
  AdvTrainConfig a;
  a.step_size = 20;
  EXPECT_THROW(a.validate(), ConfigError);
  a = {};
  a.epsilon = -1;
  EXPECT_THROW(a.validate(), ConfigError);
}

TEST(Training, StandardTrainingLearnsSyntheticData) {
  auto tr = small_data(400, Split::train, 1);
  auto va = small_data(200, Split::validation, 1);
  ArchitectureConfig a = fixtures::small_cnn_config(8, 3, 16);
  auto m = build_model<float>(a, 3);
  const double before = evaluate_accuracy(m, va);
  auto cfg = quick_config(6);
  auto res = train_standard(m, tr, cfg, &va);
  EXPECT_EQ(m.meta.regime, Regime::ttm);
  EXPECT_EQ(res.metrics.size(), 12u);
  EXPECT_GT(evaluate_accuracy(m, va), std::max(0.3, before + 0.1));
}

TEST(Training, ZeroEpsilonMatchesStandardTrainingBitForBit) {
  auto tr = small_data(64, Split::train, 2);
  auto cfg = quick_config(2);
  auto a = build_model<float>(fixtures::small_cnn_config(8, 3, 4), 9);
  auto b = a.clone();
  train_standard(a, tr, cfg);
  AdvTrainConfig adv;
  adv.epsilon = 0;
  adv.step_size = 2;
  train_adversarial(b, tr, cfg, adv);
  EXPECT_EQ(b.meta.regime, Regime::atm);
  EXPECT_EQ(flat_params(a), flat_params(b));
}

TEST(Training, AdversarialBatchesStayInBudgetAndRange) {
  auto ds = small_data(32, Split::train, 3, 4);
  auto m = build_model<float>(fixtures::small_cnn_config(8, 3, 4), 1);
  AdvTrainConfig adv;
  for (bool rs : {false, true}) {
    adv.random_start = rs;
    auto adv_imgs = generate_adversarial_batch(m, ds.images, ds.labels, adv);
    ASSERT_EQ(adv_imgs.size(), ds.size());
    double max_change = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      for (std::size_t k = 0; k < ds.images[i].size(); ++k) {
        const float v = adv_imgs[i][k];
        EXPECT_TRUE(v >= 0 && v <= 255);
        max_change = std::max(max_change, std::abs(static_cast<double>(v) - ds.images[i][k]));
      }
    EXPECT_LE(max_change, adv.epsilon + 1e-4);
    EXPECT_GT(max_change, 0.0);
  }
}

TEST(Training, AdversarialExamplesRaiseTheLoss) {
  auto tr = small_data(200, Split::train, 4);
  auto m = build_model<float>(fixtures::small_cnn_config(8, 3, 8), 2);
  train_standard(m, tr, quick_config(3));
  std::vector<std::size_t> idx(64);
  std::iota(idx.begin(), idx.end(), 0);
  auto clean = pixel_batch<float>(tr, idx);
  std::vector<int> labels(tr.labels.begin(), tr.labels.begin() + 64);
  auto adv = adversarial_pixel_batch(m, clean, labels, AdvTrainConfig{});
  EXPECT_GT(loss_pixel_gradient(m, adv, labels).first, loss_pixel_gradient(m, clean, labels).first);
}

TEST(Training, EarlyCheckpointAndDivergence) {
  auto tr = small_data(32, Split::train, 5);
  auto m = build_model<float>(fixtures::small_cnn_config(8, 3, 4), 1);
  auto cfg = quick_config(3);
  cfg.early_checkpoint_epoch = 1;
  AdvTrainConfig adv;
  adv.iterations = 2;
  auto res = train_adversarial(m, tr, cfg, adv);
  ASSERT_TRUE(res.early_checkpoint.has_value());
  EXPECT_EQ(res.early_checkpoint->meta.epochs, 1);
  EXPECT_EQ(m.meta.epochs, 3);

  auto d = build_model<float>(fixtures::small_cnn_config(8, 3, 4), 1);
  EXPECT_THROW(train_standard(d, tr, quick_config(3, 1e30)), DivergenceError);
  EXPECT_THROW(evaluate_accuracy(d, LabeledDataset{}), std::invalid_argument);
}

TEST(Training, LinearModelAttackReachesEpsilonSign) {
  // Two-class linear model on a 2x2x1 image, logit1 - logit0 = w . x + b.
  std::vector<double> w{1, -1, 1, -1};
  auto m = fixtures::linear_model<double>(2, 1, {{0, 0, 0, 0}, w}, {0, 0});
  auto x = ImageTensor::uniform(2, 2, 1, 128);
  AdvTrainConfig adv;
  auto out = generate_adversarial_batch(m, std::span<const ImageTensor>(&x, 1), std::vector<int>{1}, adv);
  // Raising the loss of label 1 pushes against w.
  for (int k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(out[0][k] - 128.0, -adv.epsilon * w[k]);
}
