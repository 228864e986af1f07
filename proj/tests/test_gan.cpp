#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include <unistd.h>

#include "mivb/inversion_gan.hpp"
#include "test_support.hpp"

using namespace mivb;

namespace {

GanInversionConfig micro_config(double lambda_c) {
  GanInversionConfig c;
  c.nets.image_size = 8;
  c.nets.noise_dim = 8;
  c.nets.gen_width = 4;
  c.nets.disc_width = 4;
  c.batch_size = 16;
  c.epochs = 2;
  c.lambda_c = lambda_c;
  c.seed = 3;
  return c;
}

LabeledDataset tiny(std::size_t n, Split split, std::uint64_t seed) {
  auto ds = make_synthetic(n, split, seed);
  for (auto& img : ds.images) img = downscale_box(img, 4);
  return ds;
}

std::vector<double> snapshot(std::vector<nn::Parameter<float>*> ps, std::vector<nn::Tensor<float>*> bs) {
  std::vector<double> out;
  for (auto* p : ps) out.insert(out.end(), p->value.storage().begin(), p->value.storage().end());
  for (auto* b : bs) out.insert(out.end(), b->storage().begin(), b->storage().end());
  return out;
}

ClassifierModel<float> trained_target() {
  auto tr = tiny(300, Split::train, 1);
  auto m = build_model<float>(fixtures::small_cnn_config(8, 3, 16), 2);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.schedule = {{5, 0.05}};
  cfg.batch_size = 16;
  train_standard(m, tr, cfg);
  return m;
}

}  // namespace

TEST(GanNets, ShapesAndRange) {
  auto cfg = micro_config(1);
  Generator<float> g(cfg.nets, 1);
  Discriminator<float> d(cfg.nets, 2);
  std::mt19937_64 rng(1);
  std::vector<int> labels{0, 3, 9};
  auto px = g.forward(g.make_input(labels, rng), nn::Mode::train);
  EXPECT_EQ(px.n(), 3);
  EXPECT_EQ(px.c(), 3);
  EXPECT_EQ(px.h(), 8);
  for (float v : px.storage()) EXPECT_TRUE(v >= 0 && v <= 255);
  auto out = d.forward(px, nn::Mode::train);
  EXPECT_EQ(out.score.sample_size(), 1u);
  EXPECT_EQ(out.logits.c(), 10);

  // Seven transpose convolutions and seven discriminator blocks.
  int tconv = 0, conv = 0;
  for (std::size_t i = 0; i < g.net.size(); ++i) tconv += g.net.layer(i).name() == "conv_transpose2d";
  for (std::size_t i = 0; i < d.trunk.size(); ++i) conv += d.trunk.layer(i).name() == "conv2d";
  EXPECT_EQ(tconv, 7);
  EXPECT_EQ(conv, 7);
  GanNetSpec bad = cfg.nets;
  bad.image_size = 12;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(GanSteps, UntrainedDiscriminatorIsNearChance) {
  auto cfg = micro_config(1);
  GanState<float> st(cfg);
  auto ds = tiny(32, Split::validation, 4);
  std::vector<std::size_t> idx(32);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(5);
  std::vector<int> fl(32, 1);
  auto fake = st.gen.forward(st.gen.make_input(fl, rng), nn::Mode::train);
  auto l = discriminator_step(st, pixel_batch<float>(ds, idx), ds.labels, fake, fl);
  EXPECT_NEAR(l.realfake, std::log(2.0), 0.35);
  EXPECT_THROW(discriminator_step(st, nn::Tensor<float>(), std::vector<int>{}, fake, fl), std::invalid_argument);
}

TEST(GanSteps, ClassLossIgnoresGeneratedLabels) {
  auto cfg = micro_config(1);
  GanState<float> a(cfg), b(cfg);
  auto ds = tiny(16, Split::validation, 6);
  std::vector<std::size_t> idx(16);
  std::iota(idx.begin(), idx.end(), 0);
  auto real = pixel_batch<float>(ds, idx);
  std::mt19937_64 rng(7);
  std::vector<int> fl(16, 4);
  auto fake = a.gen.forward(a.gen.make_input(fl, rng), nn::Mode::train);
  std::vector<int> zeros(16, 0);
  auto la = discriminator_step(a, real, ds.labels, fake, fl);
  auto lb = discriminator_step(b, real, ds.labels, fake, zeros);
  EXPECT_EQ(la.classification, lb.classification);
  EXPECT_EQ(la.realfake, lb.realfake);
  EXPECT_EQ(snapshot(a.disc.parameters(), a.disc.buffers()), snapshot(b.disc.parameters(), b.disc.buffers()));
}

TEST(GanSteps, ZeroedTargetHeadGivesLn10ClassLoss) {
  auto cfg = micro_config(1);
  GanState<float> st(cfg);
  auto target = build_model<float>(fixtures::small_cnn_config(8, 3, 4), 1);
  for (auto* p : target.head.parameters()) p->value *= 0.0f;
  std::mt19937_64 rng(8);
  std::vector<int> labels{0, 1, 2, 3, 4, 5, 6, 7};
  auto l = generator_step(st, target, st.gen.make_input(labels, rng), labels, 1.0);
  EXPECT_TRUE(l.target_queried);
  EXPECT_NEAR(l.target_class, std::log(10.0), 1e-6);
}

TEST(GanTraining, FrozenTargetAndUnqueriedAtZeroWeight) {
  auto target = build_model<float>(fixtures::small_cnn_config(8, 3, 4), 1);
  auto shadow = make_shadow(tiny(48, Split::validation, 2));
  const auto before = snapshot(target.parameters(), target.buffers());

  const auto q0 = target.query_count();
  auto r0 = train_inversion_gan(target, shadow, micro_config(0));
  EXPECT_EQ(target.query_count(), q0);
  ASSERT_EQ(r0.curve.size(), 2u);
  EXPECT_EQ(r0.curve[0].g_target_class, 0.0);

  int sample_calls = 0;
  GanHooks<float> hooks;
  hooks.on_samples = [&](int, Generator<float>&) { ++sample_calls; };
  auto r1 = train_inversion_gan(target, shadow, micro_config(2), hooks);
  EXPECT_GT(target.query_count(), q0);
  EXPECT_EQ(sample_calls, 2);
  EXPECT_EQ(snapshot(target.parameters(), target.buffers()), before);
}

TEST(GanTraining, DiscriminatorLearnsOnAMicroSet) {
  auto target = build_model<float>(fixtures::small_cnn_config(8, 3, 4), 1);
  auto shadow = make_shadow(tiny(64, Split::validation, 3));
  auto cfg = micro_config(0);
  cfg.epochs = 15;
  auto r = train_inversion_gan(target, shadow, cfg);
  EXPECT_GT(r.curve.back().d_accuracy, 0.5);
}

TEST(GanTraining, TargetWeightRaisesTargetConfidence) {
  auto target = trained_target();
  auto shadow = make_shadow(tiny(160, Split::validation, 9));
  std::vector<double> conf;
  for (double lam : {0.0, 1.0, 10.0}) {
    auto cfg = micro_config(lam);
    cfg.epochs = 6;
    auto r = train_inversion_gan(target, shadow, cfg);
    double c = 0;
    for (int k = 0; k < 10; ++k) {
      auto imgs = generate_samples(r.state->gen, k, 10, 100 + k);
      auto logits = target.forward_logits(imgs);
      c += mean_class_confidence(logits, std::vector<int>(10, k));
    }
    conf.push_back(c / 10);
  }
  EXPECT_GT(conf[1], conf[0]);
  EXPECT_GT(conf[2], conf[0]);
  EXPECT_GT(conf[2], 0.1);
}

TEST(GanSamples, DeterministicInRangeAndCheckpointed) {
  auto cfg = micro_config(1);
  Generator<float> g(cfg.nets, 4);
  EXPECT_TRUE(generate_samples(g, 2, 0, 1).empty());
  auto a = generate_samples(g, 2, 4, 11);
  auto b = generate_samples(g, 2, 4, 11);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_GT(l2_distance(a[0], a[1]), 0.0);

  auto path = std::filesystem::temp_directory_path() / ("mivb_gen_" + std::to_string(::getpid()) + ".ckpt");
  save_generator(g, path);
  auto back = load_generator<float>(path);
  auto c = generate_samples(back, 2, 4, 11);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], c[i]);
  std::filesystem::remove(path);
}
