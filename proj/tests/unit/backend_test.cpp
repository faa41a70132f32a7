// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "dragpd/adapter.hpp"
#include "dragpd/container.hpp"
#include "dragpd/ddim.hpp"
#include "dragpd/error.hpp"
#include "dragpd/image.hpp"
#include "dragpd/schedule.hpp"
#include "dragpd/synthetic_backend.hpp"
#include "test_support.hpp"

namespace dragpd {
namespace {

using testing::check_gradient;
using testing::random_tensor;

BackendOptions small_options() {
  BackendOptions o;
  o.height = 12;
  o.width = 10;
  return o;
}

Image random_image(Rng& rng, int h, int w) {
  Image im(h, w);
  for (double& v : im.pixels().values()) v = rng.uniform();
  return im;
}

TEST(Tensor, ShiftReplicatesEdges) {
  Tensor t(1, 2, 3);
  for (int x = 0; x < 3; ++x) {
    t.at(0, 0, x) = x;
    t.at(0, 1, x) = 10 + x;
  }
  const Tensor s = shift(t, 0, 1);
  EXPECT_EQ(s.at(0, 0, 0), 0);
  EXPECT_EQ(s.at(0, 0, 1), 0);
  EXPECT_EQ(s.at(0, 0, 2), 1);
  EXPECT_EQ(s.at(0, 1, 2), 11);
}

TEST(Tensor, BilinearIdentityAndConstant) {
  Rng rng(1);
  const Tensor t = random_tensor(rng, 2, 5, 7);
  EXPECT_EQ(resample_bilinear(t, 5, 7), t);
  const Tensor c(1, 3, 3, 0.25);
  const Tensor up = resample_bilinear(c, 8, 5);
  for (double v : up.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Image, PngRoundTripIsExactOnQuantizedValues) {
  Rng rng(2);
  Image im(9, 13);
  for (double& v : im.pixels().values()) v = rng.integer(0, 255) / 255.0;
  const Image back = decode_png(encode_png(im));
  EXPECT_LT(max_abs_diff(back.pixels(), im.pixels()), 1e-12);
}

TEST(Image, UndecodableBytesAreRejected) {
  const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5};
  EXPECT_THROW(decode_png(junk), Error);
}

TEST(Container, RoundTripAndChecksum) {
  Container c("unit");
  c.put_text("meta", "{\"a\":1}");
  c.put_doubles("x", std::vector<double>{1.5, -0.0, 1e300});
  auto bytes = c.serialize();
  const Container back = Container::parse(bytes);
  EXPECT_EQ(back.kind(), "unit");
  EXPECT_EQ(back.text("meta"), "{\"a\":1}");
  EXPECT_EQ(back.doubles("x"), (std::vector<double>{1.5, -0.0, 1e300}));
  bytes[bytes.size() / 2] ^= 0x40;
  try {
    Container::parse(bytes);
    FAIL() << "corruption not detected";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
}

TEST(Schedule, MatchesDirectProduct) {
  const DiffusionSchedule s = DiffusionSchedule::uniform(50);
  ASSERT_EQ(s.num_steps(), 50);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  for (int k = 1; k <= 50; ++k) {
    const int t = s.train_timestep(k);
    EXPECT_EQ(t, (k - 1) * 20 + 1);
    double prod = 1.0;
    for (int i = 0; i <= t; ++i) {
      const double b = std::pow(std::sqrt(0.00085) + (std::sqrt(0.012) - std::sqrt(0.00085)) * i / 999.0, 2);
      prod *= 1.0 - b;
    }
    EXPECT_NEAR(s.alpha_bar(k), prod, 1e-14);
    EXPECT_NEAR(s.noise_levels()[k - 1], std::sqrt(1.0 - prod), 1e-14);
    if (k > 1) {
      EXPECT_LT(s.alpha_bar(k), s.alpha_bar(k - 1));
    }
  }
  EXPECT_THROW(s.alpha_bar(51), Error);
}

TEST(SyntheticBackend, CodecIsIdentityOnRgb) {
  const auto b = SyntheticBackend::create(small_options());
  Rng rng(3);
  const Image im = random_image(rng, 12, 10);
  const LatentCode z = b->encode_image(im);
  EXPECT_EQ(z.data.channels(), 4);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 12; ++y) {
      for (int x = 0; x < 10; ++x) EXPECT_EQ(z.data.at(c, y, x), im.at(c, y, x));
    }
  }
  EXPECT_LT(max_abs_diff(b->decode_latent(z).pixels(), im.pixels()), 1e-6);

  const LatentCode zero = b->encode_image(Image(12, 10, 0.0));
  for (double v : zero.data.values()) EXPECT_EQ(v, 0.0);
  const Image decoded = b->decode_latent(zero);
  for (double v : decoded.pixels().values()) EXPECT_EQ(v, 0.0);
}

TEST(SyntheticBackend, RejectsWrongGeometryAndNoisyDecode) {
  const auto b = SyntheticBackend::create(small_options());
  try {
    b->encode_image(Image(5, 5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kGeometry);
  }
  LatentCode z = b->encode_image(Image(12, 10, 0.5));
  z.timestep = 3;
  EXPECT_THROW(b->decode_latent(z), Error);
}

TEST(SyntheticBackend, KernelsAreSeedDeterministic) {
  const auto a = SyntheticBackend::create(small_options());
  const auto b = SyntheticBackend::create(small_options());
  BackendOptions other = small_options();
  other.seed += 1;
  const auto c = SyntheticBackend::create(other);
  Rng rng(4);
  const Tensor z = random_tensor(rng, 4, 12, 10);
  EXPECT_EQ(a->predict_noise(z, 101), b->predict_noise(z, 101));
  EXPECT_NE(a->predict_noise(z, 101), c->predict_noise(z, 101));
}

TEST(SyntheticBackend, ConstantLatentGivesConstantFeatures) {
  const auto b = SyntheticBackend::create(small_options());
  LatentCode z{Tensor(4, 12, 10, 0.3), 10, 0};
  for (const std::string& layer : b->descriptor().feature_layer_ids) {
    const FeatureMap f = b->extract_features(z, layer);
    for (int c = 0; c < f.data.channels(); ++c) {
      for (double v : f.data.plane(c)) EXPECT_NEAR(v, f.data.at(c, 0, 0), 1e-15) << layer;
    }
  }
}

TEST(SyntheticBackend, FeaturesAreTranslationEquivariantInTheInterior) {
  const auto b = SyntheticBackend::create(small_options());
  Rng rng(5);
  const LatentCode z{random_tensor(rng, 4, 12, 10), 10, 0};
  const LatentCode moved{shift(z.data, 0, 1), 10, 0};
  for (const std::string& layer : b->descriptor().feature_layer_ids) {
    const Tensor f = b->extract_features(z, layer).data;
    const Tensor g = b->extract_features(moved, layer).data;
    // Three 3x3 layers see at most 3 px, so stay 4 px clear of the borders.
    for (int c = 0; c < f.channels(); ++c) {
      for (int y = 4; y < 12 - 4; ++y) {
        for (int x = 4; x < 10 - 4; ++x) EXPECT_NEAR(g.at(c, y, x + 1), f.at(c, y, x), 1e-12);
      }
    }
  }
}

TEST(SyntheticBackend, NoiseVjpMatchesFiniteDifferences) {
  const auto b = SyntheticBackend::create(small_options());
  Rng rng(6);
  for (int t : {1, 381, 981}) {
    const Tensor z = random_tensor(rng, 4, 12, 10);
    const Tensor w = random_tensor(rng, 4, 12, 10);
    auto f = [&](const Tensor& x) { return dot(b->predict_noise(x, t), w); };
    const auto r = check_gradient(f, z, b->predict_noise_vjp(z, t, w), rng);
    EXPECT_LT(r.worst, 1e-6) << "t=" << t;
  }
}

TEST(SyntheticBackend, FeatureVjpMatchesFiniteDifferencesOnEveryLayer) {
  const auto b = SyntheticBackend::create(small_options());
  Rng rng(7);
  for (const std::string& layer : b->descriptor().feature_layer_ids) {
    const LatentCode z{random_tensor(rng, 4, 12, 10), 20, 0};
    const Tensor probe = b->extract_features(z, layer).data;
    const Tensor w = random_tensor(rng, probe.channels(), probe.height(), probe.width());
    auto f = [&](const Tensor& x) {
      return dot(b->extract_features({x, z.timestep, 0}, layer).data, w);
    };
    const auto r = check_gradient(f, z.data, b->features_vjp(z, layer, w), rng);
    EXPECT_LT(r.worst, 1e-6) << layer;
  }
}

TEST(SyntheticBackend, PreviewDecoderVjpMatchesFiniteDifferences) {
  const auto b = SyntheticBackend::create(small_options());
  Rng rng(8);
  const Tensor z = random_tensor(rng, 4, 12, 10);
  const Tensor w = random_tensor(rng, 3, 12, 10);
  auto f = [&](const Tensor& x) { return dot(b->decode_preview(x), w); };
  EXPECT_LT(check_gradient(f, z, b->decode_preview_vjp(z, w), rng).worst, 1e-6);
}

TEST(Registry, SyntheticIsBuiltInAndUnknownNamesFail) {
  const auto names = registered_backends();
  EXPECT_NE(std::find(names.begin(), names.end(), "synthetic"), names.end());
  EXPECT_EQ(make_backend("synthetic", small_options())->descriptor().name, "synthetic");
  try {
    make_backend("no-such-backend", {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNotFound);
  }
  EXPECT_THROW(make_backend("stable-diffusion-1.5", {}), Error);
  const testing::TempDir weights;
  BackendOptions o;
  o.checkpoint_dir = weights.path().string();
  try {
    make_backend("stable-diffusion-1.5", o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUnavailable);
  }
}

TEST(Ddim, StepMatchesClosedForm) {
  const auto b = SyntheticBackend::create(small_options());
  const DiffusionSchedule& s = b->schedule();
  Rng rng(9);
  const Tensor z = random_tensor(rng, 4, 12, 10);
  const int from = 30;
  const int to = 29;
  const Tensor eps = b->predict_noise(z, s.train_timestep(from));
  const double af = s.alpha_bar(from);
  const double at = s.alpha_bar(to);
  const Tensor out = ddim_step(*b, z, from, to, s);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double x0 = (z[i] - std::sqrt(1 - af) * eps[i]) / std::sqrt(af);
    EXPECT_NEAR(out[i], std::sqrt(at) * x0 + std::sqrt(1 - at) * eps[i], 1e-12);
  }
}

TEST(Ddim, StepVjpMatchesFiniteDifferences) {
  const auto b = SyntheticBackend::create(small_options());
  Rng rng(10);
  const Tensor z = random_tensor(rng, 4, 12, 10);
  const Tensor w = random_tensor(rng, 4, 12, 10);
  auto f = [&](const Tensor& x) { return dot(ddim_step(*b, x, 12, 6, b->schedule()), w); };
  EXPECT_LT(check_gradient(f, z, ddim_step_vjp(*b, z, 12, 6, b->schedule(), w), rng).worst, 1e-6);
}

TEST(Ddim, InversionRoundTripsAndIsDeterministic) {
  const auto b = SyntheticBackend::create(small_options());
  Rng rng(11);
  const LatentCode z0{random_tensor(rng, 4, 12, 10, 0.5), 0, 0};
  EXPECT_EQ(ddim_invert(*b, z0, 0, b->schedule()).data, z0.data);
  const LatentCode zt = ddim_invert(*b, z0, 35, b->schedule());
  EXPECT_EQ(zt.timestep, 35);
  EXPECT_EQ(ddim_invert(*b, z0, 35, b->schedule()).data, zt.data);
  const LatentCode back = ddim_sample(*b, zt, b->schedule());
  EXPECT_EQ(back.timestep, 0);
  EXPECT_LT(max_abs_diff(back.data, z0.data), 1e-5);
  EXPECT_EQ(ddim_sample(*b, zt, b->schedule()).data, back.data);

  const LatentCode other{random_tensor(rng, 4, 12, 10, 0.5), 0, 0};
  EXPECT_GT(max_abs_diff(ddim_invert(*b, other, 35, b->schedule()).data, zt.data), 1e-3);
  EXPECT_THROW(ddim_invert(*b, z0, 51, b->schedule()), Error);
}

TEST(Ddim, SampledLatentsDecodeInRange) {
  const auto b = SyntheticBackend::create(small_options());
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const LatentCode zt{random_tensor(rng, 4, 12, 10), 20, 0};
    const Image im = b->decode_latent(ddim_sample(*b, zt, b->schedule()));
    for (double v : im.pixels().values()) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Ddim, PreviewVjpMatchesFiniteDifferences) {
  const auto b = SyntheticBackend::create(small_options());
  Rng rng(12);
  const Tensor z = random_tensor(rng, 4, 12, 10);
  const Tensor w = random_tensor(rng, 3, 12, 10);
  auto f = [&](const Tensor& x) { return dot(preview_forward(*b, x, 20, 4, b->schedule()).rgb, w); };
  const PreviewPath path = preview_forward(*b, z, 20, 4, b->schedule());
  EXPECT_EQ(path.steps.front(), 20);
  EXPECT_EQ(path.steps.back(), 0);
  EXPECT_LT(check_gradient(f, z, preview_vjp(*b, path, w, b->schedule()), rng).worst, 1e-6);
}

// Rank-1 delta that adds h to entry (row, col) of a slot's weight matrix.
AdapterWeights unit_delta(const AdapterSlot& slot, int row, int col, double h) {
  AdapterWeights w;
  w.rank = 1;
  LowRankDelta d{slot.layer_id, slot.rows, slot.cols,
                 std::vector<double>(slot.rows, 0.0), std::vector<double>(slot.cols, 0.0)};
  d.up[row] = h;
  d.down[col] = 1.0;
  w.deltas.push_back(d);
  return w;
}

TEST(Adapters, NoiseLossGradientsMatchFiniteDifferences) {
  const auto b = SyntheticBackend::create(small_options());
  Rng rng(13);
  const Tensor z = random_tensor(rng, 4, 12, 10);
  const Tensor noise = random_tensor(rng, 4, 12, 10);
  std::vector<std::vector<double>> grads;
  b->noise_loss_and_grads(z, 401, noise, grads);
  const auto slots = b->adapter_slots();
  ASSERT_EQ(grads.size(), slots.size());
  for (std::size_t s = 0; s < slots.size(); ++s) {
    for (int probe = 0; probe < 4; ++probe) {
      const int row = rng.integer(0, slots[s].rows - 1);
      const int col = rng.integer(0, slots[s].cols - 1);
      const double h = 1e-6;
      std::vector<std::vector<double>> unused;
      const double plus =
          b->with_adapters(unit_delta(slots[s], row, col, h))->noise_loss_and_grads(z, 401, noise, unused);
      const double minus =
          b->with_adapters(unit_delta(slots[s], row, col, -h))->noise_loss_and_grads(z, 401, noise, unused);
      const double fd = (plus - minus) / (2 * h);
      const double analytic = grads[s][static_cast<std::size_t>(row) * slots[s].cols + col];
      EXPECT_NEAR(analytic, fd, 1e-6 * std::max(1.0, std::abs(fd))) << slots[s].layer_id;
    }
  }
}

TEST(Adapters, ZeroDeltasAndRemovalAreExactNoOps) {
  const auto b = SyntheticBackend::create(small_options());
  Rng rng(14);
  const LatentCode z{random_tensor(rng, 4, 12, 10), 15, 0};
  AdapterWeights zero;
  for (const auto& slot : b->adapter_slots()) {
    zero.deltas.push_back({slot.layer_id, slot.rows, slot.cols,
                           std::vector<double>(slot.rows * 16, 0.0),
                           std::vector<double>(16 * slot.cols, 0.0)});
  }
  EXPECT_TRUE(zero.is_zero());
  const BackendPtr adapted = apply_adapters(b, zero);
  EXPECT_EQ(adapted->predict_noise(z.data, 301), b->predict_noise(z.data, 301));
  EXPECT_EQ(adapted->extract_features(z, "conv2").data, b->extract_features(z, "conv2").data);

  const AdapterWeights nonzero = unit_delta(b->adapter_slots()[0], 0, 0, 0.5);
  const BackendPtr changed = apply_adapters(b, nonzero);
  EXPECT_NE(changed->extract_features(z, "conv1").data, b->extract_features(z, "conv1").data);
  const BackendPtr removed = remove_adapters(changed);
  EXPECT_FALSE(removed->adapted());
  EXPECT_EQ(removed->predict_noise(z.data, 301), b->predict_noise(z.data, 301));
}

TEST(Adapters, OnlyTargetedLayersChange) {
  const auto b = SyntheticBackend::create(small_options());
  Rng rng(15);
  const LatentCode z{random_tensor(rng, 4, 12, 10), 15, 0};
  const auto slots = b->adapter_slots();
  const auto conv2 = std::find_if(slots.begin(), slots.end(),
                                  [](const AdapterSlot& s) { return s.layer_id == "conv2"; });
  ASSERT_NE(conv2, slots.end());
  const BackendPtr adapted = apply_adapters(b, unit_delta(*conv2, 1, 2, 0.3));
  EXPECT_EQ(adapted->extract_features(z, "conv1").data, b->extract_features(z, "conv1").data);
  EXPECT_NE(adapted->extract_features(z, "conv2").data, b->extract_features(z, "conv2").data);
}

TEST(Adapters, ZeroStepsGiveZeroDeltas) {
  const auto b = SyntheticBackend::create(small_options());
  Rng rng(16);
  AdaptationConfig cfg;
  cfg.steps = 0;
  const AdapterWeights w = finetune_identity(random_image(rng, 12, 10), b, cfg);
  EXPECT_TRUE(w.is_zero());
  EXPECT_EQ(w.rank, 16);
}

TEST(Adapters, TrainingLossMostlyDecreases) {
  const auto b = SyntheticBackend::create(small_options());
  Rng rng(17);
  AdaptationConfig cfg;
  cfg.steps = 50;
  AdaptationReport report;
  const Image im = random_image(rng, 12, 10);
  const AdapterWeights w = finetune_identity(im, b, cfg, &report);
  ASSERT_EQ(report.loss_curve.size(), 51u);
  int decreasing = 0;
  for (std::size_t i = 1; i < report.loss_curve.size(); ++i) {
    decreasing += report.loss_curve[i] < report.loss_curve[i - 1];
  }
  EXPECT_GE(decreasing, 45);
  EXPECT_LT(report.held_out_after, report.held_out_before);
  EXPECT_FALSE(w.is_zero());
}

TEST(Adapters, SaveLoadRoundTrip) {
  const testing::TempDir dir;
  const auto b = SyntheticBackend::create(small_options());
  const AdapterWeights w = unit_delta(b->adapter_slots()[1], 3, 4, 0.25);
  save_adapters(dir.path() / "a.dpdc", w);
  EXPECT_EQ(load_adapters(dir.path() / "a.dpdc"), w);
  EXPECT_THROW(load_adapters(dir.path() / "missing.dpdc"), Error);
}

}  // namespace
}  // namespace dragpd
