// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dragpd/encoder.hpp"
#include "dragpd/error.hpp"
#include "dragpd/objective.hpp"
#include "dragpd/synthetic_backend.hpp"
#include "test_support.hpp"

namespace dragpd {
namespace {

using testing::check_gradient;
using testing::random_tensor;

GaussianMoments moments(double mu, double sigma) { return {{mu}, {sigma}, 1}; }

// Offset whose angle to (dr, dc) is smallest, by atan2.
Coord smallest_angle_offset(int dr, int dc) {
  Coord best{0, 0};
  double best_angle = 10.0;
  for (int r = -1; r <= 1; ++r) {
    for (int c = -1; c <= 1; ++c) {
      if (r == 0 && c == 0) continue;
      double a = std::abs(std::atan2(r, c) - std::atan2(dr, dc));
      a = std::min(a, 2 * std::numbers::pi - a);
      if (a < best_angle) {
        best_angle = a;
        best = {r, c};
      }
    }
  }
  return best;
}

TEST(StepDirection, AxisAlignedAndDegenerate) {
  EXPECT_EQ(step_direction(PointPair::start({5, 5}, {9, 5})), (Coord{1, 0}));
  EXPECT_EQ(step_direction(PointPair::start({4, 4}, {4, 4})), (Coord{0, 0}));
  EXPECT_EQ(step_direction(PointPair::start({4, 4}, {4, 0})), (Coord{0, -1}));
}

TEST(StepDirection, SevenThreeIsDiagonalByCosine) {
  // cos((7,3), (1,0)) = 0.919 < cos((7,3), (1,1)) = 0.928.
  EXPECT_EQ(step_direction(PointPair::start({0, 0}, {7, 3})), (Coord{1, 1}));
}

TEST(StepDirection, MatchesSmallestAngleOverRandomPairs) {
  Rng rng(21);
  for (int i = 0; i < 2000; ++i) {
    const Coord h{rng.integer(0, 40), rng.integer(0, 40)};
    const Coord t{rng.integer(0, 40), rng.integer(0, 40)};
    if (h == t) continue;
    EXPECT_EQ(step_direction(PointPair::start(h, t)),
              smallest_angle_offset(t.row - h.row, t.col - h.col));
  }
}

TEST(Patch, SquareAndDiscSizes) {
  EXPECT_EQ(patch_offsets({1, PatchShape::kSquare}).size(), 9u);
  EXPECT_EQ(patch_offsets({2, PatchShape::kSquare}).size(), 25u);
  EXPECT_EQ(patch_offsets({2, PatchShape::kDisc}).size(), 13u);
  EXPECT_THROW(patch_offsets({0, PatchShape::kSquare}), Error);
}

struct MotionFixture {
  FeatureMap current;
  FeatureMap reference;
  LatentCode z_k;
  LatentCode z_0;
  EditMask mask;
};

MotionFixture motion_fixture(Rng& rng, int h, int w) {
  MotionFixture f;
  f.current = {random_tensor(rng, 3, h, w), "x", 10};
  f.reference = {random_tensor(rng, 3, h, w), "x", 10};
  f.z_0 = {random_tensor(rng, 2, h, w), 10, 0};
  f.z_k = {f.z_0.data + random_tensor(rng, 2, h, w, 0.1), 10, 0};
  f.mask = EditMask(h, w, true);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f.mask.set(y, x, rng.uniform() < 0.5);
  }
  return f;
}

TEST(MotionSupervision, ZeroWhenNothingMovesAndLatentUnchanged) {
  Rng rng(22);
  MotionFixture f = motion_fixture(rng, 8, 8);
  const std::vector<PointPair> pairs{PointPair::start({3, 3}, {3, 3})};
  const MotionLoss loss = motion_supervision_loss(f.reference, f.reference, f.z_0, f.z_0, pairs,
                                                  f.mask, {1, PatchShape::kSquare}, {});
  EXPECT_EQ(loss.value, 0.0);
}

TEST(MotionSupervision, AllOnesMaskDropsTheAnchorTerm) {
  Rng rng(23);
  MotionFixture f = motion_fixture(rng, 8, 8);
  const std::vector<PointPair> pairs{PointPair::start({3, 3}, {6, 5})};
  const MotionLoss loss = motion_supervision_loss(f.current, f.reference, f.z_k, f.z_0, pairs,
                                                  EditMask(8, 8, true), {1, PatchShape::kSquare}, {});
  EXPECT_EQ(loss.mask_term, 0.0);
  EXPECT_EQ(loss.value, loss.feature_term);
}

TEST(MotionSupervision, MatchesDirectSummation) {
  Rng rng(24);
  MotionFixture f = motion_fixture(rng, 8, 8);
  // Second pair sits on the border so part of its patch is clipped.
  const std::vector<PointPair> pairs{PointPair::start({3, 3}, {6, 5}),
                                     PointPair::start({0, 7}, {0, 2})};
  LossWeights weights;
  weights.mask_term_weight = 0.7;
  const MotionLoss loss = motion_supervision_loss(f.current, f.reference, f.z_k, f.z_0, pairs,
                                                  f.mask, {1, PatchShape::kSquare}, weights);
  const Coord dirs[2] = {{1, 1}, {0, -1}};
  double feature = 0.0;
  for (int i = 0; i < 2; ++i) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int qy = pairs[i].handle.row + dy;
        const int qx = pairs[i].handle.col + dx;
        const int sy = qy + dirs[i].row;
        const int sx = qx + dirs[i].col;
        if (qy < 0 || qy >= 8 || qx < 0 || qx >= 8 || sy < 0 || sy >= 8 || sx < 0 || sx >= 8) continue;
        for (int c = 0; c < 3; ++c) {
          feature += std::abs(f.current.data.at(c, sy, sx) - f.reference.data.at(c, qy, qx));
        }
      }
    }
  }
  double anchor = 0.0;
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        if (!f.mask.editable(y, x)) anchor += std::abs(f.z_k.data.at(c, y, x) - f.z_0.data.at(c, y, x));
      }
    }
  }
  EXPECT_NEAR(loss.feature_term, feature, 1e-12);
  EXPECT_NEAR(loss.mask_term, anchor, 1e-12);
  EXPECT_NEAR(loss.value, feature + 0.7 * anchor, 1e-12);
}

TEST(MotionSupervision, AnchorTermIgnoresEditableRegion) {
  Rng rng(25);
  MotionFixture f = motion_fixture(rng, 8, 8);
  const std::vector<PointPair> pairs{PointPair::start({3, 3}, {6, 5})};
  const PatchSpec patch{1, PatchShape::kSquare};
  const MotionLoss before = motion_supervision_loss(f.current, f.reference, f.z_k, f.z_0, pairs, f.mask, patch, {});
  LatentCode moved = f.z_k;
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        if (f.mask.editable(y, x)) moved.data.at(c, y, x) += rng.normal();
      }
    }
  }
  const MotionLoss after = motion_supervision_loss(f.current, f.reference, moved, f.z_0, pairs, f.mask, patch, {});
  EXPECT_EQ(before.mask_term, after.mask_term);
}

TEST(MotionSupervision, ObjectiveGradientMatchesFiniteDifferences) {
  BackendOptions o;
  o.height = 12;
  o.width = 12;
  const auto b = SyntheticBackend::create(o);
  Rng rng(26);
  for (const char* layer : {"conv2", "hypercolumn"}) {
    const LatentCode z0{random_tensor(rng, 4, 12, 12), 20, 0};
    const LatentCode zk{z0.data + random_tensor(rng, 4, 12, 12, 0.05), 20, 3};
    const FeatureMap ref = b->extract_features(z0, layer);
    EditMask mask(12, 12, true);
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 12; ++x) mask.set(y, x, false);
    }
    const std::vector<PointPair> pairs{PointPair::start({6, 5}, {9, 9})};
    const LossValue v = motion_supervision_objective(*b, layer, zk, ref, z0, pairs, mask, {2, PatchShape::kSquare}, {});
    auto f = [&](const Tensor& x) {
      return motion_supervision_objective(*b, layer, {x, 20, 3}, ref, z0, pairs, mask, {2, PatchShape::kSquare}, {}).value;
    };
    EXPECT_LT(check_gradient(f, zk.data, v.grad, rng).worst, 1e-4) << layer;
  }
}

TEST(Moments, ConstantLatentHitsTheFloor) {
  const GaussianMoments m = estimate_moments(Tensor(2, 3, 3, 0.7), MomentMode::kGlobal);
  ASSERT_EQ(m.mu.size(), 1u);
  EXPECT_DOUBLE_EQ(m.mu[0], 0.7);
  EXPECT_EQ(m.sigma[0], kSigmaFloor);
}

TEST(Moments, PlusMinusOneIsStandard) {
  Tensor t(1, 1, 4);
  t.values()[0] = -1;
  t.values()[1] = 1;
  t.values()[2] = -1;
  t.values()[3] = 1;
  const GaussianMoments m = estimate_moments(t, MomentMode::kGlobal);
  EXPECT_EQ(m.mu[0], 0.0);
  EXPECT_EQ(m.sigma[0], 1.0);
}

TEST(Moments, MatchStreamingReference) {
  Rng rng(27);
  const Tensor t = random_tensor(rng, 4, 16, 16, 2.0);
  auto welford = [](std::span<const double> xs) {
    double mean = 0.0;
    double m2 = 0.0;
    std::size_t n = 0;
    for (double x : xs) {
      ++n;
      const double d = x - mean;
      mean += d / n;
      m2 += d * (x - mean);
    }
    return std::pair{mean, std::sqrt(m2 / n)};
  };
  const auto [mu, sigma] = welford(t.values());
  const GaussianMoments g = estimate_moments(t, MomentMode::kGlobal);
  EXPECT_NEAR(g.mu[0], mu, 1e-10);
  EXPECT_NEAR(g.sigma[0], sigma, 1e-10);
  const GaussianMoments pc = estimate_moments(t, MomentMode::kPerChannel);
  ASSERT_EQ(pc.mu.size(), 4u);
  for (int c = 0; c < 4; ++c) {
    const auto [cm, cs] = welford(t.plane(c));
    EXPECT_NEAR(pc.mu[c], cm, 1e-10);
    EXPECT_NEAR(pc.sigma[c], cs, 1e-10);
  }
}

TEST(GaussianKl, ClosedFormValues) {
  EXPECT_EQ(gaussian_kl(moments(0.3, 1.7), moments(0.3, 1.7)), 0.0);
  EXPECT_NEAR(gaussian_kl(moments(1, 1), moments(0, 1)), 0.5, 1e-9);
  EXPECT_NEAR(gaussian_kl(moments(0, 2), moments(0, 1)), std::log(0.5) + 2.0 - 0.5, 1e-9);
}

TEST(GaussianKl, MonteCarloCrossCheck) {
  Rng rng(28);
  const int n = 1'000'000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = 2.0 * rng.normal();
    // log N(x; 0, 2) - log N(x; 0, 1)
    sum += -std::log(2.0) - x * x / 8.0 + x * x / 2.0;
  }
  EXPECT_NEAR(gaussian_kl(moments(0, 2), moments(0, 1)), sum / n, 1e-2);
}

TEST(GaussianKl, NonNegativeAndZeroOnlyWhenEqual) {
  Rng rng(29);
  for (int i = 0; i < 1000; ++i) {
    const GaussianMoments a = moments(rng.normal(), 0.01 + rng.uniform() * 3);
    const GaussianMoments b = moments(rng.normal(), 0.01 + rng.uniform() * 3);
    EXPECT_GT(gaussian_kl(a, b), 0.0);
    EXPECT_EQ(gaussian_kl(a, a), 0.0);
  }
}

TEST(PriorPreservation, ZeroAtTheAnchorAndClosedFormUnderShift) {
  Rng rng(30);
  const LatentCode z0{random_tensor(rng, 4, 10, 10, 0.8), 20, 0};
  EXPECT_EQ(prior_preservation_loss(z0, z0, MomentMode::kGlobal).value, 0.0);
  const double c = 0.37;
  LatentCode shifted = z0;
  for (double& v : shifted.data.values()) v += c;
  const double sigma0 = estimate_moments(z0.data, MomentMode::kGlobal).sigma[0];
  EXPECT_NEAR(prior_preservation_loss(shifted, z0, MomentMode::kGlobal).value,
              c * c / (2 * sigma0 * sigma0), 1e-10);
}

TEST(PriorPreservation, GradientMatchesFiniteDifferences) {
  Rng rng(31);
  for (MomentMode mode : {MomentMode::kGlobal, MomentMode::kPerChannel}) {
    const LatentCode z0{random_tensor(rng, 4, 10, 10), 20, 0};
    const LatentCode zk{random_tensor(rng, 4, 10, 10, 1.3), 20, 0};
    const GaussianMoments prior = estimate_moments(z0.data, mode);
    auto f = [&](const Tensor& x) { return prior_preservation_loss({x, 20, 0}, prior, mode).value; };
    const LossValue v = prior_preservation_loss(zk, prior, mode);
    EXPECT_LT(check_gradient(f, zk.data, v.grad, rng, 4, 6, 1e-5).worst, 1e-6);
  }
}

TEST(RewardLoss, ReferenceGeometries) {
  const std::vector<double> e0{1, 0, 0};
  const std::vector<double> e1{0, 1, 0};
  const std::vector<double> e2{0, 0, 1};
  const std::vector<double> neg0{-1, 0, 0};
  EXPECT_NEAR(reward_loss(e0, e0, e1, 0.3), 0.0, 1e-15);
  EXPECT_NEAR(reward_loss(e0, e1, e2, 0.3), 1.0, 1e-15);
  EXPECT_NEAR(reward_loss(neg0, e0, e1, 0.3), 2.0, 1e-15);
}

TEST(RewardLoss, InvariantToPositiveRescaling) {
  Rng rng(32);
  std::vector<double> img(16), tgt(16), ini(16);
  for (int i = 0; i < 16; ++i) {
    img[i] = rng.normal();
    tgt[i] = rng.normal();
    ini[i] = rng.normal();
  }
  const double base = reward_loss(img, tgt, ini, 0.3);
  auto scaled = [](std::vector<double> v, double s) {
    for (double& x : v) x *= s;
    return v;
  };
  EXPECT_NEAR(reward_loss(scaled(img, 3.5), tgt, ini, 0.3), base, 1e-14);
  EXPECT_NEAR(reward_loss(img, scaled(tgt, 0.01), ini, 0.3), base, 1e-14);
  EXPECT_NEAR(reward_loss(img, tgt, scaled(ini, 42.0), 0.3), base, 1e-14);
}

TEST(RewardLoss, EmbeddingGradientMatchesFiniteDifferences) {
  Rng rng(33);
  std::vector<double> img(16), tgt(16), ini(16);
  for (int i = 0; i < 16; ++i) {
    img[i] = rng.normal();
    tgt[i] = rng.normal();
    ini[i] = rng.normal();
  }
  const Embedding g = reward_loss_grad(img, tgt, ini, 0.3);
  for (int i = 0; i < 16; ++i) {
    auto p = img;
    auto m = img;
    p[i] += 1e-6;
    m[i] -= 1e-6;
    const double fd = (reward_loss(p, tgt, ini, 0.3) - reward_loss(m, tgt, ini, 0.3)) / 2e-6;
    EXPECT_NEAR(g[i], fd, 1e-8);
  }
}

TEST(RewardGuidance, SubstitutingThePreviewEmbedding) {
  BackendOptions o;
  o.height = 10;
  o.width = 10;
  const auto b = SyntheticBackend::create(o);
  const LinearProjectionEncoder enc(10, 10);
  Rng rng(34);
  const LatentCode z{random_tensor(rng, 4, 10, 10, 0.5), 20, 0};
  const RewardTerm probe = reward_guidance(*b, z, enc.embed_text("a"), enc.embed_text("b"), &enc, 0.3, 4);
  ASSERT_TRUE(probe.enabled);
  const Embedding init = enc.embed_text("b");
  const RewardTerm r = reward_guidance(*b, z, probe.image_embedding, init, &enc, 0.3, 4);
  EXPECT_NEAR(r.loss.value, 0.3 * cosine_similarity(probe.image_embedding, init), 1e-12);
}

TEST(RewardGuidance, DisabledWithoutEncoder) {
  BackendOptions o;
  o.height = 10;
  o.width = 10;
  const auto b = SyntheticBackend::create(o);
  const LatentCode z{Tensor(4, 10, 10, 0.5), 20, 0};
  const RewardTerm r = reward_guidance(*b, z, Embedding{1.0}, Embedding{0.0}, nullptr, 0.3, 4);
  EXPECT_FALSE(r.enabled);
  EXPECT_FALSE(r.disabled_reason.empty());
}

TEST(RewardGuidance, GradientMatchesFiniteDifferences) {
  BackendOptions o;
  o.height = 10;
  o.width = 10;
  const auto b = SyntheticBackend::create(o);
  const LinearProjectionEncoder enc(10, 10);
  const Embedding tgt = enc.embed_text("a green square");
  const Embedding ini = enc.embed_text("a red blob");
  Rng rng(35);
  for (int t : {5, 20}) {
    const LatentCode z{random_tensor(rng, 4, 10, 10, 0.5), t, 0};
    const RewardTerm r = reward_guidance(*b, z, tgt, ini, &enc, 0.3, 4);
    auto f = [&](const Tensor& x) {
      return reward_guidance(*b, {x, t, 0}, tgt, ini, &enc, 0.3, 4).loss.value;
    };
    EXPECT_LT(check_gradient(f, z.data, r.loss.grad, rng, 4, 6, 1e-5).worst, 1e-4) << "t=" << t;
  }
}

LossComponents random_components(Rng& rng) {
  LossComponents c;
  c.motion = {rng.uniform(), random_tensor(rng, 2, 4, 4)};
  c.prior = LossValue{rng.uniform(), random_tensor(rng, 2, 4, 4)};
  c.reward = LossValue{rng.uniform(), random_tensor(rng, 2, 4, 4)};
  return c;
}

TEST(TotalLoss, TogglesOffIsExactlyMotion) {
  Rng rng(36);
  const LossComponents c = random_components(rng);
  const TotalLoss t = total_loss(c, {}, {false, false, true});
  EXPECT_EQ(t.value, c.motion.value);
  EXPECT_EQ(t.grad, c.motion.grad);
  EXPECT_EQ(t.breakdown.kl, 0.0);
  EXPECT_EQ(t.breakdown.reward, 0.0);
}

TEST(TotalLoss, ZeroClipWeightHasNoEffect) {
  Rng rng(37);
  const LossComponents c = random_components(rng);
  LossWeights w;
  w.lambda_clip = 0.0;
  const TotalLoss on = total_loss(c, w, {true, true, true});
  const TotalLoss off = total_loss(c, w, {true, false, true});
  EXPECT_EQ(on.grad, off.grad);
  EXPECT_EQ(on.value, off.value);
}

TEST(TotalLoss, GradientIsTheWeightedSum) {
  Rng rng(38);
  const LossComponents c = random_components(rng);
  LossWeights w;
  w.lambda_clip = 150.0;
  w.lambda_kl = std::exp(4.0);
  const TotalLoss t = total_loss(c, w, {true, true, true});
  for (std::size_t i = 0; i < t.grad.size(); ++i) {
    const double expected = c.motion.grad[i] + w.lambda_kl * c.prior->grad[i] + w.lambda_clip * c.reward->grad[i];
    EXPECT_NEAR(t.grad[i], expected, 1e-8);
  }
  EXPECT_NEAR(t.value, c.motion.value + w.lambda_kl * c.prior->value + w.lambda_clip * c.reward->value, 1e-9);
}

TEST(Weights, DefaultsAndLogConversion) {
  const LossWeights w;
  EXPECT_EQ(w.lambda_clip, 150.0);
  EXPECT_NEAR(w.lambda_kl, std::exp(4.0), 1e-12);
  EXPECT_NEAR(LossWeights::lambda_kl_from_log(4.0, LogBase::kNatural), std::exp(4.0), 1e-12);
  EXPECT_NEAR(LossWeights::lambda_kl_from_log(2.0, LogBase::kTen), 100.0, 1e-10);
  LossWeights bad;
  bad.lambda_clip = -1.0;
  EXPECT_THROW(bad.validate(), Error);
}

}  // namespace
}  // namespace dragpd
