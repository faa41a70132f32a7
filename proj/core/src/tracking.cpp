// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include "dragpd/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "dragpd/error.hpp"

namespace dragpd {

void TrackerConfig::validate() const {
  if (r2 < 1) fail(ErrorKind::kInvalidArgument, "tracker r2 must be >= 1");
  if (!(lambda_dir >= 0.0 && lambda_dir <= 1.0)) {
    fail(ErrorKind::kInvalidArgument, "tracker lambda_dir must lie in [0, 1]");
  }
  if (!(epsilon > 0.0)) fail(ErrorKind::kInvalidArgument, "tracker epsilon must be > 0");
  if (!(w_floor > 0.0)) fail(ErrorKind::kInvalidArgument, "tracker w_floor must be > 0");
}

Vec2 direction_vector(Coord p, Coord t, double epsilon) {
  const double dr = t.row - p.row;
  const double dc = t.col - p.col;
  const double n = std::sqrt(dr * dr + dc * dc) + epsilon;
  return {dr / n, dc / n};
}

AngularWeight angular_weight(Vec2 delta_q, Vec2 direction, const TrackerConfig& config) {
  const double n = std::sqrt(delta_q.row * delta_q.row + delta_q.col * delta_q.col);
  AngularWeight out;
  out.cos_theta =
      (delta_q.row * direction.row + delta_q.col * direction.col) / (n + config.epsilon);
  out.weight = std::max(config.lambda_dir * out.cos_theta + (1.0 - config.lambda_dir),
                        config.w_floor);
  return out;
}

namespace {

struct Candidate {
  Coord q;
  TrackResult r;
  bool is_current;
};

// True if a ranks strictly before b.
bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.r.weighted_distance != b.r.weighted_distance) {
    return a.r.weighted_distance < b.r.weighted_distance;
  }
  if (a.r.feature_distance != b.r.feature_distance) {
    return a.r.feature_distance < b.r.feature_distance;
  }
  if (a.r.weight != b.r.weight) return a.r.weight > b.r.weight;
  if (a.is_current != b.is_current) return a.is_current;
  if (a.q.row != b.q.row) return a.q.row < b.q.row;
  return a.q.col < b.q.col;
}

TrackResult search(const FeatureMap& features, std::span<const double> reference,
                   Coord current, const std::optional<Coord>& target,
                   const TrackerConfig& config) {
  config.validate();
  const Tensor& f = features.data;
  if (reference.size() != static_cast<std::size_t>(f.channels())) {
    fail(ErrorKind::kGeometry, "reference feature has " + std::to_string(reference.size()) +
                                   " channels, map has " + std::to_string(f.channels()));
  }
  const int y0 = std::max(0, current.row - config.r2);
  const int y1 = std::min(f.height() - 1, current.row + config.r2);
  const int x0 = std::max(0, current.col - config.r2);
  const int x1 = std::min(f.width() - 1, current.col + config.r2);
  if (y0 > y1 || x0 > x1) {
    fail(ErrorKind::kInvalidArgument,
         "tracking window around " + to_string(current) + " lies outside the feature map");
  }
  const Vec2 dir = target ? direction_vector(current, *target, config.epsilon) : Vec2{};
  std::optional<Candidate> best;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      Candidate c;
      c.q = {y, x};
      c.is_current = (c.q == current);
      double d = 0.0;
      for (int ch = 0; ch < f.channels(); ++ch) d += std::abs(f.at(ch, y, x) - reference[ch]);
      c.r.new_handle = c.q;
      c.r.feature_distance = d;
      if (target) {
        const AngularWeight aw =
            angular_weight({static_cast<double>(y - current.row),
                            static_cast<double>(x - current.col)},
                           dir, config);
        c.r.cos_theta = aw.cos_theta;
        c.r.weight = aw.weight;
      }
      c.r.weighted_distance = d / c.r.weight;
      if (!best || ranks_before(c, *best)) best = c;
    }
  }
  return best->r;
}

}  // namespace

TrackResult dwpt_track(const FeatureMap& features, std::span<const double> reference_feature,
                       Coord current_handle, Coord target, const TrackerConfig& config) {
  return search(features, reference_feature, current_handle, target, config);
}

TrackResult baseline_track(const FeatureMap& features, std::span<const double> reference_feature,
                           Coord current_handle, const TrackerConfig& config) {
  return search(features, reference_feature, current_handle, std::nullopt, config);
}

}  // namespace dragpd
