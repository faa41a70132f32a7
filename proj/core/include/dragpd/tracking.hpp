// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>

#include "dragpd/backend.hpp"

namespace dragpd {

struct TrackerConfig {
  int r2 = 3;              // half-width of the square search window
  double lambda_dir = 0.05;
  double epsilon = 1e-8;
  double w_floor = 0.05;

  void validate() const;
};

struct Vec2 {
  double row = 0.0;
  double col = 0.0;
};

struct AngularWeight {
  double cos_theta = 0.0;
  double weight = 1.0;
};

struct TrackResult {
  Coord new_handle;
  double feature_distance = 0.0;   // D_j, L1 in feature space
  double weighted_distance = 0.0;  // D_j / w_j
  double cos_theta = 0.0;
  double weight = 1.0;
};

// (t - p) / (|t - p| + epsilon)
Vec2 direction_vector(Coord p, Coord t, double epsilon);

// cos = (dq . d) / (|dq| + epsilon); w = max(lambda * cos + 1 - lambda, w_floor).
AngularWeight angular_weight(Vec2 delta_q, Vec2 direction, const TrackerConfig& config);

// Candidate order: smallest weighted distance, then smallest raw distance,
// then largest weight, then the current handle itself, then row-major. With
// lambda_dir = 0 every weight is 1 and the order reduces to baseline_track's.
TrackResult dwpt_track(const FeatureMap& features, std::span<const double> reference_feature,
                       Coord current_handle, Coord target, const TrackerConfig& config);

// Nearest neighbour on raw L1 feature distance in the same window.
TrackResult baseline_track(const FeatureMap& features, std::span<const double> reference_feature,
                           Coord current_handle, const TrackerConfig& config);

}  // namespace dragpd
