// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dragpd/adapter_weights.hpp"
#include "dragpd/backend.hpp"

namespace dragpd {

struct AdaptationConfig {
  int rank = 16;
  int steps = 80;
  double learning_rate = 1e-3;
  // Noise draws per step. The draw set is fixed for the whole run so the
  // logged loss curve is a deterministic full-batch objective.
  int batch = 4;
  int held_out_draws = 8;
  std::uint64_t seed = 7;
  // Empty = every slot the backend exposes.
  std::vector<std::string> target_layers;
};

struct AdaptationReport {
  std::vector<double> loss_curve;  // training-batch loss before each step, then final
  double held_out_before = 0.0;
  double held_out_after = 0.0;
};

// Fits per-image low-rank deltas with the noise-prediction objective on the
// clean latent of `image`. Aborts with kNumerical if the loss goes non-finite.
AdapterWeights finetune_identity(const Image& image, const BackendPtr& backend,
                                 const AdaptationConfig& config,
                                 AdaptationReport* report = nullptr);

// Mean squared noise-prediction error over `draws` seeded (timestep, noise)
// draws.
double reconstruction_error(const Backend& backend, const LatentCode& z0, int draws,
                            std::uint64_t seed);

BackendPtr apply_adapters(const BackendPtr& backend, const AdapterWeights& weights);
BackendPtr remove_adapters(const BackendPtr& backend);

void save_adapters(const std::filesystem::path& path, const AdapterWeights& weights);
AdapterWeights load_adapters(const std::filesystem::path& path);

}  // namespace dragpd
