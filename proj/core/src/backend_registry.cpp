// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <filesystem>
#include <map>
#include <mutex>

#include "dragpd/backend.hpp"
#include "dragpd/error.hpp"
#include "dragpd/synthetic_backend.hpp"

namespace dragpd {

bool Backend::has_feature_layer(std::string_view layer) const {
  const auto& ids = descriptor().feature_layer_ids;
  return std::find(ids.begin(), ids.end(), layer) != ids.end();
}

namespace {

BackendPtr unavailable_latent_diffusion(const BackendOptions& options) {
  if (options.checkpoint_dir.empty()) {
    fail(ErrorKind::kInvalidArgument,
         "stable-diffusion-1.5 needs a checkpoint directory");
  }
  if (!std::filesystem::is_directory(options.checkpoint_dir)) {
    fail(ErrorKind::kNotFound, "checkpoint directory not found: " + options.checkpoint_dir);
  }
  fail(ErrorKind::kUnavailable,
       "stable-diffusion-1.5: this build has no neural-network runtime; register a "
       "factory for it with dragpd::register_backend");
}

struct Registry {
  Registry() {
    factories["synthetic"] = [](const BackendOptions& o) -> BackendPtr {
      return SyntheticBackend::create(o);
    };
    factories["stable-diffusion-1.5"] = unavailable_latent_diffusion;
  }

  std::mutex mutex;
  std::map<std::string, BackendFactory> factories;
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

void register_backend(const std::string& name, BackendFactory factory) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.factories[name] = std::move(factory);
}

BackendPtr make_backend(const std::string& name, const BackendOptions& options) {
  BackendFactory factory;
  {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    auto it = r.factories.find(name);
    if (it == r.factories.end()) {
      std::string known;
      for (const auto& [k, _] : r.factories) known += (known.empty() ? "" : ", ") + k;
      fail(ErrorKind::kNotFound, "unknown backend '" + name + "' (known: " + known + ")");
    }
    factory = it->second;
  }
  return factory(options);
}

std::vector<std::string> registered_backends() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> names;
  for (const auto& [k, _] : r.factories) names.push_back(k);
  return names;
}

}  // namespace dragpd
