// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "dragpd/optimizer.hpp"

namespace dragpd {

// Session checkpoint: a "session-checkpoint" container holding latents,
// adapters, handles, optimizer state, config and history.
void save_checkpoint(const std::filesystem::path& path, const EditSession& session);

// Rebuilds the backend and encoder through the registries from the names
// stored in the checkpoint.
EditSession load_checkpoint(const std::filesystem::path& path);

}  // namespace dragpd
