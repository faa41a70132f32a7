// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

// JSON mapping for engine types, shared by checkpoints, edit specs, reports
// and the HTTP service. Parsers report errors as "<field path>: <problem>".

#pragma once

#include <json.hpp>
#include <string>

#include "dragpd/evaluation.hpp"
#include "dragpd/optimizer.hpp"

namespace dragpd::json_io {

using json = nlohmann::json;

json coord(const Coord& c);
Coord parse_coord(const json& j, const std::string& path);

json weights(const LossWeights& w);
LossWeights parse_weights(const json& j, const std::string& path);

json toggles(const LossToggles& t);
LossToggles parse_toggles(const json& j, const std::string& path);

// Covers optimizer, tracker and adaptation sections.
json optimizer(const OptimizerConfig& c);
void parse_optimizer(const json& j, const std::string& path, OptimizerConfig& c);
json tracker(const TrackerConfig& c);
TrackerConfig parse_tracker(const json& j, const std::string& path);
json adaptation(const AdaptationConfig& c);
AdaptationConfig parse_adaptation(const json& j, const std::string& path);

json backend_options(const std::string& name, const BackendOptions& o);
BackendOptions parse_backend_options(const json& j, const std::string& path, std::string& name);

json step_report(const StepReport& r);
StepReport parse_step_report(const json& j);

json metric_report(const MetricReport& m);
MetricReport parse_metric_report(const json& j);

// Run-length mask text: "rle:<H>x<W>:<n0>,<n1>,..." with runs alternating
// protected (0) and editable (1) pixels in row-major order, starting with 0.
std::string mask_to_rle(const EditMask& mask);
EditMask mask_from_rle(const std::string& text, const std::string& path);

// The request minus its image; pairs keep current and original handles.
json request(const EditRequest& r);
void parse_request(const json& j, EditRequest& r);

}  // namespace dragpd::json_io
