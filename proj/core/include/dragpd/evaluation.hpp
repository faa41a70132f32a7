// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dragpd/encoder.hpp"
#include "dragpd/image.hpp"
#include "dragpd/objective.hpp"
#include "dragpd/optimizer.hpp"
#include "dragpd/tensor.hpp"

namespace dragpd {

struct EditSpec;

struct MetricReport {
  double mean_distance = 0.0;
  std::optional<double> clip_obj;         // absent when no encoder
  std::optional<double> clip_tar;
  std::optional<double> one_minus_lpips;  // absent when no perceptual model
  double wall_clock_s = 0.0;

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

// (1/n) sum_i |handle_i - target_i|_2
double mean_distance(const std::vector<Coord>& handles, const std::vector<Coord>& targets);

struct SemanticScores {
  double clip_obj = 0.0;
  double clip_tar = 0.0;
};

SemanticScores semantic_scores(const Image& image, const std::string& prompt_object,
                               const std::string& prompt_target,
                               const VisionLanguageEncoder& encoder);

// Distance model behind the 1 - LPIPS column. Returns d(a, b) in [0, 1].
class PerceptualMetric {
 public:
  virtual ~PerceptualMetric() = default;
  virtual std::string name() const = 0;
  virtual double distance(const Image& a, const Image& b) const = 0;
};

// Mean absolute pixel difference; black vs white is distance 1.
class PixelDifferenceMetric final : public PerceptualMetric {
 public:
  std::string name() const override { return "pixel-l1"; }
  double distance(const Image& a, const Image& b) const override;
};

// 1 - d(a, b); nullopt when no model is plugged in.
std::optional<double> perceptual_similarity(const Image& a, const Image& b,
                                            const PerceptualMetric* metric);

// Metrics of one finished session: MD in image pixels over the tracked
// handles, CLIP scores when the session has an encoder and both prompts,
// perceptual similarity of `result` to the source image, and wall clock as
// the summed step time. `result` is null for failed runs.
MetricReport session_metrics(const EditSession& session, const Image* result,
                             const PerceptualMetric* perceptual);

std::string metric_report_to_json(const MetricReport& report);
std::string history_to_json(const std::vector<StepReport>& history);
std::vector<StepReport> history_from_json(const std::string& text);

struct BenchmarkConfig {
  int workers = 1;
  // Applied to every case after its spec is read (CLI flag overrides).
  std::function<void(EditSpec&)> adjust;
  std::shared_ptr<const PerceptualMetric> perceptual =
      std::make_shared<PixelDifferenceMetric>();
};

struct BenchmarkCase {
  std::string case_id;  // spec file stem
  bool ok = false;
  std::string error;
  std::string status;   // converged / capped / failed
  int steps = 0;
  MetricReport metrics;

  friend bool operator==(const BenchmarkCase&, const BenchmarkCase&) = default;
};

struct BenchmarkReport {
  static constexpr int kVersion = 1;
  std::vector<BenchmarkCase> cases;  // sorted by case_id
  MetricReport mean;                 // over successful cases
  int failed = 0;

  std::string to_json() const;
  static BenchmarkReport from_json(const std::string& text);
  friend bool operator==(const BenchmarkReport&, const BenchmarkReport&) = default;
};

// Runs every *.json edit spec in `spec_dir` end to end, skipping the
// *.report.json and *.history.json files `dragpd edit` leaves behind. Case
// failures are recorded and the batch continues.
BenchmarkReport run_benchmark(const std::filesystem::path& spec_dir,
                              const BenchmarkConfig& config = {});

// Planted-blob drag fixtures for the synthetic backbone.
struct BlobStyle {
  double sigma = 3.0;
  std::array<double, 3> background{0.15, 0.25, 0.6};
  std::array<double, 3> amplitude{0.7, 0.2, -0.3};  // added at the blob centre
};

Image blob_image(int height, int width, Coord center, const BlobStyle& style = {});

struct SyntheticCase {
  std::string case_id;
  Image image;
  PointPair pair;
};

// `count` 32x32 cases: blob centres in [11, 21]^2, targets 10 px away in a
// random direction (clamped to [2, 29]), random blob colours.
std::vector<SyntheticCase> synthetic_suite(int count, std::uint64_t seed);

// Writes <case_id>.png and <case_id>.json edit specs (synthetic profile).
void write_synthetic_suite(const std::filesystem::path& dir,
                           const std::vector<SyntheticCase>& cases);

}  // namespace dragpd
