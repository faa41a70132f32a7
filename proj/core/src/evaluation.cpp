// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include "dragpd/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <thread>

#include "dragpd/edit_spec.hpp"
#include "dragpd/error.hpp"
#include "dragpd/optimizer.hpp"
#include "dragpd/random.hpp"
#include "json_io.hpp"

namespace dragpd {

double mean_distance(const std::vector<Coord>& handles, const std::vector<Coord>& targets) {
  if (handles.empty() || handles.size() != targets.size()) {
    fail(ErrorKind::kInvalidArgument, "mean distance needs equal, non-empty point lists");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < handles.size(); ++i) {
    sum += std::hypot(handles[i].row - targets[i].row, handles[i].col - targets[i].col);
  }
  return sum / static_cast<double>(handles.size());
}

SemanticScores semantic_scores(const Image& image, const std::string& prompt_object,
                               const std::string& prompt_target,
                               const VisionLanguageEncoder& encoder) {
  const Embedding img = encoder.embed_image(image.pixels());
  return {cosine_similarity(img, encoder.embed_text(prompt_object)),
          cosine_similarity(img, encoder.embed_text(prompt_target))};
}

double PixelDifferenceMetric::distance(const Image& a, const Image& b) const {
  if (!a.pixels().same_shape(b.pixels())) {
    fail(ErrorKind::kInvalidArgument, "perceptual distance needs images of equal size");
  }
  double sum = 0.0;
  const auto av = a.pixels().values();
  const auto bv = b.pixels().values();
  for (std::size_t i = 0; i < av.size(); ++i) sum += std::abs(av[i] - bv[i]);
  return av.empty() ? 0.0 : sum / static_cast<double>(av.size());
}

std::optional<double> perceptual_similarity(const Image& a, const Image& b,
                                            const PerceptualMetric* metric) {
  if (metric == nullptr) return std::nullopt;
  return 1.0 - metric->distance(a, b);
}

MetricReport session_metrics(const EditSession& session, const Image* result,
                             const PerceptualMetric* perceptual) {
  MetricReport m;
  const int ds = session.backend ? session.backend->descriptor().downsample : 1;
  std::vector<Coord> handles;
  std::vector<Coord> targets;
  for (const PointPair& p : session.request.pairs) {
    handles.push_back({p.handle.row * ds, p.handle.col * ds});
    targets.push_back({p.target.row * ds, p.target.col * ds});
  }
  m.mean_distance = mean_distance(handles, targets);
  for (const StepReport& r : session.history) m.wall_clock_s += r.wall_ms / 1000.0;
  if (result != nullptr) {
    const EditRequest& req = session.request;
    if (session.encoder && !req.prompt_initial.empty() && !req.prompt_target.empty()) {
      const SemanticScores s =
          semantic_scores(*result, req.prompt_initial, req.prompt_target, *session.encoder);
      m.clip_obj = s.clip_obj;
      m.clip_tar = s.clip_tar;
    }
    m.one_minus_lpips = perceptual_similarity(req.image, *result, perceptual);
  }
  return m;
}

std::string metric_report_to_json(const MetricReport& report) {
  return json_io::metric_report(report).dump(2);
}

std::string history_to_json(const std::vector<StepReport>& history) {
  nlohmann::json out = nlohmann::json::array();
  for (const StepReport& r : history) out.push_back(json_io::step_report(r));
  return out.dump(2);
}

std::vector<StepReport> history_from_json(const std::string& text) {
  std::vector<StepReport> out;
  try {
    for (const auto& r : nlohmann::json::parse(text)) out.push_back(json_io::parse_step_report(r));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("malformed history: ") + e.what());
  }
  return out;
}

namespace {

BenchmarkCase run_case(const std::filesystem::path& spec_path, const BenchmarkConfig& config) {
  BenchmarkCase out;
  out.case_id = spec_path.stem().string();
  const auto start = std::chrono::steady_clock::now();
  try {
    EditSpec spec = read_edit_spec(spec_path);
    if (config.adjust) config.adjust(spec);
    resolve_edit_spec(spec, spec_path.parent_path());
    EditSession session = prepare_session(spec.request, spec.backend_name, spec.backend_options,
                                          spec.encoder_name, spec.optimizer);
    if (session.status == SessionStatus::kFailed) fail(ErrorKind::kNumerical, session.failure_cause);
    const DragResult result = run_drag(session);
    out.status = to_string(result.status);
    out.steps = session.step_index();
    if (result.status == SessionStatus::kFailed) fail(ErrorKind::kNumerical, session.failure_cause);

    out.metrics = session_metrics(session, &result.image, config.perceptual.get());
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
    if (out.status.empty()) out.status = "failed";
  }
  // End to end, preparation included.
  out.metrics.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

void accumulate(std::optional<double>& sum, const std::optional<double>& v) {
  if (v) sum = sum.value_or(0.0) + *v;
}

}  // namespace

BenchmarkReport run_benchmark(const std::filesystem::path& spec_dir, const BenchmarkConfig& config) {
  if (!std::filesystem::is_directory(spec_dir)) {
    fail(ErrorKind::kNotFound, "benchmark directory " + spec_dir.string() + " does not exist");
  }
  if (config.workers < 1) fail(ErrorKind::kInvalidArgument, "workers must be >= 1");
  std::vector<std::filesystem::path> specs;
  for (const auto& entry : std::filesystem::directory_iterator(spec_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
    // Skip report and history files written by `dragpd edit`.
    const std::string inner = entry.path().stem().extension().string();
    if (inner == ".report" || inner == ".history") continue;
    specs.push_back(entry.path());
  }
  std::sort(specs.begin(), specs.end());

  BenchmarkReport report;
  report.cases.resize(specs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      report.cases[i] = run_case(specs[i], config);
    }
  };
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(config.workers), specs.size());
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  // Means over successful cases; optional columns average the cases that have them.
  MetricReport sum;
  int ok = 0;
  int clip = 0;
  int lpips = 0;
  for (const BenchmarkCase& c : report.cases) {
    if (!c.ok) {
      ++report.failed;
      continue;
    }
    ++ok;
    sum.mean_distance += c.metrics.mean_distance;
    sum.wall_clock_s += c.metrics.wall_clock_s;
    accumulate(sum.clip_obj, c.metrics.clip_obj);
    accumulate(sum.clip_tar, c.metrics.clip_tar);
    accumulate(sum.one_minus_lpips, c.metrics.one_minus_lpips);
    clip += c.metrics.clip_obj ? 1 : 0;
    lpips += c.metrics.one_minus_lpips ? 1 : 0;
  }
  if (ok > 0) {
    report.mean.mean_distance = sum.mean_distance / ok;
    report.mean.wall_clock_s = sum.wall_clock_s / ok;
  }
  if (clip > 0) {
    report.mean.clip_obj = *sum.clip_obj / clip;
    report.mean.clip_tar = *sum.clip_tar / clip;
  }
  if (lpips > 0) report.mean.one_minus_lpips = *sum.one_minus_lpips / lpips;
  return report;
}

std::string BenchmarkReport::to_json() const {
  nlohmann::json cs = nlohmann::json::array();
  for (const BenchmarkCase& c : cases) {
    cs.push_back({{"case_id", c.case_id},
                  {"ok", c.ok},
                  {"error", c.error},
                  {"status", c.status},
                  {"steps", c.steps},
                  {"metrics", json_io::metric_report(c.metrics)}});
  }
  const nlohmann::json doc = {{"version", kVersion},
                              {"cases", cs},
                              {"mean", json_io::metric_report(mean)},
                              {"failed", failed}};
  return doc.dump(2);
}

BenchmarkReport BenchmarkReport::from_json(const std::string& text) {
  BenchmarkReport r;
  try {
    const auto doc = nlohmann::json::parse(text);
    const int version = doc.at("version").get<int>();
    if (version != kVersion) {
      fail(ErrorKind::kInvalidArgument, "unsupported report version " + std::to_string(version));
    }
    for (const auto& c : doc.at("cases")) {
      BenchmarkCase bc;
      bc.case_id = c.at("case_id").get<std::string>();
      bc.ok = c.at("ok").get<bool>();
      bc.error = c.at("error").get<std::string>();
      bc.status = c.at("status").get<std::string>();
      bc.steps = c.at("steps").get<int>();
      bc.metrics = json_io::parse_metric_report(c.at("metrics"));
      r.cases.push_back(std::move(bc));
    }
    r.mean = json_io::parse_metric_report(doc.at("mean"));
    r.failed = doc.at("failed").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("malformed report: ") + e.what());
  }
  return r;
}

Image blob_image(int height, int width, Coord center, const BlobStyle& style) {
  Image im(height, width);
  const double two_s2 = 2.0 * style.sigma * style.sigma;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dy = y - center.row;
      const double dx = x - center.col;
      const double g = std::exp(-(dy * dy + dx * dx) / two_s2);
      for (int c = 0; c < 3; ++c) im.at(c, y, x) = style.background[c] + style.amplitude[c] * g;
    }
  }
  return im;
}

std::vector<SyntheticCase> synthetic_suite(int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SyntheticCase> cases;
  for (int i = 0; i < count; ++i) {
    const double angle = rng.uniform() * 2.0 * std::numbers::pi;
    const int cy = 11 + rng.integer(0, 10);
    const int cx = 11 + rng.integer(0, 10);
    const int ty = std::clamp(static_cast<int>(std::lround(cy + 10.0 * std::sin(angle))), 2, 29);
    const int tx = std::clamp(static_cast<int>(std::lround(cx + 10.0 * std::cos(angle))), 2, 29);
    BlobStyle style;
    style.amplitude = {0.5 + 0.3 * rng.uniform(), 0.3 * rng.uniform(), -0.4 * rng.uniform()};
    char id[16];
    std::snprintf(id, sizeof id, "case%02d", i);
    cases.push_back({id, blob_image(32, 32, {cy, cx}, style), PointPair::start({cy, cx}, {ty, tx})});
  }
  return cases;
}

void write_synthetic_suite(const std::filesystem::path& dir,
                           const std::vector<SyntheticCase>& cases) {
  std::filesystem::create_directories(dir);
  for (const SyntheticCase& c : cases) {
    write_png(dir / (c.case_id + ".png"), c.image);
    const nlohmann::json spec = {
        {"version", 1},
        {"image", c.case_id + ".png"},
        {"points", {{{"handle", json_io::coord(c.pair.handle)},
                     {"target", json_io::coord(c.pair.target)}}}},
        {"optimizer", {{"profile", "synthetic"}}},
        {"backend", {{"name", "synthetic"}}}};
    const std::string text = spec.dump(2) + "\n";
    write_file_bytes(dir / (c.case_id + ".json"),
                     std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
}

}  // namespace dragpd
