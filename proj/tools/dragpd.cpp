// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

// dragpd command-line tool.
//
//   dragpd edit <spec.json> [--backend B] [--ablate ppr|reward|dwpt]... [--max-steps N] [--out DIR]
//   dragpd bench <dir> [--workers N] [--ablate ...] [--max-steps N] [--out FILE]
//   dragpd synth <dir> [--cases N] [--seed S]
//   dragpd serve [--data-root DIR] [--host H] [--port P] [--backend B]
//
// Exit codes: 0 success, 2 invalid spec or arguments, 3 missing file,
// 4 numerical failure or failed run, 5 backend unavailable, 1 anything else.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dragpd/edit_spec.hpp"
#include "dragpd/error.hpp"
#include "dragpd/evaluation.hpp"
#include "dragpd/image.hpp"
#include "dragpd/optimizer.hpp"
#include "dragpd/service/http_api.hpp"
#include "dragpd/service/session_store.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitNotFound = 3;
constexpr int kExitNumerical = 4;
constexpr int kExitUnavailable = 5;

int exit_code(dragpd::ErrorKind kind) {
  using dragpd::ErrorKind;
  switch (kind) {
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kGeometry: return kExitInvalid;
    case ErrorKind::kNotFound: return kExitNotFound;
    case ErrorKind::kNumerical: return kExitNumerical;
    case ErrorKind::kUnavailable: return kExitUnavailable;
    default: return kExitOther;
  }
}

struct Overrides {
  std::string backend;
  std::vector<std::string> ablate;
  int max_steps = 0;

  void apply(dragpd::EditSpec& spec) const {
    if (!backend.empty()) spec.backend_name = backend;
    for (const std::string& term : ablate) {
      if (term == "ppr") spec.request.toggles.ppr_on = false;
      if (term == "reward") spec.request.toggles.reward_on = false;
      if (term == "dwpt") spec.request.toggles.dwpt_on = false;
    }
    if (max_steps > 0) spec.optimizer.max_steps = max_steps;
  }
};

void add_overrides(CLI::App* cmd, Overrides& o, bool with_backend) {
  if (with_backend) cmd->add_option("--backend", o.backend, "Backend name (default: from spec)");
  cmd->add_option("--ablate", o.ablate, "Disable a term; repeatable")
      ->check(CLI::IsMember({"ppr", "reward", "dwpt"}))
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  cmd->add_option("--max-steps", o.max_steps, "Override the drag step cap")
      ->check(CLI::PositiveNumber);
}

int cmd_edit(const fs::path& spec_path, const Overrides& overrides, const fs::path& out_dir) {
  dragpd::EditSpec spec = dragpd::read_edit_spec(spec_path);
  overrides.apply(spec);
  dragpd::resolve_edit_spec(spec, spec_path.parent_path());

  dragpd::EditSession session =
      dragpd::prepare_session(spec.request, spec.backend_name, spec.backend_options,
                              spec.encoder_name, spec.optimizer);
  std::optional<dragpd::Image> image;
  if (session.status != dragpd::SessionStatus::kFailed) {
    image = dragpd::run_drag(session, [](const dragpd::StepReport& r) {
              std::fprintf(stderr, "step %3d  loss %.6g  md %.3f\n", r.step_index, r.loss.total,
                           r.mean_distance);
              return true;
            }).image;
  }
  const bool failed = session.status == dragpd::SessionStatus::kFailed;

  const fs::path dir = out_dir.empty() ? spec_path.parent_path() : out_dir;
  if (!dir.empty()) fs::create_directories(dir);
  const std::string stem = spec_path.stem().string();
  const fs::path png_path = dir / (stem + ".result.png");
  const fs::path report_path = dir / (stem + ".report.json");
  const fs::path history_path = dir / (stem + ".history.json");

  const dragpd::PixelDifferenceMetric pixel;
  const dragpd::MetricReport metrics =
      dragpd::session_metrics(session, failed ? nullptr : &*image, &pixel);
  json report = {
      {"spec", spec_path.filename().string()},
      {"status", dragpd::to_string(session.status)},
      {"steps", session.step_index()},
      {"metrics", json::parse(dragpd::metric_report_to_json(metrics))},
      {"image", failed ? json(nullptr) : json(png_path.filename().string())},
      {"failure_cause", session.failure_cause},
  };
  if (!failed) dragpd::write_png(png_path, *image);
  const std::string report_text = report.dump(2) + "\n";
  const std::string history_text = dragpd::history_to_json(session.history) + "\n";
  dragpd::write_file_bytes(report_path, {reinterpret_cast<const std::uint8_t*>(report_text.data()),
                                         report_text.size()});
  dragpd::write_file_bytes(history_path,
                           {reinterpret_cast<const std::uint8_t*>(history_text.data()),
                            history_text.size()});

  if (failed) {
    std::cerr << "dragpd: edit failed: " << session.failure_cause << "\n";
    return kExitNumerical;
  }
  std::cout << dragpd::to_string(session.status) << " after " << session.step_index()
            << " steps, MD " << metrics.mean_distance << " px\n"
            << png_path.string() << "\n";
  return kExitOk;
}

int cmd_bench(const fs::path& dir, const Overrides& overrides, int workers,
              const fs::path& out_path) {
  dragpd::BenchmarkConfig config;
  config.workers = workers;
  config.adjust = [&overrides](dragpd::EditSpec& spec) { overrides.apply(spec); };
  const dragpd::BenchmarkReport report = dragpd::run_benchmark(dir, config);
  const std::string text = report.to_json() + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    dragpd::write_file_bytes(out_path,
                             {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  }
  for (const dragpd::BenchmarkCase& c : report.cases) {
    std::fprintf(stderr, "%-12s %-9s steps %3d  md %.3f%s%s\n", c.case_id.c_str(),
                 c.status.c_str(), c.steps, c.metrics.mean_distance, c.ok ? "" : "  ",
                 c.error.c_str());
  }
  std::fprintf(stderr, "mean md %.3f over %zu cases, %d failed\n", report.mean.mean_distance,
               report.cases.size() - report.failed, report.failed);
  return report.failed == 0 ? kExitOk : kExitNumerical;
}

int cmd_synth(const fs::path& dir, int cases, std::uint64_t seed) {
  dragpd::write_synthetic_suite(dir, dragpd::synthetic_suite(cases, seed));
  std::cout << "wrote " << cases << " cases to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_serve(dragpd::service::ServiceConfig config, const std::string& host) {
  // Block the stop signals before any thread starts so only the waiter sees them.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  dragpd::service::SessionStore store(config);
  dragpd::service::HttpServer server(store);
  if (!server.bind(host, config.port)) {
    std::cerr << "dragpd: cannot bind " << host << ":" << config.port << "\n";
    return kExitOther;
  }
  std::cerr << "dragpd: serving on http://" << host << ":" << server.port() << "/v1, data root "
            << config.data_root.string() << "\n";

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&stop_signals, &sig);
    server.stop();
  });
  server.serve();
  store.shutdown();
  // serve() can also return on a listener error; wake the waiter in that case.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dragpd: drag-based latent image editing"};
  app.require_subcommand(1);

  Overrides overrides;
  fs::path target;
  fs::path out;

  CLI::App* edit = app.add_subcommand("edit", "Run one edit spec; writes result, report and history");
  edit->add_option("spec", target, "Edit spec (JSON)")->required();
  edit->add_option("--out", out, "Output directory (default: beside the spec)");
  add_overrides(edit, overrides, true);

  int workers = 1;
  CLI::App* bench = app.add_subcommand("bench", "Run every *.json spec in a directory");
  bench->add_option("dir", target, "Spec directory")->required();
  bench->add_option("--workers", workers, "Parallel cases")->check(CLI::PositiveNumber);
  bench->add_option("--out", out, "Report file (default: stdout)");
  add_overrides(bench, overrides, true);

  int cases = 10;
  std::uint64_t seed = 2024;
  CLI::App* synth = app.add_subcommand("synth", "Write the planted-blob fixture suite");
  synth->add_option("dir", target, "Output directory")->required();
  synth->add_option("--cases", cases, "Number of cases")->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "Generator seed");

  dragpd::service::ServiceConfig service_config = dragpd::service::ServiceConfig::from_env();
  std::string host = "127.0.0.1";
  CLI::App* serve = app.add_subcommand("serve", "Start the HTTP session service");
  serve->add_option("--data-root", service_config.data_root, "Session storage (env DRAGPD_DATA_ROOT)");
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--port", service_config.port, "Listen port (env DRAGPD_PORT)");
  serve->add_option("--backend", service_config.backend, "Default backend (env DRAGPD_BACKEND)");
  serve->add_option("--workers", service_config.workers, "Run workers")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*edit) return cmd_edit(target, overrides, out);
    if (*bench) return cmd_bench(target, overrides, workers, out);
    if (*synth) return cmd_synth(target, cases, seed);
    if (*serve) return cmd_serve(service_config, host);
  } catch (const dragpd::Error& e) {
    std::cerr << "dragpd: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "dragpd: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}
