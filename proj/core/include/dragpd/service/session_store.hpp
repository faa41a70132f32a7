// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dragpd/evaluation.hpp"
#include "dragpd/optimizer.hpp"

namespace dragpd::service {

struct ServiceConfig {
  std::filesystem::path data_root = "dragpd-data";
  int port = 8080;
  std::string backend = "synthetic";
  std::size_t max_upload_bytes = 16u << 20;
  int max_image_side = 1024;
  int workers = 2;
  int checkpoint_interval = 10;

  // Defaults overridden by DRAGPD_DATA_ROOT, DRAGPD_PORT and DRAGPD_BACKEND.
  static ServiceConfig from_env();
};

// created -> prepared -> running -> {converged | capped | failed}
// A failed preparation goes created -> failed.
enum class SessionState { kCreated, kPrepared, kRunning, kConverged, kCapped, kFailed };

const char* to_string(SessionState s);
std::optional<SessionState> parse_session_state(std::string_view s);
bool is_terminal(SessionState s);
bool transition_allowed(SessionState from, SessionState to);

// One entry of a session's progress stream. `data` is a JSON document.
struct Event {
  std::uint64_t seq = 0;
  std::string type;  // "state", "step" or "terminal"
  std::string data;
};

struct EventBatch {
  std::vector<Event> events;
  bool finished = false;  // terminal event delivered, nothing more will come
};

struct SessionResult {
  SessionState state = SessionState::kCreated;
  std::optional<std::vector<std::uint8_t>> png;  // absent for failed sessions
  std::optional<MetricReport> metrics;
  std::vector<StepReport> history;
  std::string diagnostic;
};

// Owns every session: validation, the state machine, persistence under
// `data_root/sessions/<id>/` and the background run workers. Thread-safe.
class SessionStore {
 public:
  explicit SessionStore(ServiceConfig config);
  ~SessionStore();
  SessionStore(const SessionStore&) = delete;
  SessionStore& operator=(const SessionStore&) = delete;

  const ServiceConfig& config() const noexcept { return config_; }

  // Body is PNG bytes. Rejects empty, undecodable and oversized uploads.
  std::string create_session(std::span<const std::uint8_t> png);

  // Body is an edit spec document without "image". Returns the normalized
  // spec as JSON. Allowed in created and prepared (the latter re-prepares).
  std::string set_edit(const std::string& id, const std::string& body);

  void prepare(const std::string& id);
  // Queues the run on a worker; returns once the session is running.
  void run(const std::string& id);
  // One synchronous drag step; the session enters running if it was prepared.
  StepReport step(const std::string& id);
  void cancel(const std::string& id);

  SessionState state(const std::string& id) const;
  std::string describe(const std::string& id) const;  // JSON summary
  std::vector<std::string> list() const;

  // Events with seq > after_seq; waits up to `wait` for at least one.
  EventBatch events_since(const std::string& id, std::uint64_t after_seq,
                          std::chrono::milliseconds wait) const;

  SessionResult result(const std::string& id) const;
  std::optional<std::vector<std::uint8_t>> preview_png(const std::string& id, int step) const;

  // Blocks until the session has no active worker. False on timeout.
  bool wait_idle(const std::string& id, std::chrono::milliseconds timeout) const;

  // Stops accepting runs, cancels active ones and joins the workers.
  void shutdown();

 private:
  struct Session;
  using SessionPtr = std::shared_ptr<Session>;

  SessionPtr find(const std::string& id) const;
  void reload();
  void worker_loop();
  void execute_run(const SessionPtr& s);
  void emit(Session& s, const std::string& type, const std::string& data);
  void set_state(Session& s, SessionState to);
  void persist_record(const Session& s) const;
  void finalize(Session& s);
  std::filesystem::path session_dir(const std::string& id) const;

  ServiceConfig config_;
  mutable std::mutex mutex_;
  std::map<std::string, SessionPtr> sessions_;
  std::deque<SessionPtr> queue_;
  std::condition_variable queue_cv_;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
  std::uint64_t id_counter_ = 0;
};

}  // namespace dragpd::service
