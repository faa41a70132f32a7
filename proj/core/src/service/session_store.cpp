// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include "dragpd/service/session_store.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <random>
#include <sstream>

#include "dragpd/checkpoint.hpp"
#include "dragpd/edit_spec.hpp"
#include "dragpd/error.hpp"
#include "json_io.hpp"

namespace dragpd::service {

using json = nlohmann::json;

namespace {

constexpr const char* kRecordFile = "record.json";
constexpr const char* kSourceFile = "source.png";
constexpr const char* kCheckpointFile = "checkpoint.dpdc";
constexpr const char* kResultFile = "result.png";

enum class Activity { kIdle, kRunning, kStepping };

std::string new_id() {
  static std::mutex m;
  static std::mt19937_64 gen{std::random_device{}()};
  std::lock_guard lock(m);
  std::ostringstream out;
  out << std::hex << gen() << gen();
  return out.str().substr(0, 24);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return {bytes.begin(), bytes.end()};
}

SessionState from_engine(SessionStatus s) {
  switch (s) {
    case SessionStatus::kConverged: return SessionState::kConverged;
    case SessionStatus::kCapped: return SessionState::kCapped;
    case SessionStatus::kFailed: return SessionState::kFailed;
    case SessionStatus::kReady: break;
  }
  return SessionState::kRunning;
}

}  // namespace

ServiceConfig ServiceConfig::from_env() {
  ServiceConfig c;
  if (const char* v = std::getenv("DRAGPD_DATA_ROOT"); v != nullptr && *v != '\0') c.data_root = v;
  if (const char* v = std::getenv("DRAGPD_PORT"); v != nullptr && *v != '\0') {
    try {
      c.port = std::stoi(v);
    } catch (const std::exception&) {
      fail(ErrorKind::kInvalidArgument, std::string("DRAGPD_PORT: not a number: ") + v);
    }
  }
  if (const char* v = std::getenv("DRAGPD_BACKEND"); v != nullptr && *v != '\0') c.backend = v;
  return c;
}

const char* to_string(SessionState s) {
  switch (s) {
    case SessionState::kCreated: return "created";
    case SessionState::kPrepared: return "prepared";
    case SessionState::kRunning: return "running";
    case SessionState::kConverged: return "converged";
    case SessionState::kCapped: return "capped";
    case SessionState::kFailed: return "failed";
  }
  return "unknown";
}

std::optional<SessionState> parse_session_state(std::string_view s) {
  for (SessionState v : {SessionState::kCreated, SessionState::kPrepared, SessionState::kRunning,
                         SessionState::kConverged, SessionState::kCapped, SessionState::kFailed}) {
    if (s == to_string(v)) return v;
  }
  return std::nullopt;
}

bool is_terminal(SessionState s) {
  return s == SessionState::kConverged || s == SessionState::kCapped || s == SessionState::kFailed;
}

bool transition_allowed(SessionState from, SessionState to) {
  switch (from) {
    case SessionState::kCreated:
      return to == SessionState::kPrepared || to == SessionState::kFailed;
    case SessionState::kPrepared:
      return to == SessionState::kRunning;
    case SessionState::kRunning:
      return is_terminal(to);
    default:
      return false;
  }
}

struct SessionStore::Session {
  std::string id;
  mutable std::mutex mutex;
  mutable std::condition_variable cv;

  SessionState state = SessionState::kCreated;
  Activity activity = Activity::kIdle;
  std::atomic<bool> cancel_requested{false};

  Image image;
  std::optional<EditSpec> spec;  // as submitted, before resolution
  std::optional<EditSession> engine;
  std::vector<StepReport> history;  // mirror readable while a worker runs
  std::optional<MetricReport> metrics;
  std::string failure_cause;

  std::vector<Event> events;
  std::uint64_t next_seq = 1;
};

namespace {

json step_event(const std::string& id, const StepReport& r, int reward_interval) {
  json j = json_io::step_report(r);
  j["k"] = r.step_index;
  if (reward_interval > 0 && r.step_index % reward_interval == 0) {
    j["preview"] = "/v1/sessions/" + id + "/previews/" + std::to_string(r.step_index) + ".png";
  } else {
    j["preview"] = nullptr;
  }
  return j;
}

json terminal_event(const std::string& id, SessionState state, int steps,
                    const std::optional<MetricReport>& metrics, const std::string& cause) {
  return {{"state", to_string(state)},
          {"steps", steps},
          {"metrics", metrics ? json_io::metric_report(*metrics) : json(nullptr)},
          {"result", state == SessionState::kFailed ? json(nullptr)
                                                    : json("/v1/sessions/" + id + "/result")},
          {"diagnostic", cause}};
}

EditSpec resolved(const EditSpec& spec, const Image& image) {
  EditSpec out = spec;
  resolve_edit_spec_with_image(out, image);
  return out;
}

}  // namespace

SessionStore::SessionStore(ServiceConfig config) : config_(std::move(config)) {
  if (config_.workers < 1) fail(ErrorKind::kInvalidArgument, "workers must be >= 1");
  if (config_.checkpoint_interval < 1) {
    fail(ErrorKind::kInvalidArgument, "checkpoint_interval must be >= 1");
  }
  std::filesystem::create_directories(config_.data_root / "sessions");
  reload();
  for (int i = 0; i < config_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

SessionStore::~SessionStore() { shutdown(); }

void SessionStore::shutdown() {
  {
    std::lock_guard lock(mutex_);
    if (stopping_ && workers_.empty()) return;
    stopping_ = true;
    for (auto& [id, s] : sessions_) s->cancel_requested = true;
  }
  queue_cv_.notify_all();
  for (auto& t : workers_) t.join();
  workers_.clear();
}

std::filesystem::path SessionStore::session_dir(const std::string& id) const {
  return config_.data_root / "sessions" / id;
}

SessionStore::SessionPtr SessionStore::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) fail(ErrorKind::kNotFound, "no session '" + id + "'");
  return it->second;
}

// Caller holds s.mutex.
void SessionStore::emit(Session& s, const std::string& type, const std::string& data) {
  s.events.push_back({s.next_seq++, type, data});
  s.cv.notify_all();
}

// Caller holds s.mutex.
void SessionStore::set_state(Session& s, SessionState to) {
  if (!transition_allowed(s.state, to)) {
    fail(ErrorKind::kConflict, std::string("illegal transition ") + to_string(s.state) + " -> " +
                                   to_string(to));
  }
  s.state = to;
  emit(s, "state", json{{"state", to_string(to)}}.dump());
}

// Caller holds s.mutex.
void SessionStore::persist_record(const Session& s) const {
  const json record = {
      {"id", s.id},
      {"state", to_string(s.state)},
      {"edit", s.spec ? json::parse(edit_spec_to_json(*s.spec)) : json(nullptr)},
      {"metrics", s.metrics ? json_io::metric_report(*s.metrics) : json(nullptr)},
      {"failure_cause", s.failure_cause}};
  write_text(session_dir(s.id) / kRecordFile, record.dump(2));
}

// Moves a session with an engine into its terminal state: checkpoint, result
// image, metrics, record and terminal event. Caller holds s.mutex and the
// engine is not being stepped.
void SessionStore::finalize(Session& s) {
  EditSession& e = *s.engine;
  if (e.status == SessionStatus::kReady) e.status = SessionStatus::kCapped;
  const auto dir = session_dir(s.id);
  std::optional<Image> image;
  if (e.status != SessionStatus::kFailed) {
    try {
      image = render_result(e);
      write_png(dir / kResultFile, *image);
    } catch (const Error& err) {
      e.status = SessionStatus::kFailed;
      e.failure_cause = err.what();
    }
  }
  s.failure_cause = e.failure_cause;
  if (e.backend && !e.request.pairs.empty()) {
    const PixelDifferenceMetric pixel;
    s.metrics = session_metrics(e, image ? &*image : nullptr, &pixel);
  }
  save_checkpoint(dir / kCheckpointFile, e);
  set_state(s, from_engine(e.status));
  persist_record(s);
  emit(s, "terminal",
       terminal_event(s.id, s.state, e.step_index(), s.metrics, s.failure_cause).dump());
}

std::string SessionStore::create_session(std::span<const std::uint8_t> png) {
  if (png.empty()) fail(ErrorKind::kInvalidArgument, "upload is empty");
  if (png.size() > config_.max_upload_bytes) {
    fail(ErrorKind::kInvalidArgument, "upload exceeds " + std::to_string(config_.max_upload_bytes) +
                                          " bytes");
  }
  Image image = decode_png(png);
  if (image.height() > config_.max_image_side || image.width() > config_.max_image_side) {
    fail(ErrorKind::kInvalidArgument,
         "image " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
             " exceeds the " + std::to_string(config_.max_image_side) + " px side limit");
  }
  auto s = std::make_shared<Session>();
  s->image = std::move(image);
  {
    std::lock_guard lock(mutex_);
    do {
      s->id = new_id() + std::to_string(id_counter_++);
    } while (sessions_.count(s->id) != 0);
  }
  const auto dir = session_dir(s->id);
  std::filesystem::create_directories(dir / "previews");
  write_file_bytes(dir / kSourceFile, png);
  {
    std::lock_guard lock(s->mutex);
    persist_record(*s);
    emit(*s, "state", json{{"state", to_string(s->state)}}.dump());
  }
  std::lock_guard lock(mutex_);
  sessions_[s->id] = s;
  return s->id;
}

std::string SessionStore::set_edit(const std::string& id, const std::string& body) {
  const SessionPtr s = find(id);
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error&) {
    parse_edit_spec(body);  // reports the line
    throw;
  }
  if (!doc.is_object()) fail(ErrorKind::kInvalidArgument, "$: expected an object");
  if (!doc.contains("version")) doc["version"] = 1;
  if (!doc.contains("image")) doc["image"] = kSourceFile;
  if (!doc.contains("backend")) doc["backend"] = json::object();
  if (doc["backend"].is_object() && !doc["backend"].contains("name")) {
    doc["backend"]["name"] = config_.backend;
  }
  EditSpec spec = parse_edit_spec(doc.dump());
  spec.image_path = kSourceFile;

  std::unique_lock lock(s->mutex);
  if (s->activity != Activity::kIdle ||
      (s->state != SessionState::kCreated && s->state != SessionState::kPrepared)) {
    fail(ErrorKind::kConflict, std::string("cannot edit a session that is ") + to_string(s->state));
  }
  const EditSpec full = resolved(spec, s->image);
  if (s->state == SessionState::kCreated) {
    s->spec = spec;
    persist_record(*s);
    return edit_spec_to_json(spec);
  }
  // Prepared: prepare again from the new request; the old preparation stays on failure.
  s->activity = Activity::kStepping;
  lock.unlock();
  std::optional<EditSession> engine;
  std::string error;
  try {
    engine = prepare_session(full.request, full.backend_name, full.backend_options,
                             full.encoder_name, full.optimizer);
    if (engine->status == SessionStatus::kFailed) error = engine->failure_cause;
  } catch (const std::exception& e) {
    error = e.what();
  }
  lock.lock();
  s->activity = Activity::kIdle;
  s->cv.notify_all();
  if (!error.empty()) fail(ErrorKind::kInvalidArgument, "edit rejected by preparation: " + error);
  s->spec = spec;
  s->engine = std::move(engine);
  s->history.clear();
  save_checkpoint(session_dir(id) / kCheckpointFile, *s->engine);
  persist_record(*s);
  return edit_spec_to_json(spec);
}

void SessionStore::prepare(const std::string& id) {
  const SessionPtr s = find(id);
  std::unique_lock lock(s->mutex);
  if (s->state != SessionState::kCreated || s->activity != Activity::kIdle) {
    fail(ErrorKind::kConflict, std::string("cannot prepare a session that is ") + to_string(s->state));
  }
  if (!s->spec) fail(ErrorKind::kConflict, "no edit has been set");
  const EditSpec full = resolved(*s->spec, s->image);
  s->activity = Activity::kStepping;
  lock.unlock();
  std::optional<EditSession> engine;
  std::exception_ptr error;
  try {
    engine = prepare_session(full.request, full.backend_name, full.backend_options,
                             full.encoder_name, full.optimizer);
  } catch (...) {
    error = std::current_exception();
  }
  lock.lock();
  s->activity = Activity::kIdle;
  s->cv.notify_all();
  if (error) std::rethrow_exception(error);
  s->engine = std::move(engine);
  if (s->engine->status == SessionStatus::kFailed) {
    finalize(*s);
    return;
  }
  save_checkpoint(session_dir(id) / kCheckpointFile, *s->engine);
  set_state(*s, SessionState::kPrepared);
  persist_record(*s);
}

void SessionStore::run(const std::string& id) {
  const SessionPtr s = find(id);
  {
    std::lock_guard lock(s->mutex);
    if (s->activity != Activity::kIdle) {
      fail(ErrorKind::kConflict, "session already has an active run");
    }
    if (s->state != SessionState::kPrepared && s->state != SessionState::kRunning) {
      fail(ErrorKind::kConflict, std::string("cannot run a session that is ") + to_string(s->state));
    }
    if (s->state == SessionState::kPrepared) set_state(*s, SessionState::kRunning);
    s->activity = Activity::kRunning;
    s->cancel_requested = false;
    persist_record(*s);
  }
  {
    std::lock_guard lock(mutex_);
    if (stopping_) {
      std::lock_guard slock(s->mutex);
      s->activity = Activity::kIdle;
      fail(ErrorKind::kUnavailable, "service is shutting down");
    }
    queue_.push_back(s);
  }
  queue_cv_.notify_one();
}

StepReport SessionStore::step(const std::string& id) {
  const SessionPtr s = find(id);
  {
    std::lock_guard lock(s->mutex);
    if (s->activity != Activity::kIdle) {
      fail(ErrorKind::kConflict, "session already has an active run");
    }
    if (s->state != SessionState::kPrepared && s->state != SessionState::kRunning) {
      fail(ErrorKind::kConflict, std::string("cannot step a session that is ") + to_string(s->state));
    }
    if (s->state == SessionState::kPrepared) set_state(*s, SessionState::kRunning);
    s->activity = Activity::kStepping;
    s->cancel_requested = false;
    persist_record(*s);
  }
  EditSession& e = *s->engine;
  std::optional<StepReport> report;
  if (check_convergence(e, e.config.convergence_radius)) {
    e.status = SessionStatus::kConverged;
  } else {
    try {
      report = drag_step(e);
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::kNumerical) {
        std::lock_guard lock(s->mutex);
        s->activity = Activity::kIdle;
        s->cv.notify_all();
        throw;
      }
    }
  }
  if (report && report->step_index % e.config.reward_interval == 0) {
    write_png(session_dir(id) / "previews" / (std::to_string(report->step_index) + ".png"),
              render_preview(e));
  }
  std::lock_guard lock(s->mutex);
  if (report) {
    s->history.push_back(*report);
    emit(*s, "step", step_event(id, *report, e.config.reward_interval).dump());
  }
  if (s->cancel_requested && e.status == SessionStatus::kReady) e.status = SessionStatus::kCapped;
  if (e.status != SessionStatus::kReady) {
    finalize(*s);
  } else {
    save_checkpoint(session_dir(id) / kCheckpointFile, e);
  }
  s->activity = Activity::kIdle;
  s->cv.notify_all();
  if (!report) {
    fail(ErrorKind::kConflict, std::string("no step taken, session is ") + to_string(s->state));
  }
  return *report;
}

void SessionStore::cancel(const std::string& id) {
  const SessionPtr s = find(id);
  std::unique_lock lock(s->mutex);
  if (s->state != SessionState::kRunning) {
    fail(ErrorKind::kConflict, std::string("cannot cancel a session that is ") + to_string(s->state));
  }
  s->cancel_requested = true;
  if (s->activity == Activity::kIdle) {
    s->engine->status = SessionStatus::kCapped;
    finalize(*s);
    return;
  }
  // The worker stops after its current step.
  s->cv.wait(lock, [&] { return s->activity == Activity::kIdle; });
}

void SessionStore::worker_loop() {
  for (;;) {
    SessionPtr s;
    {
      std::unique_lock lock(mutex_);
      queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      s = queue_.front();
      queue_.pop_front();
    }
    execute_run(s);
  }
}

void SessionStore::execute_run(const SessionPtr& s) {
  EditSession& e = *s->engine;
  const auto dir = session_dir(s->id);
  const int interval = config_.checkpoint_interval;
  auto observer = [&](const StepReport& r) {
    if (r.step_index % e.config.reward_interval == 0) {
      write_png(dir / "previews" / (std::to_string(r.step_index) + ".png"), render_preview(e));
    }
    if (r.step_index % interval == 0) save_checkpoint(dir / kCheckpointFile, e);
    std::lock_guard lock(s->mutex);
    s->history.push_back(r);
    emit(*s, "step", step_event(s->id, r, e.config.reward_interval).dump());
    return !s->cancel_requested.load();
  };
  std::string error;
  if (s->cancel_requested) {
    e.status = SessionStatus::kCapped;
  } else {
    try {
      // Rendering happens in finalize, so run the loop without run_drag's render.
      if (check_convergence(e, e.config.convergence_radius)) e.status = SessionStatus::kConverged;
      while (e.status == SessionStatus::kReady) {
        StepReport r;
        try {
          r = drag_step(e);
        } catch (const Error& err) {
          if (err.kind() != ErrorKind::kNumerical) throw;
          break;
        }
        if (!observer(r) && e.status == SessionStatus::kReady) e.status = SessionStatus::kCapped;
      }
    } catch (const std::exception& ex) {
      error = ex.what();
    }
  }
  std::lock_guard lock(s->mutex);
  if (!error.empty()) {
    e.status = SessionStatus::kFailed;
    e.failure_cause = error;
  }
  try {
    finalize(*s);
  } catch (const std::exception& ex) {
    s->failure_cause = ex.what();
  }
  s->activity = Activity::kIdle;
  s->cv.notify_all();
}

SessionState SessionStore::state(const std::string& id) const {
  const SessionPtr s = find(id);
  std::lock_guard lock(s->mutex);
  return s->state;
}

std::string SessionStore::describe(const std::string& id) const {
  const SessionPtr s = find(id);
  std::lock_guard lock(s->mutex);
  return json{{"id", s->id},
              {"state", to_string(s->state)},
              {"active", s->activity != Activity::kIdle},
              {"steps", s->history.size()},
              {"width", s->image.width()},
              {"height", s->image.height()},
              {"edit", s->spec ? json::parse(edit_spec_to_json(*s->spec)) : json(nullptr)},
              {"failure_cause", s->failure_cause}}
      .dump();
}

std::vector<std::string> SessionStore::list() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, s] : sessions_) ids.push_back(id);
  return ids;
}

EventBatch SessionStore::events_since(const std::string& id, std::uint64_t after_seq,
                                      std::chrono::milliseconds wait) const {
  const SessionPtr s = find(id);
  std::unique_lock lock(s->mutex);
  auto pending = [&] { return !s->events.empty() && s->events.back().seq > after_seq; };
  if (!pending()) s->cv.wait_for(lock, wait, pending);
  EventBatch batch;
  for (const Event& ev : s->events) {
    if (ev.seq > after_seq) batch.events.push_back(ev);
  }
  const std::uint64_t last = batch.events.empty() ? after_seq : batch.events.back().seq;
  batch.finished = is_terminal(s->state) && s->activity == Activity::kIdle &&
                   !s->events.empty() && s->events.back().type == "terminal" &&
                   s->events.back().seq <= last;
  return batch;
}

SessionResult SessionStore::result(const std::string& id) const {
  const SessionPtr s = find(id);
  std::lock_guard lock(s->mutex);
  if (!is_terminal(s->state) || s->activity != Activity::kIdle) {
    fail(ErrorKind::kNotReady, std::string("session is ") + to_string(s->state));
  }
  SessionResult r;
  r.state = s->state;
  r.metrics = s->metrics;
  r.history = s->history;
  r.diagnostic = s->failure_cause;
  const auto path = session_dir(id) / kResultFile;
  if (s->state != SessionState::kFailed && std::filesystem::exists(path)) {
    r.png = read_file_bytes(path);
  }
  return r;
}

std::optional<std::vector<std::uint8_t>> SessionStore::preview_png(const std::string& id,
                                                                   int step) const {
  find(id);
  const auto path = session_dir(id) / "previews" / (std::to_string(step) + ".png");
  if (!std::filesystem::exists(path)) return std::nullopt;
  return read_file_bytes(path);
}

bool SessionStore::wait_idle(const std::string& id, std::chrono::milliseconds timeout) const {
  const SessionPtr s = find(id);
  std::unique_lock lock(s->mutex);
  return s->cv.wait_for(lock, timeout, [&] { return s->activity == Activity::kIdle; });
}

void SessionStore::reload() {
  const auto root = config_.data_root / "sessions";
  std::vector<std::filesystem::path> dirs;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (entry.is_directory() && std::filesystem::exists(entry.path() / kRecordFile)) {
      dirs.push_back(entry.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    auto s = std::make_shared<Session>();
    try {
      const json record = json::parse(read_text(dir / kRecordFile));
      s->id = record.at("id").get<std::string>();
      const auto state = parse_session_state(record.at("state").get<std::string>());
      if (!state) fail(ErrorKind::kIo, "unknown state in " + (dir / kRecordFile).string());
      s->state = *state;
      s->image = read_png(dir / kSourceFile);
      if (!record.at("edit").is_null()) {
        s->spec = parse_edit_spec(record.at("edit").dump());
        s->spec->image_path = kSourceFile;
      }
      if (!record.at("metrics").is_null()) {
        s->metrics = json_io::parse_metric_report(record.at("metrics"));
      }
      s->failure_cause = record.at("failure_cause").get<std::string>();
      if (s->state != SessionState::kCreated && std::filesystem::exists(dir / kCheckpointFile)) {
        s->engine = load_checkpoint(dir / kCheckpointFile);
        s->history = s->engine->history;
      }
    } catch (const std::exception&) {
      continue;  // unreadable session directories are skipped, not deleted
    }

    std::lock_guard lock(s->mutex);
    emit(*s, "state", json{{"state", to_string(s->state)}}.dump());
    const int reward_interval = s->engine ? s->engine->config.reward_interval : 0;
    for (const StepReport& r : s->history) {
      emit(*s, "step", step_event(s->id, r, reward_interval).dump());
    }
    if (s->state == SessionState::kRunning) {
      // Interrupted by a crash: resume from the last checkpoint as a capped run.
      s->engine->failure_cause = "run interrupted by restart";
      if (s->engine->status == SessionStatus::kReady) s->engine->status = SessionStatus::kCapped;
      try {
        finalize(*s);
      } catch (const std::exception&) {
        continue;
      }
    } else if (is_terminal(s->state)) {
      emit(*s, "terminal",
           terminal_event(s->id, s->state, s->engine ? s->engine->step_index() : 0, s->metrics,
                          s->failure_cause)
               .dump());
    }
    std::lock_guard store_lock(mutex_);
    sessions_[s->id] = s;
  }
}

}  // namespace dragpd::service
