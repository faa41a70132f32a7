// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <json.hpp>

#include "dragpd/error.hpp"
#include "dragpd/evaluation.hpp"
#include "dragpd/image.hpp"
#include "dragpd/service/session_store.hpp"
#include "test_support.hpp"

namespace dragpd::service {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace std::chrono_literals;

constexpr SessionState kAllStates[] = {SessionState::kCreated,   SessionState::kPrepared,
                                       SessionState::kRunning,   SessionState::kConverged,
                                       SessionState::kCapped,    SessionState::kFailed};

std::vector<std::uint8_t> blob_png(int size = 16) {
  return encode_png(blob_image(size, size, {size / 2, size / 4}));
}

// Edit for the 16x16 fixture: fast adaptation, synthetic profile.
std::string edit_body(Coord handle, Coord target, int max_steps = 80, double step_size = 0.01) {
  return json{{"points", {{{"handle", {handle.row, handle.col}}, {"target", {target.row, target.col}}}}},
              {"optimizer", {{"profile", "synthetic"}, {"max_steps", max_steps}, {"step_size", step_size}}},
              {"adaptation", {{"steps", 5}}}}
      .dump();
}

std::string default_edit() { return edit_body({8, 4}, {8, 12}); }

ServiceConfig config_for(const fs::path& root) {
  ServiceConfig c;
  c.data_root = root;
  return c;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kIo;  // sentinel: nothing thrown
}

bool succeeds(const std::function<void()>& fn) {
  try {
    fn();
    return true;
  } catch (const Error&) {
    return false;
  }
}

std::vector<Event> drain(const SessionStore& store, const std::string& id) {
  std::vector<Event> all;
  std::uint64_t after = 0;
  for (int i = 0; i < 400; ++i) {
    const EventBatch b = store.events_since(id, after, 250ms);
    for (const Event& e : b.events) {
      all.push_back(e);
      after = e.seq;
    }
    if (b.finished) break;
  }
  return all;
}

// Builds a session that has reached `state`.
std::string session_in(SessionStore& store, SessionState state) {
  const std::string id = store.create_session(blob_png());
  switch (state) {
    case SessionState::kCreated:
      store.set_edit(id, default_edit());
      break;
    case SessionState::kPrepared:
      store.set_edit(id, default_edit());
      store.prepare(id);
      break;
    case SessionState::kRunning:
      store.set_edit(id, default_edit());
      store.prepare(id);
      store.step(id);
      break;
    case SessionState::kConverged:
      store.set_edit(id, edit_body({8, 8}, {8, 8}));
      store.prepare(id);
      store.run(id);
      store.wait_idle(id, 60s);
      break;
    case SessionState::kCapped:
      store.set_edit(id, edit_body({8, 4}, {8, 12}, 1));
      store.prepare(id);
      store.step(id);
      break;
    case SessionState::kFailed:
      store.set_edit(id, edit_body({8, 4}, {8, 12}, 80, 1e307));
      store.prepare(id);
      store.run(id);
      store.wait_idle(id, 60s);
      break;
  }
  EXPECT_EQ(store.state(id), state);
  return id;
}

TEST(StateGraph, OnlyDeclaredEdges) {
  int allowed = 0;
  for (SessionState from : kAllStates) {
    for (SessionState to : kAllStates) {
      const bool expected =
          (from == SessionState::kCreated && (to == SessionState::kPrepared || to == SessionState::kFailed)) ||
          (from == SessionState::kPrepared && to == SessionState::kRunning) ||
          (from == SessionState::kRunning && is_terminal(to));
      EXPECT_EQ(transition_allowed(from, to), expected) << to_string(from) << " -> " << to_string(to);
      allowed += expected;
    }
    EXPECT_EQ(parse_session_state(to_string(from)), from);
  }
  EXPECT_EQ(allowed, 6);
  EXPECT_FALSE(parse_session_state("paused").has_value());
}

class StoreTest : public ::testing::Test {
 protected:
  testing::TempDir dir_{"dragpd-store"};
  std::unique_ptr<SessionStore> store_ = std::make_unique<SessionStore>(config_for(dir_.path()));
};

TEST_F(StoreTest, UploadValidation) {
  const std::string a = store_->create_session(blob_png());
  const std::string b = store_->create_session(blob_png());
  EXPECT_NE(a, b);
  EXPECT_EQ(store_->state(a), SessionState::kCreated);
  EXPECT_TRUE(fs::exists(dir_.path() / "sessions" / a / "source.png"));
  EXPECT_EQ(kind_of([&] { store_->create_session({}); }), ErrorKind::kInvalidArgument);
  const std::vector<std::uint8_t> junk{0x89, 'P', 'N', 'G', 0, 0};
  EXPECT_EQ(kind_of([&] { store_->create_session(junk); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([&] { store_->state("nope"); }), ErrorKind::kNotFound);

  ServiceConfig small = config_for(dir_.path() / "small");
  small.max_upload_bytes = 100;
  small.max_image_side = 8;
  SessionStore tight(small);
  EXPECT_EQ(kind_of([&] { tight.create_session(blob_png()); }), ErrorKind::kInvalidArgument);
  const auto list = store_->list();
  EXPECT_EQ(list.size(), 2u);
}

TEST_F(StoreTest, LargeUploadAccepted) {
  ServiceConfig c = config_for(dir_.path() / "big");
  SessionStore big(c);
  const std::string id = big.create_session(encode_png(Image(512, 512, 0.5)));
  EXPECT_EQ(big.state(id), SessionState::kCreated);
}

TEST_F(StoreTest, EditValidation) {
  const std::string id = store_->create_session(blob_png());
  const json echo = json::parse(store_->set_edit(id, default_edit()));
  EXPECT_EQ(echo["points"][0]["handle"], json({8, 4}));
  try {
    store_->set_edit(id, edit_body({-1, 0}, {8, 12}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidArgument);
    EXPECT_NE(std::string(e.what()).find("points[0]"), std::string::npos) << e.what();
  }
  json reward = json::parse(default_edit());
  reward["toggles"] = {{"reward", true}};
  reward["prompt_initial"] = "a red blob";
  EXPECT_EQ(kind_of([&] { store_->set_edit(id, reward.dump()); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([&] { store_->set_edit(id, "{\"points\": "); }), ErrorKind::kInvalidArgument);

  // Re-setting before prepare overwrites.
  store_->set_edit(id, edit_body({8, 4}, {2, 2}));
  EXPECT_EQ(json::parse(store_->describe(id))["edit"]["points"][0]["target"], json({2, 2}));
  EXPECT_EQ(kind_of([&] { store_->prepare(store_->create_session(blob_png())); }), ErrorKind::kConflict);
}

TEST_F(StoreTest, ExhaustiveOperationProbes) {
  enum Op { kEdit, kPrepare, kRun, kStep, kCancel, kResult };
  const char* names[] = {"set_edit", "prepare", "run", "step", "cancel", "result"};
  auto allowed = [](SessionState s, Op op) {
    switch (s) {
      case SessionState::kCreated: return op == kEdit || op == kPrepare;
      case SessionState::kPrepared: return op == kEdit || op == kRun || op == kStep;
      case SessionState::kRunning: return op == kRun || op == kStep || op == kCancel;
      default: return op == kResult;
    }
  };
  for (SessionState state : kAllStates) {
    for (int op = kEdit; op <= kResult; ++op) {
      const std::string id = session_in(*store_, state);
      const std::function<void()> call = [&] {
        switch (op) {
          case kEdit: store_->set_edit(id, default_edit()); break;
          case kPrepare: store_->prepare(id); break;
          case kRun: store_->run(id); break;
          case kStep: store_->step(id); break;
          case kCancel: store_->cancel(id); break;
          case kResult: store_->result(id); break;
        }
      };
      if (allowed(state, static_cast<Op>(op))) {
        EXPECT_TRUE(succeeds(call)) << names[op] << " in " << to_string(state);
      } else {
        const ErrorKind k = kind_of(call);
        const ErrorKind want = op == kResult ? ErrorKind::kNotReady : ErrorKind::kConflict;
        EXPECT_EQ(k, want) << names[op] << " in " << to_string(state);
        EXPECT_EQ(store_->state(id), state) << "rejected " << names[op] << " changed the state";
      }
      store_->wait_idle(id, 60s);
    }
  }
}

TEST_F(StoreTest, RunStreamsEveryStepThenATerminalEvent) {
  const std::string id = session_in(*store_, SessionState::kPrepared);
  store_->run(id);
  const std::vector<Event> events = drain(*store_, id);
  ASSERT_FALSE(events.empty());
  int k = 0;
  std::uint64_t seq = 0;
  for (const Event& e : events) {
    EXPECT_GT(e.seq, seq);
    seq = e.seq;
    if (e.type != "step") continue;
    const json d = json::parse(e.data);
    EXPECT_EQ(d["k"].get<int>(), ++k);
    EXPECT_TRUE(d.contains("loss"));
    EXPECT_TRUE(d.contains("handles"));
    EXPECT_EQ(d["preview"].is_null(), k % 5 != 0);
  }
  ASSERT_EQ(events.back().type, "terminal");
  const json terminal = json::parse(events.back().data);
  EXPECT_EQ(terminal["state"], "converged");
  EXPECT_EQ(terminal["steps"].get<int>(), k);
  EXPECT_LE(terminal["metrics"]["mean_distance"].get<double>(), 2.0);

  const SessionResult r = store_->result(id);
  EXPECT_EQ(r.state, SessionState::kConverged);
  ASSERT_TRUE(r.png.has_value());
  EXPECT_EQ(decode_png(*r.png).height(), 16);
  ASSERT_TRUE(r.metrics.has_value());
  EXPECT_EQ(r.history.size(), static_cast<std::size_t>(k));
  EXPECT_EQ(r.history.back().step_index, k);
  EXPECT_TRUE(store_->preview_png(id, 5).has_value());
  EXPECT_FALSE(store_->preview_png(id, 3).has_value());
}

TEST_F(StoreTest, ConvergedRequestTerminatesWithoutSteps) {
  const std::string id = session_in(*store_, SessionState::kConverged);
  const std::vector<Event> events = drain(*store_, id);
  for (const Event& e : events) EXPECT_NE(e.type, "step");
  ASSERT_EQ(events.back().type, "terminal");
  EXPECT_EQ(json::parse(events.back().data)["steps"], 0);
  EXPECT_TRUE(store_->result(id).history.empty());
}

TEST_F(StoreTest, CancelMidRunKeepsPartialHistory) {
  const std::string id = store_->create_session(blob_png(32));
  store_->set_edit(id, json{{"points", {{{"handle", {16, 10}}, {"target", {16, 20}}}}},
                            {"optimizer", {{"step_size", 1e-5}, {"max_steps", 80}}},
                            {"adaptation", {{"steps", 5}}}}
                           .dump());
  store_->prepare(id);
  store_->run(id);
  EXPECT_EQ(kind_of([&] { store_->run(id); }), ErrorKind::kConflict);
  EXPECT_EQ(kind_of([&] { store_->step(id); }), ErrorKind::kConflict);
  // Wait for the first step, then cancel.
  const EventBatch first = [&] {
    for (;;) {
      EventBatch b = store_->events_since(id, 0, 250ms);
      for (const Event& e : b.events) {
        if (e.type == "step") return b;
      }
    }
  }();
  (void)first;
  store_->cancel(id);
  EXPECT_TRUE(store_->wait_idle(id, 60s));
  EXPECT_EQ(store_->state(id), SessionState::kCapped);
  const SessionResult r = store_->result(id);
  EXPECT_GE(r.history.size(), 1u);
  EXPECT_LT(r.history.size(), 80u);
  EXPECT_TRUE(r.png.has_value());
}

TEST_F(StoreTest, FailedSessionHasDiagnosticAndNoImage) {
  const std::string id = session_in(*store_, SessionState::kFailed);
  const SessionResult r = store_->result(id);
  EXPECT_FALSE(r.png.has_value());
  EXPECT_NE(r.diagnostic.find("non-finite"), std::string::npos) << r.diagnostic;
  EXPECT_EQ(drain(*store_, id).back().type, "terminal");
}

TEST_F(StoreTest, ConcurrentSessionsAllFinish) {
  std::vector<std::string> ids;
  for (int i = 0; i < 3; ++i) ids.push_back(session_in(*store_, SessionState::kPrepared));
  for (const auto& id : ids) store_->run(id);
  // The store keeps answering while runs execute.
  EXPECT_EQ(store_->list().size(), 3u);
  for (const auto& id : ids) {
    EXPECT_TRUE(store_->wait_idle(id, 120s));
    EXPECT_TRUE(is_terminal(store_->state(id)));
  }
}

void copy_tree(const fs::path& from, const fs::path& to) {
  fs::create_directories(to);
  fs::copy(from, to, fs::copy_options::recursive);
}

TEST_F(StoreTest, ReloadAfterCrashReproducesHistories) {
  const std::string prepared = session_in(*store_, SessionState::kPrepared);
  const std::string converged = session_in(*store_, SessionState::kPrepared);
  store_->run(converged);
  store_->wait_idle(converged, 60s);
  const std::string capped = session_in(*store_, SessionState::kCapped);
  const std::string failed = session_in(*store_, SessionState::kFailed);
  const std::string running = session_in(*store_, SessionState::kRunning);
  store_->step(running);

  // Snapshot the data root while the store is still alive, as a crash would leave it.
  const fs::path crashed = dir_.path() / "crashed";
  copy_tree(dir_.path() / "sessions", crashed / "sessions");
  SessionStore reloaded(config_for(crashed));
  EXPECT_EQ(reloaded.list().size(), 5u);

  for (const std::string& id : {converged, capped, failed}) {
    const SessionResult a = store_->result(id);
    const SessionResult b = reloaded.result(id);
    EXPECT_EQ(b.state, a.state);
    EXPECT_EQ(b.history, a.history);  // bit-exact, wall clock included
    EXPECT_EQ(b.metrics, a.metrics);
    EXPECT_EQ(b.png, a.png);
    EXPECT_EQ(b.diagnostic, a.diagnostic);
  }
  // An interrupted run comes back capped with the checkpointed steps.
  EXPECT_EQ(reloaded.state(running), SessionState::kCapped);
  const SessionResult interrupted = reloaded.result(running);
  EXPECT_EQ(interrupted.history.size(), 2u);
  EXPECT_NE(interrupted.diagnostic.find("restart"), std::string::npos);

  // A prepared session continues exactly as it would have.
  EXPECT_EQ(reloaded.state(prepared), SessionState::kPrepared);
  for (int i = 0; i < 4; ++i) {
    StepReport x = store_->step(prepared);
    StepReport y = reloaded.step(prepared);
    x.wall_ms = y.wall_ms = 0.0;
    EXPECT_EQ(x, y);
  }
  // Replayed events keep the k sequence.
  int k = 0;
  for (const Event& e : reloaded.events_since(converged, 0, 0ms).events) {
    if (e.type == "step") {
      EXPECT_EQ(json::parse(e.data)["k"].get<int>(), ++k);
    }
  }
  EXPECT_EQ(static_cast<std::size_t>(k), store_->result(converged).history.size());
}

TEST_F(StoreTest, ShutdownCapsActiveRuns) {
  const std::string id = store_->create_session(blob_png(32));
  store_->set_edit(id, json{{"points", {{{"handle", {16, 10}}, {"target", {16, 20}}}}},
                            {"optimizer", {{"step_size", 1e-5}}},
                            {"adaptation", {{"steps", 5}}}}
                           .dump());
  store_->prepare(id);
  store_->run(id);
  store_->shutdown();
  EXPECT_EQ(store_->state(id), SessionState::kCapped);
  EXPECT_EQ(kind_of([&] { store_->run(store_->list().front()); }), ErrorKind::kConflict);
}

TEST(ServiceConfig, EnvironmentOverrides) {
  ::setenv("DRAGPD_DATA_ROOT", "/tmp/somewhere", 1);
  ::setenv("DRAGPD_PORT", "9123", 1);
  ::setenv("DRAGPD_BACKEND", "stable-diffusion-1.5", 1);
  const ServiceConfig c = ServiceConfig::from_env();
  EXPECT_EQ(c.data_root, "/tmp/somewhere");
  EXPECT_EQ(c.port, 9123);
  EXPECT_EQ(c.backend, "stable-diffusion-1.5");
  ::setenv("DRAGPD_PORT", "eighty", 1);
  EXPECT_THROW(ServiceConfig::from_env(), Error);
  ::unsetenv("DRAGPD_DATA_ROOT");
  ::unsetenv("DRAGPD_PORT");
  ::unsetenv("DRAGPD_BACKEND");
}

}  // namespace
}  // namespace dragpd::service
