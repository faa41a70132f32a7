// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>

#include "dragpd/service/session_store.hpp"

namespace dragpd::service {

// HTTP+JSON front end, routes under /v1:
//   POST /sessions                  body: PNG            -> 201 {"id", "state"}
//   GET  /sessions                                       -> {"sessions": [...]}
//   GET  /sessions/{id}                                  -> summary
//   PUT  /sessions/{id}/edit        body: edit spec JSON -> normalized spec
//   POST /sessions/{id}/prepare | run | step | cancel
//   GET  /sessions/{id}/events      text/event-stream; ?after=<seq>
//   GET  /sessions/{id}/result      -> {"state", "metrics", "history", "image", "diagnostic"}
//   GET  /sessions/{id}/result.png, /sessions/{id}/previews/{k}.png
// Errors are {"error": {"kind", "message"}} with 400/404/409/413/422/500/503.
class HttpServer {
 public:
  explicit HttpServer(SessionStore& store);
  ~HttpServer();

  // Binds and serves until stop(); port 0 picks a free port.
  bool bind(const std::string& host, int port);
  int port() const noexcept;
  void serve();  // blocking
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace dragpd::service
