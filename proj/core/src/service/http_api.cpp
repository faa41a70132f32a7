// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include "dragpd/service/http_api.hpp"

#include <httplib.h>

#include "dragpd/error.hpp"
#include "json_io.hpp"

namespace dragpd::service {

using json = nlohmann::json;

namespace {

int status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return 400;
    case ErrorKind::kGeometry: return 422;
    case ErrorKind::kNotFound: return 404;
    case ErrorKind::kConflict: return 409;
    case ErrorKind::kNotReady: return 409;
    case ErrorKind::kUnavailable: return 503;
    case ErrorKind::kNumerical: return 422;
    case ErrorKind::kIo: return 500;
  }
  return 500;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& kind,
                const std::string& message) {
  send_json(res, status, {{"error", {{"kind", kind}, {"message", message}}}});
}

// Runs `fn`, mapping engine errors onto HTTP statuses.
template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, status_for(e.kind()), to_string(e.kind()), e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

std::string sse_frame(const Event& ev) {
  return "id: " + std::to_string(ev.seq) + "\nevent: " + ev.type + "\ndata: " + ev.data + "\n\n";
}

}  // namespace

struct HttpServer::Impl {
  SessionStore& store;
  httplib::Server server;
  int port = 0;
  std::atomic<bool> stopping{false};

  explicit Impl(SessionStore& s) : store(s) { routes(); }

  void routes() {
    server.set_payload_max_length(store.config().max_upload_bytes + 1);

    server.Post("/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      if (req.body.size() > store.config().max_upload_bytes) {
        send_error(res, 413, "invalid_argument", "upload too large");
        return;
      }
      guarded(res, [&] {
        const auto* data = reinterpret_cast<const std::uint8_t*>(req.body.data());
        const std::string id = store.create_session(std::span(data, req.body.size()));
        send_json(res, 201, {{"id", id}, {"state", "created"}});
      });
    });

    server.Get("/v1/sessions", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, {{"sessions", store.list()}}); });
    });

    server.Get(R"(/v1/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, json::parse(store.describe(req.matches[1]))); });
    });

    server.Put(R"(/v1/sessions/([^/]+)/edit)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] {
                   send_json(res, 200, json::parse(store.set_edit(req.matches[1], req.body)));
                 });
               });

    auto transition = [this](const char* pattern, auto op) {
      server.Post(pattern, [this, op](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
          const std::string id = req.matches[1];
          json body = op(id);
          body["id"] = id;
          body["state"] = to_string(store.state(id));
          send_json(res, 200, body);
        });
      });
    };
    transition(R"(/v1/sessions/([^/]+)/prepare)", [this](const std::string& id) {
      store.prepare(id);
      return json::object();
    });
    transition(R"(/v1/sessions/([^/]+)/run)", [this](const std::string& id) {
      store.run(id);
      return json::object();
    });
    transition(R"(/v1/sessions/([^/]+)/step)", [this](const std::string& id) {
      return json{{"report", json_io::step_report(store.step(id))}};
    });
    transition(R"(/v1/sessions/([^/]+)/cancel)", [this](const std::string& id) {
      store.cancel(id);
      return json::object();
    });

    server.Get(R"(/v1/sessions/([^/]+)/events)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] {
                   const std::string id = req.matches[1];
                   std::uint64_t after = 0;
                   if (req.has_param("after")) after = std::stoull(req.get_param_value("after"));
                   if (req.has_header("Last-Event-ID")) {
                     after = std::stoull(req.get_header_value("Last-Event-ID"));
                   }
                   store.state(id);  // 404 before the stream starts
                   res.set_header("Cache-Control", "no-cache");
                   res.set_chunked_content_provider(
                       "text/event-stream",
                       [this, id, after](std::size_t, httplib::DataSink& sink) mutable {
                         while (!stopping && sink.is_writable()) {
                           const EventBatch batch =
                               store.events_since(id, after, std::chrono::milliseconds(250));
                           for (const Event& ev : batch.events) {
                             const std::string frame = sse_frame(ev);
                             if (!sink.write(frame.data(), frame.size())) return false;
                             after = ev.seq;
                           }
                           if (batch.finished) break;
                         }
                         sink.done();
                         return true;
                       });
                 });
               });

    server.Get(R"(/v1/sessions/([^/]+)/result)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] {
                   const std::string id = req.matches[1];
                   const SessionResult r = store.result(id);
                   json history = json::array();
                   for (const StepReport& s : r.history) history.push_back(json_io::step_report(s));
                   send_json(res, 200,
                             {{"id", id},
                              {"state", to_string(r.state)},
                              {"metrics", r.metrics ? json_io::metric_report(*r.metrics) : json(nullptr)},
                              {"history", history},
                              {"image", r.png ? json("/v1/sessions/" + id + "/result.png") : json(nullptr)},
                              {"diagnostic", r.diagnostic}});
                 });
               });

    server.Get(R"(/v1/sessions/([^/]+)/result\.png)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] {
                   const SessionResult r = store.result(req.matches[1]);
                   if (!r.png) fail(ErrorKind::kNotFound, "session failed; no image: " + r.diagnostic);
                   res.set_content(std::string(r.png->begin(), r.png->end()), "image/png");
                 });
               });

    server.Get(R"(/v1/sessions/([^/]+)/previews/(\d+)\.png)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] {
                   const auto png = store.preview_png(req.matches[1], std::stoi(req.matches[2]));
                   if (!png) fail(ErrorKind::kNotFound, "no preview for that step");
                   res.set_content(std::string(png->begin(), png->end()), "image/png");
                 });
               });
  }
};

HttpServer::HttpServer(SessionStore& store) : impl_(std::make_unique<Impl>(store)) {}

HttpServer::~HttpServer() { stop(); }

bool HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
    return impl_->port > 0;
  }
  if (!impl_->server.bind_to_port(host, port)) return false;
  impl_->port = port;
  return true;
}

int HttpServer::port() const noexcept { return impl_->port; }

void HttpServer::serve() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  impl_->stopping = true;
  impl_->server.stop();
}

}  // namespace dragpd::service
