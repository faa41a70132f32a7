// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include "dragpd/checkpoint.hpp"

#include "dragpd/container.hpp"
#include "dragpd/error.hpp"
#include "json_io.hpp"

namespace dragpd {
namespace {

using json = nlohmann::json;

constexpr const char* kKind = "session-checkpoint";

json shape(const Tensor& t) { return json::array({t.channels(), t.height(), t.width()}); }

void put_tensor(Container& c, json& shapes, const std::string& name, const Tensor& t) {
  shapes[name] = shape(t);
  c.put_doubles(name, t.values());
}

Tensor get_tensor(const Container& c, const json& shapes, const std::string& name) {
  const json& s = shapes.at(name);
  Tensor t(s[0].get<int>(), s[1].get<int>(), s[2].get<int>());
  const auto& v = c.doubles(name);
  if (v.size() != t.size()) fail(ErrorKind::kIo, "checkpoint array '" + name + "' has wrong size");
  std::copy(v.begin(), v.end(), t.values().begin());
  return t;
}

SessionStatus parse_status(const std::string& s) {
  for (SessionStatus v : {SessionStatus::kReady, SessionStatus::kConverged, SessionStatus::kCapped,
                          SessionStatus::kFailed}) {
    if (s == to_string(v)) return v;
  }
  fail(ErrorKind::kIo, "checkpoint has unknown status '" + s + "'");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EditSession& s) {
  Container c(kKind);
  json shapes = json::object();
  put_tensor(c, shapes, "image", s.request.image.pixels());
  put_tensor(c, shapes, "z0", s.source_latent.data);
  put_tensor(c, shapes, "zt0", s.inversion_code.data);
  put_tensor(c, shapes, "zk", s.latent.data);
  put_tensor(c, shapes, "adam.m", s.adam.m);
  put_tensor(c, shapes, "adam.v", s.adam.v);

  json deltas = json::array();
  for (const auto& d : s.adapters.deltas) {
    deltas.push_back({{"layer", d.layer_id}, {"rows", d.rows}, {"cols", d.cols}});
    c.put_doubles("adapter." + d.layer_id + ".up", d.up);
    c.put_doubles("adapter." + d.layer_id + ".down", d.down);
  }
  json history = json::array();
  for (const StepReport& r : s.history) history.push_back(json_io::step_report(r));

  json config = json_io::optimizer(s.config);
  config["tracker"] = json_io::tracker(s.config.tracker);
  config["adaptation"] = json_io::adaptation(s.config.adaptation);

  const json meta = {
      {"request", json_io::request(s.request)},
      {"config", config},
      {"backend", json_io::backend_options(s.backend_name, s.backend_options)},
      {"encoder", s.encoder_name},
      {"shapes", shapes},
      {"timesteps", {s.source_latent.timestep, s.inversion_code.timestep, s.latent.timestep}},
      {"step_index", s.latent.step_index},
      {"adam_t", s.adam.t},
      {"adapters", {{"rank", s.adapters.rank}, {"train_steps", s.adapters.train_steps},
                    {"deltas", deltas}}},
      {"adaptation_report", {{"loss_curve", s.adaptation_report.loss_curve},
                             {"held_out_before", s.adaptation_report.held_out_before},
                             {"held_out_after", s.adaptation_report.held_out_after}}},
      {"history", history},
      {"status", to_string(s.status)},
      {"failure_cause", s.failure_cause}};
  c.put_text("meta", meta.dump());
  c.save(path);
}

EditSession load_checkpoint(const std::filesystem::path& path) {
  const Container c = Container::load(path, kKind);
  EditSession s;
  try {
    const json meta = json::parse(c.text("meta"));
    const json& shapes = meta.at("shapes");
    json_io::parse_request(meta.at("request"), s.request);
    s.request.image = Image(get_tensor(c, shapes, "image"));

    const json& config = meta.at("config");
    json opt = config;
    opt.erase("tracker");
    opt.erase("adaptation");
    json_io::parse_optimizer(opt, "config", s.config);
    s.config.tracker = json_io::parse_tracker(config.at("tracker"), "config.tracker");
    s.config.adaptation = json_io::parse_adaptation(config.at("adaptation"), "config.adaptation");

    s.backend_options = json_io::parse_backend_options(meta.at("backend"), "backend", s.backend_name);
    s.encoder_name = meta.at("encoder").get<std::string>();

    const auto& ts = meta.at("timesteps");
    s.source_latent = {get_tensor(c, shapes, "z0"), ts[0].get<int>(), 0};
    s.inversion_code = {get_tensor(c, shapes, "zt0"), ts[1].get<int>(), 0};
    s.latent = {get_tensor(c, shapes, "zk"), ts[2].get<int>(), meta.at("step_index").get<int>()};
    s.adam.m = get_tensor(c, shapes, "adam.m");
    s.adam.v = get_tensor(c, shapes, "adam.v");
    s.adam.t = meta.at("adam_t").get<int>();

    const json& ad = meta.at("adapters");
    s.adapters.rank = ad.at("rank").get<int>();
    s.adapters.train_steps = ad.at("train_steps").get<int>();
    for (const json& d : ad.at("deltas")) {
      LowRankDelta delta;
      delta.layer_id = d.at("layer").get<std::string>();
      delta.rows = d.at("rows").get<int>();
      delta.cols = d.at("cols").get<int>();
      delta.up = c.doubles("adapter." + delta.layer_id + ".up");
      delta.down = c.doubles("adapter." + delta.layer_id + ".down");
      s.adapters.deltas.push_back(std::move(delta));
    }
    const json& rep = meta.at("adaptation_report");
    s.adaptation_report.loss_curve = rep.at("loss_curve").get<std::vector<double>>();
    s.adaptation_report.held_out_before = rep.at("held_out_before").get<double>();
    s.adaptation_report.held_out_after = rep.at("held_out_after").get<double>();

    for (const json& h : meta.at("history")) s.history.push_back(json_io::parse_step_report(h));
    s.status = parse_status(meta.at("status").get<std::string>());
    s.failure_cause = meta.at("failure_cause").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, "corrupt checkpoint metadata in " + path.string() + ": " + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw;
    fail(ErrorKind::kIo, "corrupt checkpoint " + path.string() + ": " + e.what());
  }
  s.adapters.validate();

  const BackendPtr backend = make_backend(s.backend_name, s.backend_options);
  EncoderPtr encoder;
  if (!s.encoder_name.empty()) {
    const auto& d = backend->descriptor();
    encoder = make_encoder(s.encoder_name, d.latent_shape[1] * d.downsample,
                           d.latent_shape[2] * d.downsample);
  }
  if (s.inversion_code.data.empty()) {
    // Failed during preparation: nothing to bind.
    s.backend = backend;
    s.encoder = encoder;
    return s;
  }
  bind_session(s, backend, encoder);
  return s;
}

}  // namespace dragpd
