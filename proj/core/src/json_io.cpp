// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include "json_io.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "dragpd/error.hpp"

namespace dragpd::json_io {
namespace {

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  fail(ErrorKind::kInvalidArgument, path + ": " + what);
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Field access on one JSON object with typed getters and unknown-key checks.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) bad(path_.empty() ? "$" : path_, "expected an object");
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const json& at(const char* key) const { return j_.at(key); }
  std::string path(const char* key) const { return join(path_, key); }

  double number(const char* key, double fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number()) bad(path(key), "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) bad(path(key), "must be finite");
    return d;
  }

  int integer(const char* key, int fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) bad(path(key), "expected an integer");
    const auto i = v.get<long long>();
    if (i < std::numeric_limits<int>::min() || i > std::numeric_limits<int>::max())
      bad(path(key), "out of range");
    return static_cast<int>(i);
  }

  std::uint64_t u64(const char* key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0) return v.get<std::uint64_t>();
    bad(path(key), "expected a non-negative integer");
  }

  bool boolean(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) bad(path(key), "expected true or false");
    return v.get<bool>();
  }

  std::string text(const char* key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_string()) bad(path(key), "expected a string");
    return v.get<std::string>();
  }

  void only(std::initializer_list<const char*> keys) const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool known = false;
      for (const char* k : keys) known = known || it.key() == k;
      if (!known) bad(join(path_, it.key()), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
};

const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }
const char* reference_name(ReferenceMode m) {
  return m == ReferenceMode::kInversion ? "inversion" : "current";
}
const char* moment_name(MomentMode m) { return m == MomentMode::kGlobal ? "global" : "per_channel"; }
const char* patch_name(PatchShape s) { return s == PatchShape::kSquare ? "square" : "disc"; }

json breakdown(const LossBreakdown& b) {
  return {{"ms", b.ms}, {"kl", b.kl}, {"reward", b.reward}, {"total", b.total}};
}

LossBreakdown parse_breakdown(const json& j) {
  LossBreakdown b;
  b.ms = j.at("ms").get<double>();
  b.kl = j.at("kl").get<double>();
  b.reward = j.at("reward").get<double>();
  b.total = j.at("total").get<double>();
  return b;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> parse_optional(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

json coord(const Coord& c) { return json::array({c.row, c.col}); }

Coord parse_coord(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
    bad(path, "expected [row, col] integers");
  return {j[0].get<int>(), j[1].get<int>()};
}

json weights(const LossWeights& w) {
  return {{"lambda_clip", w.lambda_clip},
          {"lambda_kl", w.lambda_kl},
          {"lambda_contrast", w.lambda_contrast},
          {"mask_term_weight", w.mask_term_weight}};
}

LossWeights parse_weights(const json& j, const std::string& path) {
  Reader r(j, path);
  r.only({"lambda_clip", "lambda_kl", "log_lambda_kl", "log_base", "lambda_contrast",
          "mask_term_weight"});
  LossWeights w;
  w.lambda_clip = r.number("lambda_clip", w.lambda_clip);
  w.lambda_contrast = r.number("lambda_contrast", w.lambda_contrast);
  w.mask_term_weight = r.number("mask_term_weight", w.mask_term_weight);
  if (r.has("lambda_kl") && r.has("log_lambda_kl"))
    bad(r.path("lambda_kl"), "give either lambda_kl or log_lambda_kl, not both");
  w.lambda_kl = r.number("lambda_kl", w.lambda_kl);
  if (r.has("log_lambda_kl")) {
    const std::string base = r.text("log_base", "e");
    LogBase b;
    if (base == "e") {
      b = LogBase::kNatural;
    } else if (base == "10") {
      b = LogBase::kTen;
    } else {
      bad(r.path("log_base"), "expected \"e\" or \"10\"");
    }
    w.lambda_kl = LossWeights::lambda_kl_from_log(r.number("log_lambda_kl", 0.0), b);
  } else if (r.has("log_base")) {
    bad(r.path("log_base"), "only meaningful with log_lambda_kl");
  }
  try {
    w.validate();
  } catch (const Error& e) {
    bad(path, e.what());
  }
  return w;
}

json toggles(const LossToggles& t) {
  return {{"ppr", t.ppr_on}, {"reward", t.reward_on}, {"dwpt", t.dwpt_on}};
}

LossToggles parse_toggles(const json& j, const std::string& path) {
  Reader r(j, path);
  r.only({"ppr", "reward", "dwpt"});
  LossToggles t;
  t.ppr_on = r.boolean("ppr", t.ppr_on);
  t.reward_on = r.boolean("reward", t.reward_on);
  t.dwpt_on = r.boolean("dwpt", t.dwpt_on);
  return t;
}

json tracker(const TrackerConfig& c) {
  return {{"r2", c.r2}, {"lambda_dir", c.lambda_dir}, {"epsilon", c.epsilon},
          {"w_floor", c.w_floor}};
}

TrackerConfig parse_tracker(const json& j, const std::string& path) {
  Reader r(j, path);
  r.only({"r2", "lambda_dir", "epsilon", "w_floor"});
  TrackerConfig c;
  c.r2 = r.integer("r2", c.r2);
  c.lambda_dir = r.number("lambda_dir", c.lambda_dir);
  c.epsilon = r.number("epsilon", c.epsilon);
  c.w_floor = r.number("w_floor", c.w_floor);
  try {
    c.validate();
  } catch (const Error& e) {
    bad(path, e.what());
  }
  return c;
}

json adaptation(const AdaptationConfig& c) {
  return {{"rank", c.rank},       {"steps", c.steps},
          {"learning_rate", c.learning_rate}, {"batch", c.batch},
          {"held_out_draws", c.held_out_draws}, {"seed", c.seed},
          {"target_layers", c.target_layers}};
}

AdaptationConfig parse_adaptation(const json& j, const std::string& path) {
  Reader r(j, path);
  r.only({"rank", "steps", "learning_rate", "batch", "held_out_draws", "seed", "target_layers"});
  AdaptationConfig c;
  c.rank = r.integer("rank", c.rank);
  c.steps = r.integer("steps", c.steps);
  c.learning_rate = r.number("learning_rate", c.learning_rate);
  c.batch = r.integer("batch", c.batch);
  c.held_out_draws = r.integer("held_out_draws", c.held_out_draws);
  c.seed = r.u64("seed", c.seed);
  if (r.has("target_layers")) {
    const json& a = r.at("target_layers");
    if (!a.is_array()) bad(r.path("target_layers"), "expected an array of layer ids");
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!a[i].is_string())
        bad(r.path("target_layers") + "[" + std::to_string(i) + "]", "expected a string");
      c.target_layers.push_back(a[i].get<std::string>());
    }
  }
  if (c.rank < 1) bad(r.path("rank"), "must be >= 1");
  if (c.steps < 0) bad(r.path("steps"), "must be >= 0");
  if (!(c.learning_rate > 0)) bad(r.path("learning_rate"), "must be > 0");
  if (c.batch < 1) bad(r.path("batch"), "must be >= 1");
  if (c.held_out_draws < 1) bad(r.path("held_out_draws"), "must be >= 1");
  return c;
}

json optimizer(const OptimizerConfig& c) {
  return {{"max_steps", c.max_steps},
          {"step_size", c.step_size},
          {"convergence_radius", c.convergence_radius},
          {"reward_interval", c.reward_interval},
          {"kind", optimizer_name(c.optimizer_kind)},
          {"inversion_t", c.inversion_t},
          {"feature_layer", c.feature_layer},
          {"reference", reference_name(c.reference)},
          {"moment_mode", moment_name(c.moment_mode)},
          {"preview_steps", c.preview_steps},
          {"r1", c.patch.r1},
          {"patch_shape", patch_name(c.patch.shape)}};
}

void parse_optimizer(const json& j, const std::string& path, OptimizerConfig& c) {
  Reader r(j, path);
  r.only({"profile", "max_steps", "step_size", "convergence_radius", "reward_interval", "kind",
          "inversion_t", "feature_layer", "reference", "moment_mode", "preview_steps", "r1",
          "patch_shape"});
  // A profile resets the optimizer fields; explicit fields then override it.
  const std::string profile = r.text("profile", "");
  if (profile == "synthetic") {
    const TrackerConfig tracker = c.tracker;
    const AdaptationConfig adaptation = c.adaptation;
    c = synthetic_profile();
    c.tracker = tracker;
    c.adaptation = adaptation;
  } else if (profile == "default") {
    const TrackerConfig tracker = c.tracker;
    const AdaptationConfig adaptation = c.adaptation;
    c = OptimizerConfig{};
    c.tracker = tracker;
    c.adaptation = adaptation;
  } else if (!profile.empty()) {
    bad(r.path("profile"), "expected \"default\" or \"synthetic\"");
  }
  c.max_steps = r.integer("max_steps", c.max_steps);
  c.step_size = r.number("step_size", c.step_size);
  c.convergence_radius = r.number("convergence_radius", c.convergence_radius);
  c.reward_interval = r.integer("reward_interval", c.reward_interval);
  c.inversion_t = r.integer("inversion_t", c.inversion_t);
  c.feature_layer = r.text("feature_layer", c.feature_layer);
  c.preview_steps = r.integer("preview_steps", c.preview_steps);
  c.patch.r1 = r.integer("r1", c.patch.r1);

  const std::string kind = r.text("kind", optimizer_name(c.optimizer_kind));
  if (kind == "adam") {
    c.optimizer_kind = OptimizerKind::kAdam;
  } else if (kind == "sgd") {
    c.optimizer_kind = OptimizerKind::kSgd;
  } else {
    bad(r.path("kind"), "expected \"adam\" or \"sgd\"");
  }
  const std::string ref = r.text("reference", reference_name(c.reference));
  if (ref == "inversion") {
    c.reference = ReferenceMode::kInversion;
  } else if (ref == "current") {
    c.reference = ReferenceMode::kCurrentStep;
  } else {
    bad(r.path("reference"), "expected \"inversion\" or \"current\"");
  }
  const std::string mm = r.text("moment_mode", moment_name(c.moment_mode));
  if (mm == "global") {
    c.moment_mode = MomentMode::kGlobal;
  } else if (mm == "per_channel") {
    c.moment_mode = MomentMode::kPerChannel;
  } else {
    bad(r.path("moment_mode"), "expected \"global\" or \"per_channel\"");
  }
  const std::string ps = r.text("patch_shape", patch_name(c.patch.shape));
  if (ps == "square") {
    c.patch.shape = PatchShape::kSquare;
  } else if (ps == "disc") {
    c.patch.shape = PatchShape::kDisc;
  } else {
    bad(r.path("patch_shape"), "expected \"square\" or \"disc\"");
  }
  try {
    c.validate();
  } catch (const Error& e) {
    bad(path, e.what());
  }
}

json backend_options(const std::string& name, const BackendOptions& o) {
  return {{"name", name},         {"channels", o.channels}, {"height", o.height},
          {"width", o.width},     {"hidden", o.hidden},     {"seed", o.seed},
          {"num_steps", o.num_steps}, {"checkpoint_dir", o.checkpoint_dir}};
}

BackendOptions parse_backend_options(const json& j, const std::string& path, std::string& name) {
  Reader r(j, path);
  r.only({"name", "channels", "height", "width", "hidden", "seed", "num_steps",
          "checkpoint_dir"});
  BackendOptions o;
  name = r.text("name", name);
  o.channels = r.integer("channels", o.channels);
  o.height = r.integer("height", o.height);
  o.width = r.integer("width", o.width);
  o.hidden = r.integer("hidden", o.hidden);
  o.seed = r.u64("seed", o.seed);
  o.num_steps = r.integer("num_steps", o.num_steps);
  o.checkpoint_dir = r.text("checkpoint_dir", o.checkpoint_dir);
  return o;
}

json step_report(const StepReport& s) {
  json handles = json::array();
  for (const Coord& c : s.handles) handles.push_back(coord(c));
  return {{"step", s.step_index},
          {"loss", breakdown(s.loss)},
          {"reward_evaluated", s.reward_evaluated},
          {"handles", handles},
          {"mean_distance", s.mean_distance},
          {"kl", s.kl_value},
          {"wall_ms", s.wall_ms}};
}

StepReport parse_step_report(const json& j) {
  StepReport s;
  s.step_index = j.at("step").get<int>();
  s.loss = parse_breakdown(j.at("loss"));
  s.reward_evaluated = j.at("reward_evaluated").get<bool>();
  for (const json& h : j.at("handles")) s.handles.push_back(parse_coord(h, "handles"));
  s.mean_distance = j.at("mean_distance").get<double>();
  s.kl_value = j.at("kl").get<double>();
  s.wall_ms = j.at("wall_ms").get<double>();
  return s;
}

json metric_report(const MetricReport& m) {
  return {{"mean_distance", m.mean_distance},
          {"clip_obj", optional_number(m.clip_obj)},
          {"clip_tar", optional_number(m.clip_tar)},
          {"one_minus_lpips", optional_number(m.one_minus_lpips)},
          {"wall_clock_s", m.wall_clock_s}};
}

MetricReport parse_metric_report(const json& j) {
  MetricReport m;
  m.mean_distance = j.at("mean_distance").get<double>();
  m.clip_obj = parse_optional(j, "clip_obj");
  m.clip_tar = parse_optional(j, "clip_tar");
  m.one_minus_lpips = parse_optional(j, "one_minus_lpips");
  m.wall_clock_s = j.at("wall_clock_s").get<double>();
  return m;
}

std::string mask_to_rle(const EditMask& mask) {
  std::ostringstream out;
  out << "rle:" << mask.height() << "x" << mask.width() << ":";
  bool value = false;
  long run = 0;
  bool first = true;
  auto flush = [&] {
    if (!first) out << ",";
    out << run;
    first = false;
  };
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (mask.editable(y, x) != value) {
        flush();
        value = !value;
        run = 0;
      }
      ++run;
    }
  }
  flush();
  return out.str();
}

EditMask mask_from_rle(const std::string& text, const std::string& path) {
  if (text.rfind("rle:", 0) != 0) bad(path, "expected \"rle:<H>x<W>:<runs>\"");
  const auto x_pos = text.find('x', 4);
  const auto colon = text.find(':', 4);
  if (x_pos == std::string::npos || colon == std::string::npos || x_pos > colon)
    bad(path, "expected \"rle:<H>x<W>:<runs>\"");
  auto parse_int = [&](std::string_view s) {
    long v = -1;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || v < 0) bad(path, "malformed number");
    return v;
  };
  const std::string_view all(text);
  const long h = parse_int(all.substr(4, x_pos - 4));
  const long w = parse_int(all.substr(x_pos + 1, colon - x_pos - 1));
  if (h < 1 || w < 1) bad(path, "mask size must be positive");
  EditMask mask(static_cast<int>(h), static_cast<int>(w), false);
  const long total = h * w;
  long pos = 0;
  bool value = false;
  std::string_view rest = all.substr(colon + 1);
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const long run = parse_int(rest.substr(0, comma));
    if (pos + run > total) bad(path, "runs exceed " + std::to_string(total) + " pixels");
    for (long i = 0; i < run; ++i, ++pos)
      mask.set(static_cast<int>(pos / w), static_cast<int>(pos % w), value);
    value = !value;
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  if (pos != total)
    bad(path, "runs cover " + std::to_string(pos) + " of " + std::to_string(total) + " pixels");
  return mask;
}

json request(const EditRequest& r) {
  json pairs = json::array();
  for (const PointPair& p : r.pairs)
    pairs.push_back({{"handle", coord(p.handle)},
                     {"target", coord(p.target)},
                     {"original_handle", coord(p.original_handle)}});
  json j = {{"pairs", pairs},
            {"prompt_target", r.prompt_target},
            {"prompt_initial", r.prompt_initial},
            {"weights", weights(r.weights)},
            {"toggles", toggles(r.toggles)}};
  j["mask"] = r.mask.height() > 0 ? json(mask_to_rle(r.mask)) : json(nullptr);
  return j;
}

void parse_request(const json& j, EditRequest& r) {
  r.pairs.clear();
  for (const json& p : j.at("pairs"))
    r.pairs.push_back({parse_coord(p.at("handle"), "handle"), parse_coord(p.at("target"), "target"),
                       parse_coord(p.at("original_handle"), "original_handle")});
  r.prompt_target = j.at("prompt_target").get<std::string>();
  r.prompt_initial = j.at("prompt_initial").get<std::string>();
  r.weights = parse_weights(j.at("weights"), "weights");
  r.toggles = parse_toggles(j.at("toggles"), "toggles");
  r.mask = j.at("mask").is_null() ? EditMask() : mask_from_rle(j.at("mask").get<std::string>(), "mask");
}

}  // namespace dragpd::json_io
