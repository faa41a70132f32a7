// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include "dragpd/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dragpd/container.hpp"
#include "dragpd/error.hpp"
#include "dragpd/random.hpp"

namespace dragpd {

std::vector<double> LowRankDelta::product(int rank) const {
  std::vector<double> out(static_cast<std::size_t>(rows) * cols, 0.0);
  for (int r = 0; r < rows; ++r) {
    for (int k = 0; k < rank; ++k) {
      const double u = up[static_cast<std::size_t>(r) * rank + k];
      if (u == 0.0) continue;
      const double* d = &down[static_cast<std::size_t>(k) * cols];
      double* o = &out[static_cast<std::size_t>(r) * cols];
      for (int c = 0; c < cols; ++c) o[c] += u * d[c];
    }
  }
  return out;
}

std::vector<std::string> AdapterWeights::target_layer_ids() const {
  std::vector<std::string> ids;
  for (const auto& d : deltas) ids.push_back(d.layer_id);
  return ids;
}

bool AdapterWeights::is_zero() const {
  for (const auto& d : deltas) {
    if (std::any_of(d.up.begin(), d.up.end(), [](double v) { return v != 0.0; })) {
      // up != 0 alone is not enough; check the product.
      const auto p = d.product(rank);
      if (std::any_of(p.begin(), p.end(), [](double v) { return v != 0.0; })) return false;
    }
  }
  return true;
}

void AdapterWeights::validate() const {
  if (rank < 1) fail(ErrorKind::kInvalidArgument, "adapter rank must be >= 1");
  for (const auto& d : deltas) {
    if (d.rows < 1 || d.cols < 1 ||
        d.up.size() != static_cast<std::size_t>(d.rows) * rank ||
        d.down.size() != static_cast<std::size_t>(rank) * d.cols) {
      fail(ErrorKind::kInvalidArgument,
           "adapter factors for '" + d.layer_id + "' do not have inner dimension " +
               std::to_string(rank));
    }
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(d.up.begin(), d.up.end(), finite) ||
        !std::all_of(d.down.begin(), d.down.end(), finite)) {
      fail(ErrorKind::kInvalidArgument, "adapter for '" + d.layer_id + "' is not finite");
    }
  }
}

namespace {

struct Draw {
  int step = 0;
  Tensor noise;
};

std::vector<Draw> make_draws(const Backend& backend, const LatentCode& z0, int count,
                             Rng& rng) {
  const int n = backend.schedule().num_steps();
  std::vector<Draw> draws;
  for (int i = 0; i < count; ++i) {
    Draw d;
    d.step = rng.integer(1, n);
    d.noise = Tensor(z0.data.channels(), z0.data.height(), z0.data.width());
    for (double& v : d.noise.values()) v = rng.normal();
    draws.push_back(std::move(d));
  }
  return draws;
}

Tensor noised(const Backend& backend, const LatentCode& z0, const Draw& d) {
  const double ab = backend.schedule().alpha_bar(d.step);
  Tensor z = z0.data * std::sqrt(ab);
  z.add_scaled(d.noise, std::sqrt(1.0 - ab));
  return z;
}

double batch_loss(const Backend& backend, const LatentCode& z0, const std::vector<Draw>& draws,
                  std::vector<std::vector<double>>* grads) {
  double loss = 0.0;
  std::vector<std::vector<double>> g;
  for (const auto& d : draws) {
    loss += backend.noise_loss_and_grads(noised(backend, z0, d),
                                         backend.schedule().train_timestep(d.step), d.noise, g);
    if (grads) {
      if (grads->empty()) {
        *grads = g;
      } else {
        for (std::size_t s = 0; s < g.size(); ++s) {
          for (std::size_t i = 0; i < g[s].size(); ++i) (*grads)[s][i] += g[s][i];
        }
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(draws.size());
  if (grads) {
    for (auto& s : *grads) {
      for (double& v : s) v *= inv;
    }
  }
  return loss * inv;
}

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

void adam_update(std::vector<double>& param, const std::vector<double>& grad, AdamMoments& st,
                 int t, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (st.m.empty()) {
    st.m.assign(param.size(), 0.0);
    st.v.assign(param.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    st.m[i] = b1 * st.m[i] + (1 - b1) * grad[i];
    st.v[i] = b2 * st.v[i] + (1 - b2) * grad[i] * grad[i];
    param[i] -= lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + eps);
  }
}

}  // namespace

double reconstruction_error(const Backend& backend, const LatentCode& z0, int draws,
                            std::uint64_t seed) {
  Rng rng(seed);
  return batch_loss(backend, z0, make_draws(backend, z0, draws, rng), nullptr);
}

AdapterWeights finetune_identity(const Image& image, const BackendPtr& backend,
                                 const AdaptationConfig& config, AdaptationReport* report) {
  if (config.rank < 1) fail(ErrorKind::kInvalidArgument, "adapter rank must be >= 1");
  if (config.steps < 0 || config.batch < 1) {
    fail(ErrorKind::kInvalidArgument, "adaptation needs steps >= 0 and batch >= 1");
  }
  const BackendPtr base = backend->without_adapters();
  const LatentCode z0 = base->encode_image(image);

  Rng rng(config.seed);
  AdapterWeights weights;
  weights.rank = config.rank;
  const auto slots = base->adapter_slots();
  std::vector<std::size_t> slot_index;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const auto& t = config.target_layers;
    if (!t.empty() && std::find(t.begin(), t.end(), slots[s].layer_id) == t.end()) continue;
    LowRankDelta d;
    d.layer_id = slots[s].layer_id;
    d.rows = slots[s].rows;
    d.cols = slots[s].cols;
    d.up.assign(static_cast<std::size_t>(d.rows) * config.rank, 0.0);
    d.down.resize(static_cast<std::size_t>(config.rank) * d.cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d.cols));
    for (double& v : d.down) v = scale * rng.normal();
    weights.deltas.push_back(std::move(d));
    slot_index.push_back(s);
  }
  for (const auto& id : config.target_layers) {
    if (std::none_of(slots.begin(), slots.end(), [&](const auto& s) { return s.layer_id == id; })) {
      fail(ErrorKind::kInvalidArgument, "backend has no adaptable layer '" + id + "'");
    }
  }

  const std::vector<Draw> train = make_draws(*base, z0, config.batch, rng);
  const std::uint64_t held_out_seed = rng.bits();
  if (report) {
    report->loss_curve.clear();
    report->held_out_before = reconstruction_error(*base, z0, config.held_out_draws, held_out_seed);
  }

  std::vector<AdamMoments> up_state(weights.deltas.size());
  std::vector<AdamMoments> down_state(weights.deltas.size());
  const int r = config.rank;
  for (int step = 1; step <= config.steps; ++step) {
    const BackendPtr adapted = base->with_adapters(weights);
    std::vector<std::vector<double>> grads;
    const double loss = batch_loss(*adapted, z0, train, &grads);
    if (!std::isfinite(loss)) {
      fail(ErrorKind::kNumerical, "identity adaptation diverged at step " +
                                      std::to_string(step) + " (loss " + std::to_string(loss) +
                                      "); lower the learning rate");
    }
    if (report) report->loss_curve.push_back(loss);
    for (std::size_t j = 0; j < weights.deltas.size(); ++j) {
      auto& d = weights.deltas[j];
      const auto& g = grads[slot_index[j]];
      // dL/dup = G down^T, dL/ddown = up^T G
      std::vector<double> g_up(d.up.size(), 0.0);
      std::vector<double> g_down(d.down.size(), 0.0);
      for (int row = 0; row < d.rows; ++row) {
        const double* grow = &g[static_cast<std::size_t>(row) * d.cols];
        for (int k = 0; k < r; ++k) {
          const double* drow = &d.down[static_cast<std::size_t>(k) * d.cols];
          const double u = d.up[static_cast<std::size_t>(row) * r + k];
          double acc = 0.0;
          double* gd = &g_down[static_cast<std::size_t>(k) * d.cols];
          for (int c = 0; c < d.cols; ++c) {
            acc += grow[c] * drow[c];
            gd[c] += u * grow[c];
          }
          g_up[static_cast<std::size_t>(row) * r + k] = acc;
        }
      }
      adam_update(d.up, g_up, up_state[j], step, config.learning_rate);
      adam_update(d.down, g_down, down_state[j], step, config.learning_rate);
    }
  }
  weights.train_steps = config.steps;
  if (report) {
    const BackendPtr adapted = base->with_adapters(weights);
    report->loss_curve.push_back(batch_loss(*adapted, z0, train, nullptr));
    report->held_out_after =
        reconstruction_error(*adapted, z0, config.held_out_draws, held_out_seed);
  }
  return weights;
}

BackendPtr apply_adapters(const BackendPtr& backend, const AdapterWeights& weights) {
  const auto slots = backend->adapter_slots();
  for (const auto& d : weights.deltas) {
    if (std::none_of(slots.begin(), slots.end(),
                     [&](const auto& s) { return s.layer_id == d.layer_id; })) {
      fail(ErrorKind::kInvalidArgument, "adapter layer '" + d.layer_id +
                                            "' does not exist in backend '" +
                                            backend->descriptor().name + "'");
    }
  }
  return backend->without_adapters()->with_adapters(weights);
}

BackendPtr remove_adapters(const BackendPtr& backend) { return backend->without_adapters(); }

void save_adapters(const std::filesystem::path& path, const AdapterWeights& weights) {
  weights.validate();
  Container c("adapter-weights");
  std::string meta = std::to_string(weights.rank) + " " + std::to_string(weights.train_steps) +
                     " " + std::to_string(weights.deltas.size());
  for (const auto& d : weights.deltas) {
    meta += "\n" + d.layer_id + " " + std::to_string(d.rows) + " " + std::to_string(d.cols);
    c.put_doubles(d.layer_id + ".up", d.up);
    c.put_doubles(d.layer_id + ".down", d.down);
  }
  c.put_text("meta", meta);
  c.save(path);
}

AdapterWeights load_adapters(const std::filesystem::path& path) {
  const Container c = Container::load(path, "adapter-weights");
  std::istringstream in(c.text("meta"));
  AdapterWeights w;
  std::size_t count = 0;
  in >> w.rank >> w.train_steps >> count;
  for (std::size_t i = 0; i < count; ++i) {
    LowRankDelta d;
    in >> d.layer_id >> d.rows >> d.cols;
    d.up = c.doubles(d.layer_id + ".up");
    d.down = c.doubles(d.layer_id + ".down");
    w.deltas.push_back(std::move(d));
  }
  if (!in) fail(ErrorKind::kIo, "corrupt adapter metadata in " + path.string());
  w.validate();
  return w;
}

}  // namespace dragpd
