#pragma once

// Loss, optimizers, augmentation and the training loop.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "crowdscale/autodiff.hpp"
#include "crowdscale/error.hpp"
#include "crowdscale/geometry.hpp"
#include "crowdscale/groundtruth.hpp"
#include "crowdscale/log.hpp"
#include "crowdscale/model.hpp"

namespace crowdscale {

// One training/evaluation example. The image is [1, 3, h, w] in [0, 1];
// gt_ds is gt_full sum-pooled by 8 (zero-padded when the dims are not
// multiples of 8) and always carries the same total.
struct Sample {
  std::string name;
  Tensor4<float> image;
  DensityMap gt_full;
  DensityMap gt_ds;
  std::optional<Grid<double>> perspective;  // normalized to [0, 255], full resolution
  std::optional<RoiMask> roi;               // full resolution
  std::optional<std::vector<Point2>> heads;

  std::size_t h() const { return image.h(); }
  std::size_t w() const { return image.w(); }
};

inline Sample make_sample(std::string name, Tensor4<float> image, DensityMap gt_full) {
  if (image.n() != 1 || image.c() != 3 || image.h() != gt_full.h || image.w() != gt_full.w) {
    throw DimensionError("sample '" + name + "': image " + to_string(image.shape()) + " does not match density " +
                         std::to_string(gt_full.h) + "x" + std::to_string(gt_full.w));
  }
  Sample s;
  s.name = std::move(name);
  s.image = std::move(image);
  s.gt_ds = downsample_density_padded(gt_full, kOutputStride);
  s.gt_full = std::move(gt_full);
  return s;
}

// ---------------------------------------------------------------------------
// Augmentation

namespace detail {

template <typename G>
G crop_grid(const G& g, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  G out(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) out(y, x) = g(y0 + y, x0 + x);
  }
  return out;
}

template <typename G>
G flip_grid(const G& g) {
  G out(g.h, g.w);
  for (std::size_t y = 0; y < g.h; ++y) {
    for (std::size_t x = 0; x < g.w; ++x) out(y, g.w - 1 - x) = g(y, x);
  }
  return out;
}

}  // namespace detail

// Crops a (h, w) window at (y0, x0) out of every field of the sample and
// re-pools the ground truth. Offsets and sizes must be multiples of 8.
inline Sample crop_sample(const Sample& s, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  if (y0 + h > s.h() || x0 + w > s.w()) throw DimensionError("crop window exceeds sample '" + s.name + "'");
  Tensor4<float> image(1, 3, h, w);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) image.at(0, c, y, x) = s.image.at(0, c, y0 + y, x0 + x);
    }
  }
  Sample out = make_sample(s.name, std::move(image), detail::crop_grid(s.gt_full, y0, x0, h, w));
  if (s.perspective) out.perspective = detail::crop_grid(*s.perspective, y0, x0, h, w);
  if (s.roi) out.roi = detail::crop_grid(*s.roi, y0, x0, h, w);
  if (s.heads) {
    out.heads.emplace();
    for (const Point2& p : *s.heads) {
      const double x = p.x - static_cast<double>(x0), y = p.y - static_cast<double>(y0);
      if (x >= 0.0 && x < static_cast<double>(w) && y >= 0.0 && y < static_cast<double>(h)) out.heads->push_back({x, y});
    }
  }
  return out;
}

// Quarter-area crop (half of each side) at a uniformly drawn top-left corner
// on the 8-pixel grid. Samples too small for that are returned unchanged.
template <typename Rng>
Sample random_crop(const Sample& s, Rng& rng) {
  const std::size_t ch = s.h() / 2, cw = s.w() / 2;
  if (s.h() < 16 || s.w() < 16 || ch % kOutputStride != 0 || cw % kOutputStride != 0) {
    log_warn("sample '" + s.name + "' (" + std::to_string(s.h()) + "x" + std::to_string(s.w()) +
             ") too small for an 8-aligned quarter crop; using it whole");
    return s;
  }
  std::uniform_int_distribution<std::size_t> ys(0, (s.h() - ch) / kOutputStride);
  std::uniform_int_distribution<std::size_t> xs(0, (s.w() - cw) / kOutputStride);
  const std::size_t y0 = ys(rng) * kOutputStride;
  const std::size_t x0 = xs(rng) * kOutputStride;
  return crop_sample(s, y0, x0, ch, cw);
}

// Horizontal flip of every field.
inline Sample mirror(const Sample& s) {
  Sample out;
  out.name = s.name;
  out.image = Tensor4<float>(s.image.shape());
  for (std::size_t c = 0; c < s.image.c(); ++c) {
    for (std::size_t y = 0; y < s.h(); ++y) {
      for (std::size_t x = 0; x < s.w(); ++x) out.image.at(0, c, y, s.w() - 1 - x) = s.image.at(0, c, y, x);
    }
  }
  out.gt_full = detail::flip_grid(s.gt_full);
  out.gt_ds = detail::flip_grid(s.gt_ds);
  if (s.perspective) out.perspective = detail::flip_grid(*s.perspective);
  if (s.roi) out.roi = detail::flip_grid(*s.roi);
  if (s.heads) {
    out.heads.emplace();
    for (const Point2& p : *s.heads) out.heads->push_back({static_cast<double>(s.w()) - p.x, p.y});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizers

template <typename T>
void require_grads(ModelParams<T>& params) {
  for (auto& [name, t] : params.named()) {
    if (!t->has_grad()) throw UsageError("optimizer step without gradients for '" + name + "'");
  }
}

// p <- p - lr * g
template <typename T>
void sgd_update(std::span<T> p, std::span<const T> g, T lr) {
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
}

template <typename T>
void sgd_step(ModelParams<T>& params, T lr) {
  require_grads(params);
  for (auto& [name, t] : params.named()) sgd_update<T>(t->values(), t->grad(), lr);
}

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam update at step t >= 1 on one buffer.
template <typename T>
void adam_update(std::span<T> p, std::span<const T> g, std::span<T> m, std::span<T> v, const AdamOptions& opt,
                 std::size_t t) {
  if (t == 0) throw UsageError("adam step counter must start at 1");
  const T b1 = static_cast<T>(opt.beta1), b2 = static_cast<T>(opt.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(opt.beta1, static_cast<double>(t)));
  const T c2 = static_cast<T>(1.0 - std::pow(opt.beta2, static_cast<double>(t)));
  const T lr = static_cast<T>(opt.lr), eps = static_cast<T>(opt.epsilon);
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = b1 * m[i] + (T{1} - b1) * g[i];
    v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
    const T mhat = m[i] / c1;
    const T vhat = v[i] / c2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::size_t t = 0;  // steps taken so far
};

// Advances state.t and applies one update to every parameter.
template <typename T>
void adam_step(ModelParams<T>& params, AdamState<T>& state, const AdamOptions& opt) {
  require_grads(params);
  auto named = params.named();
  if (state.m.empty()) {
    for (auto& [name, t] : named) {
      state.m.emplace_back(t->size(), T{0});
      state.v.emplace_back(t->size(), T{0});
    }
  }
  if (state.m.size() != named.size()) throw UsageError("adam state does not match the parameter set");
  ++state.t;
  for (std::size_t k = 0; k < named.size(); ++k) {
    Tensor4<T>& t = *named[k].second;
    adam_update<T>(t.values(), t.grad(), state.m[k], state.v[k], opt, state.t);
  }
}

// ---------------------------------------------------------------------------
// Training loop

enum class Optimizer { sgd, adam };

inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "adam") return Optimizer::adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

inline std::string optimizer_name(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

struct TrainConfig {
  Optimizer optimizer = Optimizer::adam;
  std::size_t batch_size = 1;
  std::optional<double> learning_rate;  // default 1e-4 (adam) or 1e-6 (sgd)
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  bool crop_enabled = true;
  bool mirror_enabled = true;

  double lr() const { return learning_rate.value_or(optimizer == Optimizer::adam ? 1e-4 : 1e-6); }

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(lr() >= 0.0) || !std::isfinite(lr())) throw ConfigError("learning rate must be finite and >= 0");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_mae = 0.0;
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  // CSV with header epoch,mean_loss,train_mae,wall_seconds. With
  // `wall_time` false the last column is written as 0 so reruns compare
  // byte for byte.
  void write_csv(std::ostream& os, bool wall_time = true) const {
    os << "epoch,mean_loss,train_mae,wall_seconds\n";
    for (const EpochRecord& e : epochs) {
      std::ostringstream line;
      line << std::setprecision(10) << e.epoch << ',' << e.mean_loss << ',' << e.train_mae << ','
           << (wall_time ? e.wall_seconds : 0.0) << '\n';
      os << line.str();
    }
  }
};

template <typename T>
Tensor4<T> sample_perspective(const Sample& s) {
  if (!s.perspective) throw UsageError("sample '" + s.name + "' has no perspective map");
  return perspective_input<T>(*s.perspective);
}

// Runs the network on one (already augmented) sample.
template <typename T>
ForwardResult<T> forward_sample(Graph<T>& g, ModelParams<T>& model, const Sample& s) {
  const Tensor4<T> image = s.image.template cast<T>();
  if (model.config.uses_geometry()) {
    const Tensor4<T> persp = sample_perspective<T>(s);
    return forward(g, model, image, &persp);
  }
  return forward(g, model, image);
}

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
};

// Minimizes (1/2B) sum ||D_gt - D_est||^2 at 1/8 resolution. Each epoch
// shuffles the dataset with the seeded generator, augments each draw, and
// accumulates gradients over B samples before one optimizer step.
template <typename T>
TrainLog train(const std::vector<Sample>& dataset, ModelParams<T>& model, const TrainConfig& config,
               const TrainHooks& hooks = {}) {
  config.validate();
  if (dataset.empty()) throw UsageError("training needs at least one sample");
  if (model.config.uses_geometry()) {
    for (const Sample& s : dataset) {
      if (!s.perspective) throw UsageError("ECAN training sample '" + s.name + "' has no perspective map");
    }
  }
  std::mt19937_64 rng(config.seed);
  std::bernoulli_distribution coin(0.5);
  AdamState<T> adam;
  AdamOptions adam_opt;
  adam_opt.lr = config.lr();
  const T sgd_lr = static_cast<T>(config.lr());

  TrainLog log;
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, abs_err_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
      model.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t k = b0; k < b1; ++k) {
        Sample s = config.crop_enabled ? random_crop(dataset[order[k]], rng) : dataset[order[k]];
        if (config.mirror_enabled && coin(rng)) s = mirror(s);
        Graph<T> g;
        ForwardResult<T> fr = forward_sample(g, model, s);
        Var<T> loss = ad::squared_error(fr.density, to_tensor<T>(s.gt_ds), b1 - b0);
        const double lv = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(lv)) {
          const auto bad = g.first_non_finite();
          throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " on sample '" + s.name +
                               "'; first non-finite tensor: " + bad.value_or("loss"));
        }
        g.backward(loss);
        batch_loss += lv;
        abs_err_sum += std::abs(static_cast<double>(fr.density.value().sum()) - total_count(s.gt_ds));
      }
      for (auto& [name, t] : model.named()) {
        for (T v : t->grad()) {
          if (!std::isfinite(v)) throw NumericalError("non-finite gradient in '" + name + "' at epoch " + std::to_string(epoch));
        }
      }
      if (config.optimizer == Optimizer::adam) {
        adam_step(model, adam, adam_opt);
      } else {
        sgd_step(model, sgd_lr);
      }
      loss_sum += batch_loss;
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(batches);
    rec.train_mae = abs_err_sum / static_cast<double>(dataset.size());
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  return log;
}

}  // namespace crowdscale
