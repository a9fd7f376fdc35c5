#pragma once

// Ground-truth density maps from head annotations.
//
// Every head contributes a truncated isotropic Gaussian sampled at pixel
// centres (x + 0.5, y + 0.5) and renormalized so that its in-image mass is
// exactly one. Integrating the map therefore returns the head count.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crowdscale/error.hpp"
#include "crowdscale/grid.hpp"

namespace crowdscale {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

struct HeadAnnotations {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<Point2> points;

  std::size_t count() const { return points.size(); }

  void validate() const {
    if (h == 0 || w == 0) throw DimensionError("annotations have empty image dims");
    for (const Point2& p : points) {
      if (!(p.x >= 0.0 && p.x < static_cast<double>(w) && p.y >= 0.0 && p.y < static_cast<double>(h))) {
        throw FormatError("head (" + std::to_string(p.x) + "," + std::to_string(p.y) + ") outside " +
                          std::to_string(w) + "x" + std::to_string(h) + " image");
      }
    }
  }
};

enum class KernelMode { fixed, adaptive };

struct KernelSpec {
  KernelMode mode = KernelMode::fixed;
  double sigma = 4.0;              // pixels; fixed mode and adaptive fallback
  double beta = 0.3;               // adaptive: sigma_j = beta * mean kNN distance
  std::size_t k_nn = 3;
  double truncation_radius = 4.0;  // in multiples of sigma

  void validate() const {
    if (!(sigma > 0.0)) throw ConfigError("kernel sigma must be > 0");
    if (!(beta > 0.0)) throw ConfigError("kernel beta must be > 0");
    if (k_nn < 1) throw ConfigError("kernel k_nn must be >= 1");
    if (!(truncation_radius >= 3.0)) throw ConfigError("kernel truncation radius must be >= 3 sigma");
  }
};

namespace detail {

// Adds one unit-mass truncated Gaussian centred at `p` into `map`.
inline void splat_head(DensityMap& map, Point2 p, double sigma, double truncation) {
  const double radius = truncation * sigma;
  // Pixel index range whose centres fall inside [p - radius, p + radius].
  const auto lo = [](double c, double r) { return static_cast<long long>(std::ceil(c - r - 0.5)); };
  const auto hi = [](double c, double r) { return static_cast<long long>(std::floor(c + r - 0.5)); };
  const long long x0 = std::max<long long>(0, lo(p.x, radius));
  const long long x1 = std::min<long long>(static_cast<long long>(map.w) - 1, hi(p.x, radius));
  const long long y0 = std::max<long long>(0, lo(p.y, radius));
  const long long y1 = std::min<long long>(static_cast<long long>(map.h) - 1, hi(p.y, radius));

  std::vector<double> wx, wy;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (long long x = x0; x <= x1; ++x) {
    const double d = static_cast<double>(x) + 0.5 - p.x;
    wx.push_back(std::exp(-d * d * inv));
  }
  for (long long y = y0; y <= y1; ++y) {
    const double d = static_cast<double>(y) + 0.5 - p.y;
    wy.push_back(std::exp(-d * d * inv));
  }
  const double mass = std::accumulate(wx.begin(), wx.end(), 0.0) * std::accumulate(wy.begin(), wy.end(), 0.0);
  if (!(mass > 0.0) || !std::isfinite(mass)) {
    // Kernel narrower than a pixel: the containing pixel takes all of it.
    const auto px = std::min<std::size_t>(static_cast<std::size_t>(p.x), map.w - 1);
    const auto py = std::min<std::size_t>(static_cast<std::size_t>(p.y), map.h - 1);
    map(py, px) += 1.0;
    return;
  }
  for (std::size_t j = 0; j < wy.size(); ++j) {
    const double ry = wy[j] / mass;
    double* row = &map(static_cast<std::size_t>(y0) + j, static_cast<std::size_t>(x0));
    for (std::size_t i = 0; i < wx.size(); ++i) row[i] += ry * wx[i];
  }
}

}  // namespace detail

inline DensityMap density_from_sigmas(const HeadAnnotations& ann, const std::vector<double>& sigmas,
                                      double truncation) {
  if (ann.h == 0 || ann.w == 0) throw DimensionError("cannot build a density map for an empty image");
  DensityMap map(ann.h, ann.w, 0.0);
  for (std::size_t j = 0; j < ann.points.size(); ++j) detail::splat_head(map, ann.points[j], sigmas[j], truncation);
  return map;
}

inline DensityMap fixed_kernel_density(const HeadAnnotations& ann, const KernelSpec& spec) {
  if (spec.mode != KernelMode::fixed) throw UsageError("fixed_kernel_density called with an adaptive kernel spec");
  spec.validate();
  return density_from_sigmas(ann, std::vector<double>(ann.count(), spec.sigma), spec.truncation_radius);
}

struct AdaptiveDensity {
  DensityMap density;
  std::vector<double> sigmas;
  // Too few heads for k nearest neighbours; every head used spec.sigma.
  bool used_fallback = false;
};

// Per-head sigma = beta * mean distance to the k_nn nearest other heads.
inline std::vector<double> adaptive_sigmas(const std::vector<Point2>& points, double beta, std::size_t k_nn) {
  std::vector<double> sigmas(points.size(), 0.0);
  std::vector<double> dist;
  for (std::size_t i = 0; i < points.size(); ++i) {
    dist.clear();
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (j != i) dist.push_back(std::hypot(points[i].x - points[j].x, points[i].y - points[j].y));
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_nn), dist.end());
    double acc = 0.0;
    for (std::size_t k = 0; k < k_nn; ++k) acc += dist[k];
    sigmas[i] = beta * acc / static_cast<double>(k_nn);
  }
  return sigmas;
}

inline AdaptiveDensity adaptive_kernel_density(const HeadAnnotations& ann, const KernelSpec& spec) {
  if (spec.mode != KernelMode::adaptive) throw UsageError("adaptive_kernel_density called with a fixed kernel spec");
  spec.validate();
  AdaptiveDensity out;
  if (ann.count() < spec.k_nn + 1) {
    out.used_fallback = true;
    out.sigmas.assign(ann.count(), spec.sigma);
  } else {
    out.sigmas = adaptive_sigmas(ann.points, spec.beta, spec.k_nn);
  }
  out.density = density_from_sigmas(ann, out.sigmas, spec.truncation_radius);
  return out;
}

// Dispatches on spec.mode.
inline DensityMap ground_truth_density(const HeadAnnotations& ann, const KernelSpec& spec) {
  return spec.mode == KernelMode::fixed ? fixed_kernel_density(ann, spec) : adaptive_kernel_density(ann, spec).density;
}

namespace detail {

// Correctly rounded sum (Shewchuk's non-overlapping partials, as in Python's
// math.fsum). The result does not depend on summation order.
inline double exact_sum(const std::vector<double>& values) {
  std::vector<double> partials;
  for (double x : values) {
    std::size_t n = 0;
    for (double y : partials) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[n++] = lo;
      x = hi;
    }
    partials.resize(n);
    partials.push_back(x);
  }
  if (partials.empty()) return 0.0;
  std::size_t n = partials.size() - 1;
  double hi = partials[n], lo = 0.0;
  while (n > 0) {
    const double x = hi, y = partials[--n];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  // Round half to even across the remaining partials.
  if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
    const double y = lo * 2.0, x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}


// Folds the rounding residual of `out` against `ref` back into one cell at a
// time until both have the same correctly rounded total. The cell chosen is
// the smallest one large enough to absorb the residual without changing sign.
inline void settle_total(std::vector<double>& out, const std::vector<double>& ref) {
  const double target = exact_sum(ref);
  if (!std::isfinite(target) || out.empty()) return;
  for (int iter = 0; iter < 16 && exact_sum(out) != target; ++iter) {
    std::vector<double> diff = ref;
    for (double v : out) diff.push_back(-v);
    const double r = exact_sum(diff);
    if (r == 0.0) return;
    std::size_t k = out.size(), largest = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (std::abs(out[i]) > std::abs(out[largest])) largest = i;
      if (std::abs(out[i]) >= 1024.0 * std::abs(r) && (k == out.size() || std::abs(out[i]) < std::abs(out[k]))) k = i;
    }
    double& cell = out[k == out.size() ? largest : k];
    const double before = cell;
    cell += r;
    // r below half an ulp of the cell: move the cell by one ulp instead.
    if (cell == before) cell = std::nextafter(before, r > 0.0 ? HUGE_VAL : -HUGE_VAL);
  }
}

}  // namespace detail

// Sum-pools factor x factor blocks. total_count of the result equals
// total_count of the input exactly: each block is summed correctly rounded
// and the leftover rounding is settled into the blocks.
inline DensityMap downsample_density(const DensityMap& map, std::size_t factor) {
  if (factor == 0 || map.h % factor != 0 || map.w % factor != 0) {
    throw DimensionError("downsample_density: " + std::to_string(map.h) + "x" + std::to_string(map.w) +
                         " not divisible by " + std::to_string(factor));
  }
  DensityMap out(map.h / factor, map.w / factor, 0.0);
  std::vector<double> block(factor * factor);
  for (std::size_t by = 0; by < out.h; ++by) {
    for (std::size_t bx = 0; bx < out.w; ++bx) {
      for (std::size_t y = 0; y < factor; ++y) {
        for (std::size_t x = 0; x < factor; ++x) block[y * factor + x] = map(by * factor + y, bx * factor + x);
      }
      out(by, bx) = detail::exact_sum(block);
    }
  }
  detail::settle_total(out.values, map.values);
  return out;
}

// Zero-pads to the next multiple of `factor`, then sum-pools.
inline DensityMap downsample_density_padded(const DensityMap& map, std::size_t factor) {
  DensityMap padded((map.h + factor - 1) / factor * factor, (map.w + factor - 1) / factor * factor, 0.0);
  for (std::size_t y = 0; y < map.h; ++y) {
    for (std::size_t x = 0; x < map.w; ++x) padded(y, x) = map(y, x);
  }
  return downsample_density(padded, factor);
}


// Integral of the map, correctly rounded.
inline double total_count(const DensityMap& map) {
  double naive = 0.0;
  for (double v : map.values) naive += v;
  if (!std::isfinite(naive)) return naive;
  return detail::exact_sum(map.values);
}

// {"w":int, "h":int, "points":[[x,y],...]}
inline HeadAnnotations annotations_from_json(const nlohmann::json& j) {
  HeadAnnotations ann;
  try {
    ann.w = j.at("w").get<std::size_t>();
    ann.h = j.at("h").get<std::size_t>();
    for (const auto& p : j.at("points")) {
      if (!p.is_array() || p.size() != 2) throw FormatError("annotation point must be [x, y]");
      ann.points.push_back({p[0].get<double>(), p[1].get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed annotation document: ") + e.what());
  }
  ann.validate();
  return ann;
}

inline nlohmann::json annotations_to_json(const HeadAnnotations& ann) {
  nlohmann::json pts = nlohmann::json::array();
  for (const Point2& p : ann.points) pts.push_back({p.x, p.y});
  return {{"w", ann.w}, {"h", ann.h}, {"points", pts}};
}

inline HeadAnnotations load_annotations(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open annotation file '" + path + "'");
  try {
    return annotations_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  } catch (const Error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace crowdscale
