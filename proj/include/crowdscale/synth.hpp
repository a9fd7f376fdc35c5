#pragma once

// Synthetic perspective-distorted crowd scenes.
//
// A pinhole camera at height `height` looks along the ground +Y axis,
// pitched down by `tilt`. Heads are drawn on the ground plane by a seeded
// (thinned) Poisson process, projected through the camera homography and
// rendered as shaded anti-aliased discs whose pixel radius follows the local
// pixels-per-meter, over a paved ground texture.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crowdscale/error.hpp"
#include "crowdscale/geometry.hpp"
#include "crowdscale/groundtruth.hpp"
#include "crowdscale/image_io.hpp"
#include "crowdscale/training.hpp"

namespace crowdscale {

// Closed interval sampled uniformly per scene; lo == hi is a fixed value.
struct Range {
  double lo = 0.0;
  double hi = 0.0;

  Range() = default;
  Range(double v) : lo(v), hi(v) {}  // NOLINT(google-explicit-constructor)
  Range(double a, double b) : lo(a), hi(b) {}

  template <typename Rng>
  double draw(Rng& rng) const {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  }
};

struct SceneSpec {
  std::size_t h = 128;
  std::size_t w = 128;
  Range camera_height{6.0};  // meters
  Range tilt_deg{40.0};      // pitch below horizontal
  Range focal_px{110.0};
  double x_min = -40.0, x_max = 40.0;  // ground region, meters
  double y_min = 0.0, y_max = 80.0;
  Range density{0.3};        // people per square meter at y_min
  Range density_slope{0.0};  // change per meter along +Y
  double head_radius = 0.25; // meters
  KernelSpec kernel{};
  std::vector<Point2> roi_polygon;  // image coordinates; empty = whole image
  std::uint64_t seed = 0;

  void validate() const {
    if (h == 0 || w == 0) throw ConfigError("scene image dims must be positive");
    if (!(x_max > x_min && y_max > y_min)) throw ConfigError("scene ground region is empty");
    if (!(head_radius > 0.0)) throw ConfigError("head radius must be positive");
    if (density.lo < 0.0) throw ConfigError("ground density must be non-negative");
    kernel.validate();
  }
};

// Camera parameters actually drawn for one scene.
struct CameraParams {
  double height = 0.0;
  double tilt_deg = 0.0;
  double focal = 0.0;
};

// Ground (X, Y) in meters -> image pixels, principal point at the image centre.
inline Homography camera_homography(const CameraParams& cam, std::size_t h, std::size_t w) {
  const double t = cam.tilt_deg * std::numbers::pi / 180.0;
  const double f = cam.focal, cx = static_cast<double>(w) / 2.0, cy = static_cast<double>(h) / 2.0;
  const double ct = std::cos(t), st = std::sin(t);
  if (!(cam.height > 0.0) || !(st > 0.0)) throw ConfigError("camera must be above the ground and tilted down");
  return Homography(Mat3{{{f, cx * ct, cx * cam.height * st},
                          {0.0, -f * st + cy * ct, f * cam.height * ct + cy * cam.height * st},
                          {0.0, ct, cam.height * st}}});
}

// Even-odd point-in-polygon on pixel centres.
inline RoiMask rasterize_polygon(const std::vector<Point2>& poly, std::size_t h, std::size_t w) {
  RoiMask m(h, w, poly.empty() ? 1 : 0);
  if (poly.empty()) return m;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      bool inside = false;
      for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Point2 &a = poly[i], &b = poly[j];
        if ((a.y > py) != (b.y > py) && px < (b.x - a.x) * (py - a.y) / (b.y - a.y) + a.x) inside = !inside;
      }
      m(y, x) = inside ? 1 : 0;
    }
  }
  return m;
}

struct SynthScene {
  Sample sample;             // perspective holds the self-normalized map
  HeadAnnotations annotations;
  Image image;
  Homography homography{Mat3{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}};
  CameraParams camera;
  PerspectiveMap perspective;  // raw pixels-per-meter
  double expected_density = 0.0;
};

namespace detail {

inline double smooth_noise(double x, double y, std::uint64_t salt) {
  // Value noise on an integer lattice with smoothstep interpolation.
  auto hash = [salt](long long i, long long j) {
    std::uint64_t k = static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ull ^ static_cast<std::uint64_t>(j) * 0xC2B2AE3D27D4EB4Full ^ salt;
    k ^= k >> 33;
    k *= 0xff51afd7ed558ccdull;
    k ^= k >> 33;
    return static_cast<double>(k >> 11) / static_cast<double>(1ull << 53);
  };
  const double fx = std::floor(x), fy = std::floor(y);
  const auto i = static_cast<long long>(fx), j = static_cast<long long>(fy);
  const double tx = x - fx, ty = y - fy;
  const double sx = tx * tx * (3 - 2 * tx), sy = ty * ty * (3 - 2 * ty);
  const double a = hash(i, j) + (hash(i + 1, j) - hash(i, j)) * sx;
  const double b = hash(i, j + 1) + (hash(i + 1, j + 1) - hash(i, j + 1)) * sx;
  return a + (b - a) * sy;
}

}  // namespace detail

inline SynthScene synth_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SynthScene scene;
  scene.camera = {spec.camera_height.draw(rng), spec.tilt_deg.draw(rng), spec.focal_px.draw(rng)};
  const double rho0 = spec.density.draw(rng);
  const double slope = spec.density_slope.draw(rng);
  scene.expected_density = rho0;
  const Homography H = camera_homography(scene.camera, spec.h, spec.w);
  scene.homography = H;
  scene.perspective = perspective_map_from_homography(H, spec.h, spec.w);

  // Nothing of the ground region visible -> no scene.
  bool any_visible = false;
  for (std::size_t y = 0; y < spec.h && !any_visible; y += 2) {
    for (std::size_t x = 0; x < spec.w && !any_visible; x += 2) {
      const auto g = H.back_project(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
      any_visible = g && (*g)[0] >= spec.x_min && (*g)[0] <= spec.x_max && (*g)[1] >= spec.y_min && (*g)[1] <= spec.y_max;
    }
  }
  if (!any_visible) throw GeometryError("scene ground region is not visible from the camera");

  // Thinned Poisson process over the ground region.
  auto rho = [&](double gy) { return std::max(0.0, rho0 + slope * (gy - spec.y_min)); };
  const double rho_max = std::max(rho(spec.y_min), rho(spec.y_max));
  const double area = (spec.x_max - spec.x_min) * (spec.y_max - spec.y_min);
  const auto n_candidates = std::poisson_distribution<long long>(rho_max * area)(rng);
  std::uniform_real_distribution<double> ux(spec.x_min, spec.x_max), uy(spec.y_min, spec.y_max), u01(0.0, 1.0);
  struct Head {
    double gy, u, v, radius, shade;
  };
  std::vector<Head> heads;
  for (long long i = 0; i < n_candidates; ++i) {
    const double gx = ux(rng), gy = uy(rng);
    const double accept = u01(rng);
    const double shade = u01(rng);
    if (rho_max <= 0.0 || accept * rho_max >= rho(gy)) continue;
    const auto p = H.project(gx, gy);
    if (!p) continue;
    const double u = (*p)[0], v = (*p)[1];
    if (!(u >= 0.0 && u < static_cast<double>(spec.w) && v >= 0.0 && v < static_cast<double>(spec.h))) continue;
    const double m = H.pixels_per_meter(u, v).value_or(0.0);
    heads.push_back({gy, u, v, spec.head_radius * m, shade});
  }

  // Background: paved ground with 2 m tiles, value noise, sky above horizon.
  const std::uint64_t salt = spec.seed * 0x2545F4914F6CDD1Dull + 17;
  const double tint = u01(rng);
  Image img;
  img.h = spec.h;
  img.w = spec.w;
  img.channels = 3;
  img.data.assign(spec.h * spec.w * 3, 0);
  std::vector<double> rgb(spec.h * spec.w * 3, 0.0);
  for (std::size_t y = 0; y < spec.h; ++y) {
    for (std::size_t x = 0; x < spec.w; ++x) {
      const double u = static_cast<double>(x) + 0.5, v = static_cast<double>(y) + 0.5;
      const auto g = H.back_project(u, v);
      double base[3];
      if (!g) {
        base[0] = 0.70; base[1] = 0.78; base[2] = 0.88;
      } else {
        const double gx = (*g)[0], gy = (*g)[1];
        const bool tile = (static_cast<long long>(std::floor(gx / 2.0)) + static_cast<long long>(std::floor(gy / 2.0))) % 2 == 0;
        const double n = detail::smooth_noise(gx * 0.35, gy * 0.35, salt);
        const double l = 0.55 + 0.06 * (tile ? 1.0 : -1.0) + 0.12 * (n - 0.5);
        base[0] = l * (0.95 + 0.1 * tint);
        base[1] = l * 0.92;
        base[2] = l * (0.85 - 0.1 * tint);
      }
      const double fine = 0.04 * (detail::smooth_noise(u * 0.9, v * 0.9, salt ^ 0xABCDEFull) - 0.5);
      for (int c = 0; c < 3; ++c) rgb[(y * spec.w + x) * 3 + c] = base[c] + fine;
    }
  }

  // Far heads first so nearer ones are drawn on top.
  std::stable_sort(heads.begin(), heads.end(), [](const Head& a, const Head& b) { return a.gy > b.gy; });
  for (const Head& hd : heads) {
    const double r = std::max(hd.radius, 0.5);
    const double col[3] = {0.10 + 0.12 * hd.shade, 0.08 + 0.08 * hd.shade, 0.06 + 0.05 * hd.shade};
    const long long x0 = std::max<long long>(0, static_cast<long long>(std::floor(hd.u - r - 1)));
    const long long x1 = std::min<long long>(static_cast<long long>(spec.w) - 1, static_cast<long long>(std::ceil(hd.u + r + 1)));
    const long long y0 = std::max<long long>(0, static_cast<long long>(std::floor(hd.v - r - 1)));
    const long long y1 = std::min<long long>(static_cast<long long>(spec.h) - 1, static_cast<long long>(std::ceil(hd.v + r + 1)));
    for (long long y = y0; y <= y1; ++y) {
      for (long long x = x0; x <= x1; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - hd.u, dy = static_cast<double>(y) + 0.5 - hd.v;
        const double d = std::hypot(dx, dy);
        const double cover = std::clamp(r - d + 0.5, 0.0, 1.0);
        if (cover <= 0.0) continue;
        // Highlight towards the upper left.
        const double light = 1.0 + 0.9 * std::max(0.0, 1.0 - std::hypot(dx + 0.35 * r, dy + 0.35 * r) / r);
        for (int c = 0; c < 3; ++c) {
          double& px = rgb[(static_cast<std::size_t>(y) * spec.w + static_cast<std::size_t>(x)) * 3 + c];
          px = px * (1.0 - cover) + col[c] * light * cover;
        }
      }
    }
  }
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    img.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb[i], 0.0, 1.0) * 255.0));
  }

  scene.annotations.h = spec.h;
  scene.annotations.w = spec.w;
  for (const Head& hd : heads) scene.annotations.points.push_back({hd.u, hd.v});
  scene.image = img;

  DensityMap gt = ground_truth_density(scene.annotations, spec.kernel);
  scene.sample = make_sample("scene", image_to_tensor<float>(img), std::move(gt));
  scene.sample.heads = scene.annotations.points;
  if (!spec.roi_polygon.empty()) scene.sample.roi = rasterize_polygon(spec.roi_polygon, spec.h, spec.w);
  PerspectiveMap normalized = scene.perspective;
  normalize_perspective_map(normalized);
  scene.sample.perspective = normalized.normalized;
  return scene;
}

// n scenes with seeds base_seed, base_seed + 1, ...; perspective maps are
// normalized with statistics over the whole set (or `stats` when given).
inline std::vector<SynthScene> synth_dataset(SceneSpec spec, std::size_t n, std::uint64_t base_seed,
                                             const std::optional<PerspectiveStats>& stats = std::nullopt) {
  std::vector<SynthScene> scenes;
  for (std::size_t i = 0; i < n; ++i) {
    spec.seed = base_seed + i;
    scenes.push_back(synth_scene(spec));
    scenes.back().sample.name = "scene_" + std::to_string(spec.seed);
  }
  if (scenes.empty()) return scenes;
  std::vector<const PerspectiveMap*> maps;
  for (const SynthScene& s : scenes) maps.push_back(&s.perspective);
  const PerspectiveStats st = stats.value_or(perspective_stats(maps));
  for (SynthScene& s : scenes) {
    PerspectiveMap pm = s.perspective;
    normalize_perspective_map(pm, st);
    s.sample.perspective = pm.normalized;
  }
  return scenes;
}

inline std::vector<Sample> samples_of(const std::vector<SynthScene>& scenes) {
  std::vector<Sample> out;
  for (const SynthScene& s : scenes) out.push_back(s.sample);
  return out;
}

// ---------------------------------------------------------------------------
// Scene spec JSON. Numeric fields marked Range accept a number or [lo, hi].

namespace detail {

inline Range range_from_json(const nlohmann::json& j) {
  if (j.is_number()) return Range(j.get<double>());
  if (j.is_array() && j.size() == 2) return Range(j[0].get<double>(), j[1].get<double>());
  throw FormatError("expected a number or [lo, hi] range");
}

inline nlohmann::json range_to_json(const Range& r) {
  if (r.lo == r.hi) return r.lo;
  return nlohmann::json::array({r.lo, r.hi});
}

}  // namespace detail

inline KernelSpec kernel_from_json(const nlohmann::json& j, KernelSpec k = {}) {
  if (j.contains("mode")) {
    const std::string m = j.at("mode").get<std::string>();
    if (m == "fixed") k.mode = KernelMode::fixed;
    else if (m == "adaptive") k.mode = KernelMode::adaptive;
    else throw ConfigError("unknown kernel mode '" + m + "'");
  }
  if (j.contains("sigma")) k.sigma = j.at("sigma").get<double>();
  if (j.contains("beta")) k.beta = j.at("beta").get<double>();
  if (j.contains("k_nn")) k.k_nn = j.at("k_nn").get<std::size_t>();
  if (j.contains("truncation")) k.truncation_radius = j.at("truncation").get<double>();
  return k;
}

inline nlohmann::json kernel_to_json(const KernelSpec& k) {
  return {{"mode", k.mode == KernelMode::fixed ? "fixed" : "adaptive"},
          {"sigma", k.sigma},
          {"beta", k.beta},
          {"k_nn", k.k_nn},
          {"truncation", k.truncation_radius}};
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec s;
  try {
    if (j.contains("image")) {
      s.w = j.at("image").at("w").get<std::size_t>();
      s.h = j.at("image").at("h").get<std::size_t>();
    }
    if (j.contains("camera")) {
      const auto& c = j.at("camera");
      if (c.contains("height")) s.camera_height = detail::range_from_json(c.at("height"));
      if (c.contains("tilt_deg")) s.tilt_deg = detail::range_from_json(c.at("tilt_deg"));
      if (c.contains("focal_px")) s.focal_px = detail::range_from_json(c.at("focal_px"));
    }
    if (j.contains("ground_region")) {
      const auto& g = j.at("ground_region");
      s.x_min = g.at("x_min").get<double>();
      s.x_max = g.at("x_max").get<double>();
      s.y_min = g.at("y_min").get<double>();
      s.y_max = g.at("y_max").get<double>();
    }
    if (j.contains("density")) s.density = detail::range_from_json(j.at("density"));
    if (j.contains("density_slope")) s.density_slope = detail::range_from_json(j.at("density_slope"));
    if (j.contains("head_radius")) s.head_radius = j.at("head_radius").get<double>();
    if (j.contains("kernel")) s.kernel = kernel_from_json(j.at("kernel"), s.kernel);
    if (j.contains("roi_polygon")) {
      for (const auto& p : j.at("roi_polygon")) s.roi_polygon.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    }
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid scene spec: ") + e.what());
  } catch (const FormatError& e) {
    throw ConfigError(std::string("invalid scene spec: ") + e.what());
  }
  s.validate();
  return s;
}

inline nlohmann::json scene_to_json(const SceneSpec& s) {
  nlohmann::json poly = nlohmann::json::array();
  for (const Point2& p : s.roi_polygon) poly.push_back({p.x, p.y});
  return {{"image", {{"w", s.w}, {"h", s.h}}},
          {"camera",
           {{"height", detail::range_to_json(s.camera_height)},
            {"tilt_deg", detail::range_to_json(s.tilt_deg)},
            {"focal_px", detail::range_to_json(s.focal_px)}}},
          {"ground_region", {{"x_min", s.x_min}, {"x_max", s.x_max}, {"y_min", s.y_min}, {"y_max", s.y_max}}},
          {"density", detail::range_to_json(s.density)},
          {"density_slope", detail::range_to_json(s.density_slope)},
          {"head_radius", s.head_radius},
          {"kernel", kernel_to_json(s.kernel)},
          {"roi_polygon", poly},
          {"seed", s.seed}};
}

}  // namespace crowdscale
