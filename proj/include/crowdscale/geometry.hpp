#pragma once

// Camera geometry: perspective (pixels-per-meter) maps from ground-plane
// homographies, their normalization for network input, ground-plane density
// conversion and region-of-interest masks.
//
// Image coordinates are continuous with pixel (x, y) centred at
// (x + 0.5, y + 0.5).

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "crowdscale/error.hpp"
#include "crowdscale/grid.hpp"

namespace crowdscale {

using Mat3 = std::array<std::array<double, 3>, 3>;

inline double det3(const Mat3& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

// Ground plane (meters) -> image (pixels), homogeneous, with H[2][2] == 1.
class Homography {
 public:
  explicit Homography(const Mat3& m) : h_(m) {
    if (!(std::abs(h_[2][2]) > 1e-12)) throw ConfigError("homography H[2][2] is zero; cannot normalize");
    const double s = h_[2][2];
    for (auto& row : h_) {
      for (double& v : row) v /= s;
    }
    const double d = det3(h_);
    if (!(std::abs(d) > 1e-12) || !std::isfinite(d)) throw ConfigError("homography is singular");
    const Mat3& a = h_;
    inv_ = {{{a[1][1] * a[2][2] - a[1][2] * a[2][1], a[0][2] * a[2][1] - a[0][1] * a[2][2],
              a[0][1] * a[1][2] - a[0][2] * a[1][1]},
             {a[1][2] * a[2][0] - a[1][0] * a[2][2], a[0][0] * a[2][2] - a[0][2] * a[2][0],
              a[0][2] * a[1][0] - a[0][0] * a[1][2]},
             {a[1][0] * a[2][1] - a[1][1] * a[2][0], a[0][1] * a[2][0] - a[0][0] * a[2][1],
              a[0][0] * a[1][1] - a[0][1] * a[1][0]}}};
    for (auto& row : inv_) {
      for (double& v : row) v /= d;
    }
  }

  const Mat3& matrix() const { return h_; }
  double det() const { return det3(h_); }

  // Image point of ground point (gx, gy); nullopt behind the camera.
  std::optional<std::array<double, 2>> project(double gx, double gy) const {
    const double u = h_[0][0] * gx + h_[0][1] * gy + h_[0][2];
    const double v = h_[1][0] * gx + h_[1][1] * gy + h_[1][2];
    const double s = h_[2][0] * gx + h_[2][1] * gy + h_[2][2];
    if (!(s > 0.0)) return std::nullopt;
    return std::array<double, 2>{u / s, v / s};
  }

  // Ground point seen at image point (u, v); nullopt on or above the horizon.
  std::optional<std::array<double, 2>> back_project(double u, double v) const {
    const double gx = inv_[0][0] * u + inv_[0][1] * v + inv_[0][2];
    const double gy = inv_[1][0] * u + inv_[1][1] * v + inv_[1][2];
    const double gw = inv_[2][0] * u + inv_[2][1] * v + inv_[2][2];
    if (!(gw > 1e-12)) return std::nullopt;
    return std::array<double, 2>{gx / gw, gy / gw};
  }

  // Jacobian d(u,v)/d(gx,gy) at a ground point, row-major.
  std::array<double, 4> jacobian(double gx, double gy) const {
    const double s = h_[2][0] * gx + h_[2][1] * gy + h_[2][2];
    const double u = (h_[0][0] * gx + h_[0][1] * gy + h_[0][2]) / s;
    const double v = (h_[1][0] * gx + h_[1][1] * gy + h_[1][2]) / s;
    return {(h_[0][0] - u * h_[2][0]) / s, (h_[0][1] - u * h_[2][1]) / s, (h_[1][0] - v * h_[2][0]) / s,
            (h_[1][1] - v * h_[2][1]) / s};
  }

  // Isotropic pixels per meter, sqrt|det J|, at image point (u, v).
  std::optional<double> pixels_per_meter(double u, double v) const {
    const auto g = back_project(u, v);
    if (!g) return std::nullopt;
    const auto j = jacobian((*g)[0], (*g)[1]);
    const double m = std::sqrt(std::abs(j[0] * j[3] - j[1] * j[2]));
    if (!std::isfinite(m) || !(m > 0.0)) return std::nullopt;
    return m;
  }

 private:
  Mat3 h_{};
  Mat3 inv_{};
};

// 9 whitespace-separated decimals, row-major.
inline Homography parse_homography(std::istream& is) {
  Mat3 m{};
  for (auto& row : m) {
    for (double& v : row) {
      if (!(is >> v)) throw FormatError("homography: expected 9 numbers");
    }
  }
  double extra;
  if (is >> extra) throw FormatError("homography: more than 9 numbers");
  return Homography(m);
}

inline Homography load_homography(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open homography file '" + path + "'");
  try {
    return parse_homography(is);
  } catch (const ConfigError& e) {
    // A singular matrix read from disk is bad data, not bad configuration.
    throw FormatError(path + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline std::string format_homography(const Homography& h) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& row : h.matrix()) {
    os << row[0] << ' ' << row[1] << ' ' << row[2] << '\n';
  }
  return os.str();
}

struct PerspectiveStats {
  double min = 0.0;
  double max = 0.0;
};

struct PerspectiveMap {
  Grid<double> values;       // pixels per meter
  Grid<std::uint8_t> valid;  // 0 where the pixel is on or above the horizon
  Grid<double> normalized;   // affinely mapped to [0, 255]; empty until normalized
  bool degenerate = false;   // normalization saw max == min
  std::size_t invalid_count = 0;
};

inline PerspectiveMap perspective_map_from_homography(const Homography& H, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw DimensionError("perspective map with empty dims");
  PerspectiveMap pm;
  pm.values = Grid<double>(h, w, 0.0);
  pm.valid = Grid<std::uint8_t>(h, w, 0);
  double min_valid = std::numeric_limits<double>::infinity();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const auto m = H.pixels_per_meter(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
      if (m) {
        pm.values(y, x) = *m;
        pm.valid(y, x) = 1;
        min_valid = std::min(min_valid, *m);
      }
    }
  }
  if (!std::isfinite(min_valid)) throw GeometryError("every pixel lies on or above the horizon");
  for (std::size_t i = 0; i < pm.values.size(); ++i) {
    if (pm.valid.values[i] == 0) {
      pm.values.values[i] = min_valid;
      ++pm.invalid_count;
    }
  }
  return pm;
}

// min/max of the valid pixels over a set of maps (the training split).
inline PerspectiveStats perspective_stats(const std::vector<const PerspectiveMap*>& maps) {
  PerspectiveStats s{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const PerspectiveMap* pm : maps) {
    for (std::size_t i = 0; i < pm->values.size(); ++i) {
      if (pm->valid.values.empty() || pm->valid.values[i] != 0) {
        s.min = std::min(s.min, pm->values.values[i]);
        s.max = std::max(s.max, pm->values.values[i]);
      }
    }
  }
  if (!std::isfinite(s.min)) throw GeometryError("no valid perspective pixels to take statistics from");
  return s;
}

inline constexpr double kNormalizeEpsilon = 1e-12;

// 255 * (M - min) / (max - min + eps), clamped to [0, 255]. A flat range maps
// everything to 127.5 and flags the map degenerate.
inline void normalize_perspective_map(PerspectiveMap& pm, const PerspectiveStats& stats) {
  pm.normalized = Grid<double>(pm.values.h, pm.values.w, 127.5);
  pm.degenerate = !(stats.max > stats.min);
  if (pm.degenerate) return;
  const double range = stats.max - stats.min + kNormalizeEpsilon;
  for (std::size_t i = 0; i < pm.values.size(); ++i) {
    pm.normalized.values[i] = std::clamp(255.0 * (pm.values.values[i] - stats.min) / range, 0.0, 255.0);
  }
}

// Normalizes with statistics taken from the map itself.
inline void normalize_perspective_map(PerspectiveMap& pm) { normalize_perspective_map(pm, perspective_stats({&pm})); }

// Block-averages a full-resolution perspective map down to `dims` and
// converts pixels-per-meter into cells-per-meter of the coarser grid.
inline Grid<double> resample_perspective(const Grid<double>& m, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || m.h % h != 0 || m.w % w != 0 || m.h / h != m.w / w) {
    throw DimensionError("perspective map " + std::to_string(m.h) + "x" + std::to_string(m.w) +
                         " cannot be resampled to " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t f = m.h / h;
  Grid<double> out(h, w, 0.0);
  for (std::size_t y = 0; y < m.h; ++y) {
    for (std::size_t x = 0; x < m.w; ++x) out(y / f, x / f) += m(y, x);
  }
  const double norm = 1.0 / static_cast<double>(f * f * f);
  for (double& v : out.values) v *= norm;
  return out;
}

// People per square meter: D * M^2, with M resampled to D's grid.
inline DensityMap ground_density_normalize(const DensityMap& d, const Grid<double>& m) {
  const Grid<double> ms = (m.h == d.h && m.w == d.w) ? m : resample_perspective(m, d.h, d.w);
  DensityMap out(d.h, d.w, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) out.values[i] = d.values[i] * ms.values[i] * ms.values[i];
  return out;
}

inline DensityMap apply_roi(const DensityMap& map, const RoiMask& mask) {
  if (!map.same_dims(mask)) {
    throw DimensionError("apply_roi: map " + std::to_string(map.h) + "x" + std::to_string(map.w) + " vs mask " +
                         std::to_string(mask.h) + "x" + std::to_string(mask.w));
  }
  DensityMap out = map;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask.values[i] == 0) out.values[i] = 0.0;
  }
  return out;
}

// A cell is inside iff at least half of its block is; ties go inside.
inline RoiMask downsample_mask(const RoiMask& mask, std::size_t factor) {
  if (factor == 0 || mask.h % factor != 0 || mask.w % factor != 0) {
    throw DimensionError("downsample_mask: " + std::to_string(mask.h) + "x" + std::to_string(mask.w) +
                         " not divisible by " + std::to_string(factor));
  }
  Grid<std::size_t> ones(mask.h / factor, mask.w / factor, 0);
  for (std::size_t y = 0; y < mask.h; ++y) {
    for (std::size_t x = 0; x < mask.w; ++x) ones(y / factor, x / factor) += mask(y, x) != 0 ? 1 : 0;
  }
  RoiMask out(ones.h, ones.w, 0);
  for (std::size_t i = 0; i < ones.size(); ++i) out.values[i] = 2 * ones.values[i] >= factor * factor ? 1 : 0;
  return out;
}

}  // namespace crowdscale
