#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "crowdscale/synth.hpp"

using namespace crowdscale;

namespace {

// Pinhole camera at (0, 0, height) looking along +Y, pitched down by tilt;
// image v grows downwards, principal point at the image centre.
struct PinholeOracle {
  double height, tilt, focal, cx, cy;

  PinholeOracle(const CameraParams& c, std::size_t h, std::size_t w)
      : height(c.height), tilt(c.tilt_deg * std::numbers::pi / 180.0), focal(c.focal),
        cx(static_cast<double>(w) / 2.0), cy(static_cast<double>(h) / 2.0) {}

  bool project(double X, double Y, double& u, double& v) const {
    const double depth = Y * std::cos(tilt) + height * std::sin(tilt);
    if (depth <= 0.0) return false;
    u = focal * X / depth + cx;
    v = focal * (height * std::cos(tilt) - Y * std::sin(tilt)) / depth + cy;
    return true;
  }
};

// Monte-Carlo area (m^2) of the ground region whose projection lands inside the image.
double visible_area(const SceneSpec& spec, const CameraParams& cam) {
  const PinholeOracle o(cam, spec.h, spec.w);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> ux(spec.x_min, spec.x_max), uy(spec.y_min, spec.y_max);
  const int n = 400000;
  int hit = 0;
  for (int i = 0; i < n; ++i) {
    double u, v;
    if (o.project(ux(rng), uy(rng), u, v) && u >= 0 && u < static_cast<double>(spec.w) && v >= 0 &&
        v < static_cast<double>(spec.h)) {
      ++hit;
    }
  }
  return (spec.x_max - spec.x_min) * (spec.y_max - spec.y_min) * hit / n;
}

SceneSpec base_spec() {
  SceneSpec s;
  s.kernel.sigma = 2.0;
  return s;
}

}  // namespace

TEST(Camera, HomographyMatchesPinholeModel) {
  const CameraParams cam{6.0, 40.0, 110.0};
  const Homography H = camera_homography(cam, 96, 128);
  const PinholeOracle o(cam, 96, 128);
  for (double X : {-5.0, 0.0, 3.5}) {
    for (double Y : {0.0, 4.0, 20.0}) {
      double u, v;
      ASSERT_TRUE(o.project(X, Y, u, v));
      const auto p = H.project(X, Y);
      ASSERT_TRUE(p);
      EXPECT_NEAR((*p)[0], u, 1e-9);
      EXPECT_NEAR((*p)[1], v, 1e-9);
    }
  }
  EXPECT_THROW(camera_homography({0.0, 40.0, 110.0}, 96, 128), ConfigError);
  EXPECT_THROW(camera_homography({5.0, 0.0, 110.0}, 96, 128), ConfigError);
}

TEST(Synth, SameSeedIsBitIdentical) {
  SceneSpec spec = base_spec();
  spec.seed = 42;
  const SynthScene a = synth_scene(spec);
  const SynthScene b = synth_scene(spec);
  EXPECT_EQ(a.image.data, b.image.data);
  EXPECT_EQ(a.sample.gt_full.values, b.sample.gt_full.values);
  EXPECT_EQ(a.sample.perspective->values, b.sample.perspective->values);
  ASSERT_EQ(a.annotations.points.size(), b.annotations.points.size());
  for (std::size_t i = 0; i < a.annotations.points.size(); ++i) {
    EXPECT_EQ(a.annotations.points[i].x, b.annotations.points[i].x);
    EXPECT_EQ(a.annotations.points[i].y, b.annotations.points[i].y);
  }
  spec.seed = 43;
  EXPECT_NE(synth_scene(spec).image.data, a.image.data);
}

TEST(Synth, MeanCountMatchesPoissonExpectation) {
  SceneSpec spec = base_spec();
  spec.density = 0.2;
  const double expected = 0.2 * visible_area(spec, {6.0, 40.0, 110.0});
  ASSERT_GT(expected, 5.0);
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    spec.seed = seed;
    total += static_cast<double>(synth_scene(spec).annotations.points.size());
  }
  EXPECT_NEAR(total / 50.0, expected, 0.1 * expected);
}

TEST(Synth, LinearRampScalesCount) {
  // Density 0 at y_min rising to 0.4 at y_max: mean over the ramp is 0.2,
  // but far ground is compressed, so count must differ from the flat case.
  SceneSpec flat = base_spec();
  flat.density = 0.2;
  SceneSpec ramp = base_spec();
  ramp.density = 0.0;
  ramp.density_slope = 0.4 / (ramp.y_max - ramp.y_min);
  double n_flat = 0.0, n_ramp = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    flat.seed = ramp.seed = seed;
    n_flat += static_cast<double>(synth_scene(flat).annotations.points.size());
    n_ramp += static_cast<double>(synth_scene(ramp).annotations.points.size());
  }
  EXPECT_GT(n_flat, 0.0);
  EXPECT_GT(n_ramp, 0.0);
  EXPECT_LT(n_ramp, n_flat);
}

TEST(Synth, HeadScaleShrinksTowardsHorizon) {
  SceneSpec spec = base_spec();
  spec.seed = 5;
  const SynthScene s = synth_scene(spec);
  ASSERT_GT(s.annotations.points.size(), 10u);
  std::vector<Point2> pts = s.annotations.points;
  std::sort(pts.begin(), pts.end(), [](const Point2& a, const Point2& b) { return a.y < b.y; });
  double prev = 0.0;
  for (const Point2& p : pts) {
    const double m = s.homography.pixels_per_meter(p.x, p.y).value();
    EXPECT_GE(m, prev - 1e-9);
    prev = m;
  }
  // Dark head pixels: a near head covers more of them than a far one.
  auto dark_near = [&](const Point2& p) {
    int n = 0;
    for (int dy = -6; dy <= 6; ++dy) {
      for (int dx = -6; dx <= 6; ++dx) {
        const long long x = static_cast<long long>(p.x) + dx, y = static_cast<long long>(p.y) + dy;
        if (x < 0 || y < 0 || x >= 128 || y >= 128) continue;
        if (s.image.data[(static_cast<std::size_t>(y) * 128 + static_cast<std::size_t>(x)) * 3] < 90) ++n;
      }
    }
    return n;
  };
  EXPECT_GT(dark_near(pts.back()), dark_near(pts.front()));
}

TEST(Synth, DensityIntegratesToHeadCount) {
  for (KernelMode mode : {KernelMode::fixed, KernelMode::adaptive}) {
    SceneSpec spec = base_spec();
    spec.kernel.mode = mode;
    spec.seed = 8;
    const SynthScene s = synth_scene(spec);
    const double c = static_cast<double>(s.annotations.points.size());
    ASSERT_GT(c, 0.0);
    EXPECT_NEAR(total_count(s.sample.gt_full), c, 1e-6 * c);
    EXPECT_NEAR(total_count(s.sample.gt_ds), c, 1e-6 * c);
    EXPECT_EQ(s.sample.gt_ds.h, 16u);
  }
}

TEST(Synth, PerspectiveMapsAreConsistent) {
  SceneSpec spec = base_spec();
  spec.seed = 2;
  const SynthScene s = synth_scene(spec);
  ASSERT_TRUE(s.sample.perspective);
  for (double v : s.sample.perspective->values) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 255.0);
  }
  // Bottom row is nearest the camera.
  EXPECT_GT(s.perspective.values(127, 64), s.perspective.values(40, 64));
  EXPECT_NEAR((*s.sample.perspective)(127, 64), 255.0, 1e-6);
}

TEST(Synth, InvisibleRegionAndBadSpecs) {
  SceneSpec behind = base_spec();
  behind.y_min = -100.0;
  behind.y_max = -50.0;
  EXPECT_THROW(synth_scene(behind), GeometryError);
  SceneSpec bad = base_spec();
  bad.head_radius = 0.0;
  EXPECT_THROW(synth_scene(bad), ConfigError);
  bad = base_spec();
  bad.x_max = bad.x_min;
  EXPECT_THROW(synth_scene(bad), ConfigError);
}

TEST(Synth, RoiPolygonRasterizes) {
  const RoiMask m = rasterize_polygon({{0, 0}, {4, 0}, {4, 4}, {0, 4}}, 8, 8);
  std::size_t on = 0;
  for (auto v : m.values) on += v;
  EXPECT_EQ(on, 16u);
  EXPECT_EQ(m(3, 3), 1);
  EXPECT_EQ(m(4, 4), 0);
  const RoiMask tri = rasterize_polygon({{0, 0}, {8, 0}, {0, 8}}, 8, 8);
  EXPECT_EQ(tri(0, 0), 1);
  EXPECT_EQ(tri(7, 7), 0);
  EXPECT_EQ(rasterize_polygon({}, 2, 3).values, std::vector<std::uint8_t>(6, 1));
  SceneSpec spec = base_spec();
  spec.roi_polygon = {{0, 64}, {128, 64}, {128, 128}, {0, 128}};
  EXPECT_TRUE(synth_scene(spec).sample.roi.has_value());
}

TEST(Synth, DatasetSharesNormalizationAndNames) {
  SceneSpec spec = base_spec();
  spec.camera_height = Range(4.0, 9.0);
  const auto a = synth_dataset(spec, 4, 100);
  const auto b = synth_dataset(spec, 4, 100);
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(a[2].sample.name, "scene_102");
  EXPECT_NE(a[0].camera.height, a[1].camera.height);
  double top = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image.data, b[i].image.data);
    for (double v : a[i].sample.perspective->values) top = std::max(top, v);
  }
  EXPECT_NEAR(top, 255.0, 1e-6);
  EXPECT_EQ(samples_of(a).size(), 4u);
}

TEST(SceneJson, RoundTripAndErrors) {
  SceneSpec s = base_spec();
  s.camera_height = Range(4.0, 8.0);
  s.density = 0.5;
  s.roi_polygon = {{1, 2}, {3, 4}, {5, 0}};
  s.seed = 77;
  const SceneSpec t = scene_from_json(scene_to_json(s));
  EXPECT_EQ(scene_to_json(t), scene_to_json(s));
  EXPECT_EQ(t.camera_height.lo, 4.0);
  EXPECT_EQ(t.camera_height.hi, 8.0);
  EXPECT_EQ(t.seed, 77u);
  EXPECT_THROW(scene_from_json(nlohmann::json{{"density", "lots"}}), ConfigError);
  EXPECT_THROW(scene_from_json(nlohmann::json{{"head_radius", -1.0}}), ConfigError);
}
