#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "crowdscale/groundtruth.hpp"

using namespace crowdscale;

namespace {

HeadAnnotations heads(std::size_t h, std::size_t w, std::vector<Point2> pts) { return {h, w, std::move(pts)}; }

KernelSpec fixed_spec(double sigma) {
  KernelSpec k;
  k.mode = KernelMode::fixed;
  k.sigma = sigma;
  return k;
}

KernelSpec adaptive_spec(double beta, std::size_t k_nn, double fallback = 4.0) {
  KernelSpec k;
  k.mode = KernelMode::adaptive;
  k.beta = beta;
  k.k_nn = k_nn;
  k.sigma = fallback;
  return k;
}

HeadAnnotations random_heads(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t n) {
  std::uniform_real_distribution<double> ux(0.0, static_cast<double>(w) - 1e-9);
  std::uniform_real_distribution<double> uy(0.0, static_cast<double>(h) - 1e-9);
  HeadAnnotations a{h, w, {}};
  for (std::size_t i = 0; i < n; ++i) a.points.push_back({ux(rng), uy(rng)});
  return a;
}

// Plain double loop; deliberately not total_count.
double integral(const DensityMap& d) {
  double s = 0.0;
  for (std::size_t y = 0; y < d.h; ++y) {
    for (std::size_t x = 0; x < d.w; ++x) s += d(y, x);
  }
  return s;
}

}  // namespace

TEST(FixedKernel, ZeroHeadsGiveZeroMap) {
  const DensityMap d = fixed_kernel_density(heads(16, 20, {}), fixed_spec(4.0));
  EXPECT_EQ(d.h, 16u);
  EXPECT_EQ(d.w, 20u);
  for (double v : d.values) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(total_count(d), 0.0);
}

TEST(FixedKernel, SingleCentredHeadIntegratesToOne) {
  const DensityMap d = fixed_kernel_density(heads(64, 64, {{32.0, 32.0}}), fixed_spec(4.0));
  EXPECT_NEAR(integral(d), 1.0, 1e-6);
  EXPECT_NEAR(total_count(d), 1.0, 1e-6);
}

TEST(FixedKernel, SingleHeadMatchesSampledGaussianShape) {
  // Independent oracle: unnormalized Gaussian at pixel centres inside the 4 sigma box,
  // divided by its own sum.
  const double sigma = 3.0;
  const Point2 p{20.3, 17.8};
  const DensityMap d = fixed_kernel_density(heads(40, 40, {p}), fixed_spec(sigma));
  DensityMap oracle(40, 40, 0.0);
  double mass = 0.0;
  for (std::size_t y = 0; y < 40; ++y) {
    for (std::size_t x = 0; x < 40; ++x) {
      const double dx = x + 0.5 - p.x, dy = y + 0.5 - p.y;
      if (std::abs(dx) > 4 * sigma || std::abs(dy) > 4 * sigma) continue;
      oracle(y, x) = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      mass += oracle(y, x);
    }
  }
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d.values[i], oracle.values[i] / mass, 1e-12);
}

TEST(FixedKernel, SymmetricAboutHead) {
  // Head on a pixel corner: reflection about it maps pixel centres onto pixel centres.
  const DensityMap d = fixed_kernel_density(heads(64, 64, {{32.0, 30.0}}), fixed_spec(4.0));
  for (std::size_t y = 14; y < 46; ++y) {
    for (std::size_t x = 16; x < 48; ++x) {
      EXPECT_NEAR(d(y, x), d(59 - y, 63 - x), 1e-15);
      EXPECT_NEAR(d(y, x), d(y, 63 - x), 1e-15);
    }
  }
}

TEST(FixedKernel, BorderHeadStillHasUnitMass) {
  const DensityMap d = fixed_kernel_density(heads(32, 32, {{0.2, 31.9}, {31.5, 0.0}}), fixed_spec(5.0));
  EXPECT_NEAR(integral(d), 2.0, 2e-6);
}

TEST(FixedKernel, ThreeHeadsCountThree) {
  const DensityMap d = fixed_kernel_density(heads(48, 64, {{5, 5}, {40.5, 20}, {60, 44}}), fixed_spec(4.0));
  EXPECT_NEAR(total_count(d), 3.0, 3e-6);
}

TEST(FixedKernel, TinySigmaDepositsIntoContainingPixel) {
  const DensityMap d = fixed_kernel_density(heads(8, 8, {{3.5, 2.5}}), fixed_spec(1e-6));
  EXPECT_NEAR(d(2, 3), 1.0, 1e-12);
  EXPECT_NEAR(total_count(d), 1.0, 1e-12);
}

TEST(FixedKernel, TranslationEquivariance) {
  std::mt19937_64 rng(3);
  HeadAnnotations a = random_heads(rng, 20, 20, 6);
  for (Point2& p : a.points) {
    p.x += 20;
    p.y += 20;
  }
  a.h = a.w = 64;
  HeadAnnotations b = a;
  for (Point2& p : b.points) {
    p.x += 3;
    p.y += 5;
  }
  const DensityMap da = fixed_kernel_density(a, fixed_spec(2.0));
  const DensityMap db = fixed_kernel_density(b, fixed_spec(2.0));
  for (std::size_t y = 0; y + 5 < 64; ++y) {
    for (std::size_t x = 0; x + 3 < 64; ++x) EXPECT_NEAR(db(y + 5, x + 3), da(y, x), 1e-15);
  }
}

TEST(FixedKernel, AddingHeadNeverDecreasesAnyPixel) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    HeadAnnotations a = random_heads(rng, 32, 40, 5);
    const DensityMap before = fixed_kernel_density(a, fixed_spec(3.0));
    a.points.push_back(random_heads(rng, 32, 40, 1).points[0]);
    const DensityMap after = fixed_kernel_density(a, fixed_spec(3.0));
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_GE(after.values[i], before.values[i]);
  }
}

TEST(FixedKernel, RejectsBadInputs) {
  EXPECT_THROW(fixed_kernel_density(heads(0, 10, {}), fixed_spec(4.0)), DimensionError);
  EXPECT_THROW(fixed_kernel_density(heads(10, 10, {}), fixed_spec(0.0)), ConfigError);
  KernelSpec k = fixed_spec(4.0);
  k.truncation_radius = 2.0;
  EXPECT_THROW(k.validate(), ConfigError);
  EXPECT_THROW(heads(10, 10, {{10.0, 3.0}}).validate(), FormatError);
}

TEST(AdaptiveKernel, TwoHeadsTenPixelsApart) {
  const AdaptiveDensity r = adaptive_kernel_density(heads(64, 64, {{20, 30}, {30, 30}}), adaptive_spec(0.3, 1));
  ASSERT_EQ(r.sigmas.size(), 2u);
  EXPECT_NEAR(r.sigmas[0], 3.0, 1e-12);
  EXPECT_NEAR(r.sigmas[1], 3.0, 1e-12);
  EXPECT_FALSE(r.used_fallback);
}

TEST(AdaptiveKernel, UniformGridGivesEqualSigmas) {
  HeadAnnotations a{64, 64, {}};
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) a.points.push_back({8.0 + 8 * x, 8.0 + 8 * y});
  }
  // Every grid head, corners included, has at least two neighbours at spacing 8.
  const AdaptiveDensity r = adaptive_kernel_density(a, adaptive_spec(0.3, 2));
  for (double s : r.sigmas) EXPECT_NEAR(s, 0.3 * 8.0, 1e-12);
}

TEST(AdaptiveKernel, FewHeadsFallBackToFixedSigma) {
  const AdaptiveDensity r = adaptive_kernel_density(heads(32, 32, {{5, 5}, {10, 10}, {20, 20}}), adaptive_spec(0.3, 3, 2.5));
  EXPECT_TRUE(r.used_fallback);
  for (double s : r.sigmas) EXPECT_EQ(s, 2.5);
  EXPECT_EQ(r.density, fixed_kernel_density(heads(32, 32, {{5, 5}, {10, 10}, {20, 20}}), fixed_spec(2.5)));
}

TEST(AdaptiveKernel, MeanOfKNearestMatchesBruteForce) {
  std::mt19937_64 rng(6);
  const HeadAnnotations a = random_heads(rng, 50, 50, 12);
  const AdaptiveDensity r = adaptive_kernel_density(a, adaptive_spec(0.3, 3));
  for (std::size_t i = 0; i < a.count(); ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < a.count(); ++j) {
      if (i != j) d.push_back(std::sqrt(std::pow(a.points[i].x - a.points[j].x, 2) + std::pow(a.points[i].y - a.points[j].y, 2)));
    }
    std::sort(d.begin(), d.end());
    EXPECT_NEAR(r.sigmas[i], 0.3 * (d[0] + d[1] + d[2]) / 3.0, 1e-12);
  }
  EXPECT_NEAR(integral(r.density), 12.0, 12e-6);
}

TEST(Conservation, RandomAnnotationSetsBothKernels) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> count(0, 60);
  for (int trial = 0; trial < 100; ++trial) {
    const HeadAnnotations a = random_heads(rng, 48, 56, count(rng));
    const double c = static_cast<double>(a.count());
    EXPECT_LE(std::abs(total_count(fixed_kernel_density(a, fixed_spec(4.0))) - c), 1e-6 * c);
    EXPECT_LE(std::abs(total_count(adaptive_kernel_density(a, adaptive_spec(0.3, 3)).density) - c), 1e-6 * c);
  }
}

TEST(Downsample, BlockSums) {
  DensityMap m(8, 8, 5.0 / 64.0);
  const DensityMap one = downsample_density(m, 8);
  ASSERT_EQ(one.h, 1u);
  EXPECT_DOUBLE_EQ(one(0, 0), 5.0);
  const DensityMap half = downsample_density(DensityMap(6, 4, 0.25), 2);
  EXPECT_EQ(half, DensityMap(3, 2, 1.0));
  EXPECT_THROW(downsample_density(DensityMap(9, 8), 8), DimensionError);
}

TEST(Downsample, ConservesCountExactlyOnDyadicMaps) {
  // Multiples of 2^-20 below 1 add without rounding in binary64, so both
  // summation orders give the exact total.
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> q(0, 1 << 20);
  DensityMap m(64, 48);
  for (double& v : m.values) v = std::ldexp(static_cast<double>(q(rng)), -20);
  EXPECT_EQ(total_count(downsample_density(m, 8)), integral(m));
  EXPECT_EQ(total_count(downsample_density(m, 4)), integral(m));
}

TEST(Downsample, ConservesCountOnGeneralMaps) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 0.01);
  DensityMap m(64, 64);
  for (int trial = 0; trial < 50; ++trial) {
    for (double& v : m.values) v = u(rng);
    for (std::size_t f : {2u, 4u, 8u, 16u}) {
      const DensityMap d = downsample_density(m, f);
      EXPECT_EQ(total_count(d), total_count(m)) << "trial " << trial << " factor " << f;
      EXPECT_NEAR(total_count(d), integral(m), 1e-12 * integral(m));
    }
  }
}

TEST(Downsample, PaddedVariantHandlesRaggedEdges) {
  const DensityMap d = downsample_density_padded(DensityMap(10, 9, 1.0), 8);
  EXPECT_EQ(d.h, 2u);
  EXPECT_EQ(d.w, 2u);
  EXPECT_DOUBLE_EQ(d(0, 0), 64.0);
  EXPECT_DOUBLE_EQ(d(1, 1), 2.0);
  EXPECT_DOUBLE_EQ(total_count(d), 90.0);
}

TEST(AnnotationJson, RoundTripAndErrors) {
  const HeadAnnotations a = heads(10, 12, {{1.5, 2.25}, {11.0, 9.5}});
  const HeadAnnotations b = annotations_from_json(annotations_to_json(a));
  EXPECT_EQ(b.h, a.h);
  EXPECT_EQ(b.w, a.w);
  EXPECT_EQ(b.points, a.points);
  EXPECT_THROW(annotations_from_json(nlohmann::json::parse(R"({"w":4,"h":4,"points":[[1]]})")), FormatError);
  EXPECT_THROW(annotations_from_json(nlohmann::json::parse(R"({"w":4,"points":[]})")), FormatError);
  EXPECT_THROW(annotations_from_json(nlohmann::json::parse(R"({"w":4,"h":4,"points":[[5,1]]})")), FormatError);
}

TEST(TotalCount, CorrectlyRoundedAndOrderIndependent) {
  DensityMap m(1, 7);
  m.values = {1e100, 1.0, -1e100, 1e-100, 1e50, -1.0, -1e50};
  EXPECT_EQ(total_count(m), 1e-100);
  DensityMap tenths(2, 5, 0.1);
  EXPECT_EQ(total_count(tenths), 1.0);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1e-3);
  DensityMap r(16, 16);
  for (double& v : r.values) v = u(rng);
  const double before = total_count(r);
  for (int k = 0; k < 5; ++k) {
    std::shuffle(r.values.begin(), r.values.end(), rng);
    EXPECT_EQ(total_count(r), before);
  }
}
