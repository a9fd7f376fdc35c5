#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "crowdscale/model.hpp"
#include "gradcheck.hpp"
#include "model_check.hpp"

using namespace crowdscale;
using crowdscale::oracle::random_tensor;

namespace {

const Variant kAllVariants[] = {Variant::can, Variant::ecan, Variant::vgg_simple, Variant::vgg_concat,
                                Variant::vgg_ncont};

ModelConfig small(Variant v, std::uint64_t seed = 1) {
  ModelConfig c;
  c.variant = v;
  c.width_multiplier = 0.125;
  c.seed = seed;
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("crowdscale_model_" + name)).string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, VariantNamesRoundTrip) {
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(variant_name(v)), v);
  EXPECT_EQ(variant_name(Variant::vgg_ncont), "vgg-ncont");
  EXPECT_THROW(parse_variant("resnet"), ConfigError);
}

TEST(Config, ValidationRules) {
  ModelConfig c;
  c.block_sizes = {1, 3, 2, 6};
  EXPECT_THROW(c.validate(), ConfigError);
  c.block_sizes = {1, 2, 3};
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.width_multiplier = 1.0 / 128.0;
  EXPECT_THROW(build<float>(c), ConfigError);
  c.width_multiplier = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Build, SameSeedIsBitIdentical) {
  const ModelParams<float> a = build<float>(small(Variant::can, 9));
  const ModelParams<float> b = build<float>(small(Variant::can, 9));
  const ModelParams<float> c = build<float>(small(Variant::can, 10));
  const auto na = a.named(), nb = b.named(), nc = c.named();
  ASSERT_EQ(na.size(), nb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    EXPECT_EQ(*na[i].second, *nb[i].second) << na[i].first;
    any_diff = any_diff || !(*na[i].second == *nc[i].second);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Build, ChannelCountsFollowLayerTable) {
  ModelConfig full;
  const ModelParams<float> p = build<float>(full);
  const std::size_t expected_front[] = {64, 64, 128, 128, 256, 256, 256, 512, 512, 512};
  ASSERT_EQ(p.frontend.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(p.frontend[i].out_channels(), expected_front[i]);
  const std::size_t expected_back[] = {512, 512, 512, 256, 128, 64, 1};
  ASSERT_EQ(p.decoder.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(p.decoder[i].out_channels(), expected_back[i]);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(p.decoder[i].dilation, 2u);
    EXPECT_EQ(p.decoder[i].kernel(), 3u);
  }
  EXPECT_EQ(p.decoder.back().kernel(), 1u);
  EXPECT_EQ(p.feature_channels(), 512u);
  EXPECT_EQ(build<float>(small(Variant::can)).feature_channels(), 64u);
}

TEST(Build, DecoderInputChannelsPerVariant) {
  EXPECT_EQ(build<float>(small(Variant::vgg_simple)).decoder_input_channels(), 64u);
  EXPECT_EQ(build<float>(small(Variant::can)).decoder_input_channels(), 128u);
  EXPECT_EQ(build<float>(small(Variant::vgg_ncont)).decoder_input_channels(), 128u);
  EXPECT_EQ(build<float>(small(Variant::ecan)).decoder_input_channels(), 128u);
  EXPECT_EQ(build<float>(small(Variant::vgg_concat)).decoder_input_channels(), 5u * 64u);
}

TEST(Build, InitialisationStatistics) {
  // He-style Gaussian: empirical std of a large layer close to sqrt(2 / fan_in).
  ModelConfig c;
  const ModelParams<double> p = build<double>(c);
  const Tensor4<double>& w = p.frontend[8].weight;  // 512 x 512 x 3 x 3
  double sum = 0.0, sq = 0.0;
  for (double v : w.values()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(w.size());
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  EXPECT_NEAR(sd / std::sqrt(2.0 / (512 * 9)), 1.0, 0.01);
  for (double v : p.frontend[8].bias.values()) EXPECT_EQ(v, 0.0);
}

TEST(Frontend, ShapesAndZeroInput) {
  ModelParams<double> p = build<double>(small(Variant::can));
  Graph<double> g;
  Var<double> f = frontend_forward(g, p, g.constant(Tensor4<double>(1, 3, 64, 64)));
  EXPECT_EQ(f.shape(), (Shape{1, 64, 8, 8}));
  for (double v : f.value().values()) EXPECT_EQ(v, 0.0);
  Var<double> f2 = frontend_forward(g, p, g.constant(Tensor4<double>(1, 3, 128, 64)));
  EXPECT_EQ(f2.shape(), (Shape{1, 64, 16, 8}));
  EXPECT_THROW(frontend_forward(g, p, g.constant(Tensor4<double>(1, 3, 60, 64))), DimensionError);
}

TEST(Context, PooledDimsAndFeatureShapes) {
  std::mt19937_64 rng(2);
  ModelParams<double> p = build<double>(small(Variant::can));
  Graph<double> g;
  const FeatureBundle<double> fb = context_forward(g, p, g.constant(random_tensor({1, 64, 12, 12}, rng)));
  const std::size_t k[] = {1, 2, 3, 6};
  ASSERT_EQ(fb.pooled.size(), 4u);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(fb.pooled[j].shape(), (Shape{1, 64, k[j], k[j]}));
    EXPECT_EQ(fb.s[j].shape(), (Shape{1, 64, 12, 12}));
    EXPECT_EQ(fb.c[j].shape(), (Shape{1, 64, 12, 12}));
    EXPECT_EQ(fb.omega[j].shape(), (Shape{1, 64, 12, 12}));
  }
  EXPECT_EQ(fb.f_I.shape(), (Shape{1, 128, 12, 12}));
}

TEST(Context, IdentityNetsOnConstantFeatureGiveHalfWeights) {
  ModelParams<double> p = build<double>(small(Variant::can));
  for (ConvLayer<double>& l : p.context) {
    l.weight = Tensor4<double>(l.weight.shape());
    for (std::size_t c = 0; c < l.weight.n(); ++c) l.weight.at(c, c, 0, 0) = 1.0;
  }
  Graph<double> g;
  const FeatureBundle<double> fb = context_forward(g, p, g.constant(Tensor4<double>(1, 64, 8, 8, 0.7)));
  for (std::size_t j = 0; j < 4; ++j) {
    for (double v : fb.c[j].value().values()) EXPECT_NEAR(v, 0.0, 1e-15);
    for (double v : fb.omega[j].value().values()) EXPECT_NEAR(v, 0.5, 1e-12);
  }
  for (double v : fb.fused.value().values()) EXPECT_NEAR(v, 0.7, 1e-8);
}

TEST(Context, FusionIsWeightedAverageOfScales) {
  std::mt19937_64 rng(3);
  ModelParams<double> p = build<double>(small(Variant::can, 3));
  for (int trial = 0; trial < 5; ++trial) {
    Graph<double> g;
    const FeatureBundle<double> fb = context_forward(g, p, g.constant(random_tensor({1, 64, 8, 8}, rng, 0.0, 2.0)));
    for (std::size_t i = 0; i < fb.fused.value().size(); ++i) {
      double lo = 1e300, hi = -1e300, num = 0.0, den = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        const double s = fb.s[j].value()[i], w = fb.omega[j].value()[i];
        lo = std::min(lo, s);
        hi = std::max(hi, s);
        num += w * s;
        den += w;
        EXPECT_GT(w, 0.0);
        EXPECT_LT(w, 1.0);
      }
      EXPECT_GE(fb.fused.value()[i], lo - 1e-5);
      EXPECT_LE(fb.fused.value()[i], hi + 1e-5);
      EXPECT_NEAR(fb.fused.value()[i], num / (den + 1e-8), 1e-12);
    }
  }
}

TEST(Context, NcontFeedsScaleFeaturesCanFeedsContrast) {
  std::mt19937_64 rng(4);
  const Tensor4<double> f = random_tensor({1, 64, 8, 8}, rng);
  for (Variant v : {Variant::can, Variant::vgg_ncont}) {
    ModelParams<double> p = build<double>(small(v));
    Graph<double> g;
    const FeatureBundle<double> fb = context_forward(g, p, g.constant(f));
    for (std::size_t j = 0; j < 4; ++j) {
      const std::size_t expected = v == Variant::can ? fb.c[j].id : fb.s[j].id;
      EXPECT_EQ(fb.weight_inputs[j].id, expected);
    }
  }
}

TEST(Context, ScaleOrderPermutationLeavesFusionUnchanged) {
  std::mt19937_64 rng(5);
  const Tensor4<double> f = random_tensor({1, 64, 8, 8}, rng);
  ModelParams<double> p = build<double>(small(Variant::can, 5));
  ModelParams<double> q = p;
  const std::size_t perm[] = {2, 0, 3, 1};
  for (std::size_t j = 0; j < 4; ++j) {
    q.config.block_sizes[j] = p.config.block_sizes[perm[j]];
    q.context[j] = p.context[perm[j]];
    q.weight_nets[j] = p.weight_nets[perm[j]];
  }
  Graph<double> g;
  const Tensor4<double> a = context_forward(g, p, g.constant(f)).fused.value();
  const Tensor4<double> b = context_forward(g, q, g.constant(f)).fused.value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Context, ConcatStacksAllScales) {
  std::mt19937_64 rng(6);
  ModelParams<double> p = build<double>(small(Variant::vgg_concat));
  Graph<double> g;
  const FeatureBundle<double> fb = context_forward(g, p, g.constant(random_tensor({1, 64, 8, 8}, rng)));
  EXPECT_EQ(fb.f_I.shape().c, 5u * 64u);
  EXPECT_TRUE(fb.omega.empty());
  EXPECT_EQ(fb.f_I.value().at(0, 64 + 3, 2, 2), fb.s[0].value().at(0, 3, 2, 2));
}

TEST(Geometry, ShapesZeroInputAndVariantGuard) {
  ModelParams<double> p = build<double>(small(Variant::ecan));
  Graph<double> g;
  Var<double> fg = geometry_forward(g, p, g.constant(Tensor4<double>(1, 1, 64, 64)));
  EXPECT_EQ(fg.shape(), (Shape{1, 64, 8, 8}));
  for (double v : fg.value().values()) EXPECT_EQ(v, 0.0);
  ModelParams<double> c = build<double>(small(Variant::can));
  EXPECT_THROW(geometry_forward(g, c, g.constant(Tensor4<double>(1, 1, 64, 64))), ConfigError);
}

TEST(Geometry, ZeroInputsAndWeightsGiveHalf) {
  ModelParams<double> p = build<double>(small(Variant::ecan));
  for (ConvLayer<double>& l : p.weight_nets) l.weight = Tensor4<double>(l.weight.shape());
  Graph<double> g;
  std::vector<Var<double>> c(4, g.constant(Tensor4<double>(1, 64, 8, 8)));
  const auto omega = geometry_weights(g, p, c, g.constant(Tensor4<double>(1, 64, 8, 8)));
  ASSERT_EQ(omega.size(), 4u);
  for (const auto& w : omega) {
    EXPECT_EQ(w.shape(), (Shape{1, 64, 8, 8}));
    for (double v : w.value().values()) EXPECT_EQ(v, 0.5);
  }
  EXPECT_THROW(geometry_weights(g, p, c, g.constant(Tensor4<double>(1, 32, 8, 8))), DimensionError);
}

TEST(Geometry, EcanNeedsPerspective) {
  ModelParams<double> p = build<double>(small(Variant::ecan));
  EXPECT_THROW(predict_density(p, Tensor4<double>(1, 3, 64, 64)), UsageError);
}

TEST(SingleChannelInit, MeanOfRgbSlices) {
  Tensor4<double> rgb(2, 3, 3, 3);
  for (std::size_t o = 0; o < 2; ++o) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < 9; ++i) rgb.plane(o, c)[i] = static_cast<double>(c + 1);
    }
  }
  const Tensor4<double> mean = init_single_channel_from_rgb(rgb);
  for (double v : mean.values()) EXPECT_DOUBLE_EQ(v, 2.0);
  std::mt19937_64 rng(7);
  Tensor4<double> same = random_tensor({4, 1, 3, 3}, rng);
  Tensor4<double> tripled(4, 3, 3, 3);
  for (std::size_t o = 0; o < 4; ++o) {
    for (std::size_t c = 0; c < 3; ++c) std::copy_n(same.plane(o, 0), 9, tripled.plane(o, c));
  }
  const Tensor4<double> back = init_single_channel_from_rgb(tripled);
  for (std::size_t i = 0; i < same.size(); ++i) EXPECT_NEAR(back[i], same[i], 1e-15);
  EXPECT_THROW(init_single_channel_from_rgb(Tensor4<double>(4, 2, 3, 3)), DimensionError);
}

TEST(SingleChannelInit, ReproducesGrayscaleResponseByLinearity) {
  // conv_rgb([g, g, g]) = sum_c w_c * g = 3 * (mean_c w_c) * g.
  std::mt19937_64 rng(8);
  const Tensor4<double> w = random_tensor({8, 3, 3, 3}, rng);
  const Tensor4<double> gray = random_tensor({1, 1, 16, 16}, rng, 0.0, 1.0);
  Tensor4<double> rgb(1, 3, 16, 16);
  for (std::size_t c = 0; c < 3; ++c) std::copy_n(gray.plane(0, 0), 256, rgb.plane(0, c));
  const Tensor4<double> b(1, 8, 1, 1);
  const Tensor4<double> full = kernels::conv2d_forward(rgb, w, b, 1, 1);
  const Tensor4<double> single = kernels::conv2d_forward(gray, init_single_channel_from_rgb(w), b, 1, 1);
  for (std::size_t i = 0; i < full.size(); ++i) EXPECT_NEAR(full[i], 3.0 * single[i], 1e-5);
}

TEST(Decoder, LinearOutputAndChannelGuard) {
  std::mt19937_64 rng(9);
  ModelParams<double> p = build<double>(small(Variant::can));
  p.decoder.back().weight.fill(0.0);
  p.decoder.back().bias.fill(-0.3);
  Graph<double> g;
  Var<double> d = decoder_forward(g, p, g.constant(random_tensor({1, 128, 8, 8}, rng)));
  EXPECT_EQ(d.shape(), (Shape{1, 1, 8, 8}));
  // No clamp after the last 1x1 conv.
  for (double v : d.value().values()) EXPECT_EQ(v, -0.3);
  EXPECT_THROW(decoder_forward(g, p, g.constant(Tensor4<double>(1, 64, 8, 8))), ConfigError);
}

TEST(Forward, ShapeContractAllVariants) {
  for (Variant v : kAllVariants) {
    ModelParams<float> p = build<float>(small(v));
    for (std::size_t h : {64u, 128u}) {
      for (std::size_t w : {64u, 128u}) {
        const Tensor4<float> persp(1, 1, h, w, 0.5f);
        const Tensor4<float> d = predict_density(p, Tensor4<float>(1, 3, h, w, 0.3f), &persp);
        EXPECT_EQ(d.shape(), (Shape{1, 1, h / 8, w / 8})) << variant_name(v);
      }
    }
  }
}

TEST(Forward, GradientsMatchFiniteDifferencesForEveryVariant) {
  for (Variant v : kAllVariants) {
    ModelParams<double> p = build<double>(small(v, 21));
    const auto in = oracle::random_model_inputs(64, 64, 22);
    const auto r = oracle::check_model_gradients(p, in, 1, 23);
    EXPECT_LT(r.max_rel_error, 1e-4) << variant_name(v) << ": " << r.worst;
    EXPECT_GT(r.nonzero, r.checked / 2) << variant_name(v);
  }
}

TEST(Forward, GradientsReachGeometryBranch) {
  ModelParams<double> p = build<double>(small(Variant::ecan, 31));
  const auto in = oracle::random_model_inputs(64, 64, 32);
  const auto r = oracle::check_model_gradients(p, in, 3, 33, "geometry.");
  EXPECT_GT(r.nonzero, 0u);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Forward, PrecisionModesAgree) {
  ModelParams<double> p = build<double>(small(Variant::can, 41));
  ModelParams<float> q = p.cast<float>();
  std::mt19937_64 rng(42);
  const Tensor4<double> img = random_tensor({1, 3, 64, 64}, rng, 0.0, 1.0);
  const Tensor4<double> a = predict_density(p, img);
  const Tensor4<float> b = predict_density(q, img.cast<float>());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-4 * (1.0 + std::abs(a[i])));
}

TEST(WeightsFile, RoundTripIsByteIdentical) {
  const ModelParams<float> p = build<float>(small(Variant::ecan, 51));
  const std::string a = temp_path("a.canw"), b = temp_path("b.canw");
  save_params(p, a);
  const ModelParams<float> back = load_params<float>(a);
  EXPECT_EQ(back.config.variant, Variant::ecan);
  EXPECT_EQ(back.config.width_multiplier, 0.125);
  save_params(back, b);
  EXPECT_EQ(file_bytes(a), file_bytes(b));
  const auto pa = p.named(), pb = back.named();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i].second, *pb[i].second);
  std::remove(a.c_str());
  std::remove(b.c_str());
}

TEST(WeightsFile, MissingRecordIsNamed) {
  const ModelParams<float> p = build<float>(small(Variant::can, 52));
  auto records = to_records(p);
  records.erase(std::remove_if(records.begin(), records.end(),
                               [](const WeightRecord& r) { return r.name == "decoder.3.bias"; }),
                records.end());
  ModelParams<float> q = build<float>(small(Variant::can, 53));
  try {
    merge_records(q, records, LoadMode::strict);
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("decoder.3.bias"), std::string::npos);
  }
}

TEST(WeightsFile, PartialLoadKeepsOtherParameters) {
  const ModelParams<float> src = build<float>(small(Variant::can, 54));
  std::vector<WeightRecord> front;
  for (const WeightRecord& r : to_records(src)) {
    if (r.name.rfind("frontend.", 0) == 0) front.push_back(r);
  }
  ModelParams<float> dst = build<float>(small(Variant::can, 55));
  const ModelParams<float> fresh = dst;
  merge_records(dst, front, LoadMode::partial);
  for (std::size_t i = 0; i < dst.frontend.size(); ++i) EXPECT_EQ(dst.frontend[i].weight, src.frontend[i].weight);
  for (std::size_t i = 0; i < dst.decoder.size(); ++i) EXPECT_EQ(dst.decoder[i].weight, fresh.decoder[i].weight);
  for (std::size_t i = 0; i < dst.context.size(); ++i) EXPECT_EQ(dst.context[i].weight, fresh.context[i].weight);
}

TEST(WeightsFile, ShapeAndVariantMismatches) {
  const ModelParams<float> src = build<float>(small(Variant::can, 56));
  ModelParams<float> wide = build<float>([] {
    ModelConfig c = small(Variant::can);
    c.width_multiplier = 0.25;
    return c;
  }());
  EXPECT_THROW(merge_records(wide, to_records(src), LoadMode::strict), FormatError);
  ModelParams<float> simple = build<float>(small(Variant::vgg_simple));
  EXPECT_THROW(merge_records(simple, to_records(src), LoadMode::strict), ConfigError);
  std::istringstream junk("NOPE 1 0\n");
  EXPECT_THROW(read_canw(junk), FormatError);
}
