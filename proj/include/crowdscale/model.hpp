#pragma once

// Context-aware counting networks.
//
//   f_v   = front-end(image)                       10 convs + 3 max pools
//   s_j   = upsample(relu(conv1x1_j(avgpool(f_v, k_j))))
//   c_j   = s_j - f_v
//   w_j   = sigmoid(conv1x1(c_j))                  CAN
//         = sigmoid(conv1x1(s_j))                  VGG_NCONT
//         = sigmoid(conv1x1([c_j | f_g]))          ECAN, f_g = front-end'(M)
//   fused = sum_j w_j * s_j / (sum_j w_j + eps)
//   f_I   = [f_v | fused]
//   D     = decoder(f_I)                           6 dilated convs + 1x1, linear output
//
// VGG_SIMPLE feeds f_v straight to the decoder and VGG_CONCAT feeds
// [f_v | s_1 | ... | s_S].

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "crowdscale/autodiff.hpp"
#include "crowdscale/error.hpp"
#include "crowdscale/geometry.hpp"
#include "crowdscale/tensor.hpp"

namespace crowdscale {

enum class Variant { can, ecan, vgg_simple, vgg_concat, vgg_ncont };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::can: return "can";
    case Variant::ecan: return "ecan";
    case Variant::vgg_simple: return "vgg-simple";
    case Variant::vgg_concat: return "vgg-concat";
    case Variant::vgg_ncont: return "vgg-ncont";
  }
  return "?";
}

inline Variant parse_variant(std::string s) {
  for (char& ch : s) ch = ch == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (s == "can" || s == "ours-can") return Variant::can;
  if (s == "ecan" || s == "ours-ecan") return Variant::ecan;
  if (s == "vgg-simple") return Variant::vgg_simple;
  if (s == "vgg-concat") return Variant::vgg_concat;
  if (s == "vgg-ncont") return Variant::vgg_ncont;
  throw ConfigError("unknown model variant '" + s + "'");
}

struct ModelConfig {
  Variant variant = Variant::can;
  std::size_t scales = 4;
  std::vector<std::size_t> block_sizes{1, 2, 3, 6};
  double width_multiplier = 1.0;
  std::uint64_t seed = 0;
  // One weight map per scale broadcast over channels instead of one per channel.
  bool single_channel_weights = false;

  bool uses_context() const { return variant != Variant::vgg_simple; }
  bool uses_weights() const { return variant != Variant::vgg_simple && variant != Variant::vgg_concat; }
  bool uses_geometry() const { return variant == Variant::ecan; }

  // base * width_multiplier, rounded down.
  std::size_t channels(std::size_t base) const {
    const auto c = static_cast<std::size_t>(std::floor(static_cast<double>(base) * width_multiplier + 1e-9));
    if (c == 0) {
      throw ConfigError("width_multiplier " + std::to_string(width_multiplier) + " leaves a " + std::to_string(base) +
                        "-channel layer with no channels");
    }
    return c;
  }

  void validate() const {
    if (!(width_multiplier > 0.0 && width_multiplier <= 1.0)) throw ConfigError("width_multiplier must be in (0, 1]");
    if (block_sizes.size() != scales) throw ConfigError("block_sizes must list exactly `scales` entries");
    if (scales == 0) throw ConfigError("at least one scale is required");
    for (std::size_t j = 0; j < block_sizes.size(); ++j) {
      if (block_sizes[j] < 1) throw ConfigError("block sizes must be >= 1");
      if (j > 0 && block_sizes[j] <= block_sizes[j - 1]) throw ConfigError("block sizes must be strictly increasing");
    }
    channels(64);
    channels(512);
  }
};

template <typename T>
struct ConvLayer {
  Tensor4<T> weight;  // [out, in, k, k]
  Tensor4<T> bias;    // [1, out, 1, 1]
  std::size_t dilation = 1;

  std::size_t in_channels() const { return weight.c(); }
  std::size_t out_channels() const { return weight.n(); }
  std::size_t kernel() const { return weight.h(); }
};

// Front-end layout; 0 marks a 2x2 max pool.
inline constexpr std::size_t kFrontendPlan[] = {64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512};
inline constexpr std::size_t kFrontendFeatures = 512;
// Back-end: six 3x3 dilation-2 convs then a 1x1 to one channel.
inline constexpr std::size_t kDecoderPlan[] = {512, 512, 512, 256, 128, 64};
inline constexpr std::size_t kDecoderDilation = 2;
inline constexpr std::size_t kOutputStride = 8;

template <typename T>
struct ModelParams {
  ModelConfig config;
  std::vector<ConvLayer<T>> frontend;
  std::vector<ConvLayer<T>> context;
  std::vector<ConvLayer<T>> weight_nets;
  std::vector<ConvLayer<T>> geometry;
  std::vector<ConvLayer<T>> decoder;

  std::size_t feature_channels() const { return config.channels(kFrontendFeatures); }

  std::size_t decoder_input_channels() const {
    const std::size_t c = feature_channels();
    switch (config.variant) {
      case Variant::vgg_simple: return c;
      case Variant::vgg_concat: return (1 + config.scales) * c;
      default: return 2 * c;
    }
  }

  // Every trainable tensor with its record name, in a fixed order.
  std::vector<std::pair<std::string, Tensor4<T>*>> named() {
    std::vector<std::pair<std::string, Tensor4<T>*>> out;
    auto add = [&out](const std::string& prefix, std::vector<ConvLayer<T>>& layers) {
      for (std::size_t i = 0; i < layers.size(); ++i) {
        out.emplace_back(prefix + "." + std::to_string(i) + ".weight", &layers[i].weight);
        out.emplace_back(prefix + "." + std::to_string(i) + ".bias", &layers[i].bias);
      }
    };
    add("frontend", frontend);
    add("context", context);
    add("weight_net", weight_nets);
    add("geometry", geometry);
    add("decoder", decoder);
    return out;
  }

  std::vector<std::pair<std::string, const Tensor4<T>*>> named() const {
    std::vector<std::pair<std::string, const Tensor4<T>*>> out;
    for (auto& [name, ptr] : const_cast<ModelParams*>(this)->named()) out.emplace_back(name, ptr);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named()) n += t->size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : named()) t->zero_grad();
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.config = config;
    auto convert = [](const std::vector<ConvLayer<T>>& in) {
      std::vector<ConvLayer<U>> layers;
      for (const ConvLayer<T>& l : in) layers.push_back({l.weight.template cast<U>(), l.bias.template cast<U>(), l.dilation});
      return layers;
    };
    out.frontend = convert(frontend);
    out.context = convert(context);
    out.weight_nets = convert(weight_nets);
    out.geometry = convert(geometry);
    out.decoder = convert(decoder);
    return out;
  }
};

// First-layer kernel for a single-channel input: the mean of the three RGB
// input-channel slices.
template <typename T>
Tensor4<T> init_single_channel_from_rgb(const Tensor4<T>& rgb) {
  if (rgb.c() != 3) {
    throw DimensionError("init_single_channel_from_rgb expects 3 input channels, got " + std::to_string(rgb.c()));
  }
  Tensor4<T> out(rgb.n(), 1, rgb.h(), rgb.w());
  const std::size_t kk = rgb.h() * rgb.w();
  for (std::size_t o = 0; o < rgb.n(); ++o) {
    for (std::size_t i = 0; i < kk; ++i) {
      out.plane(o, 0)[i] = (rgb.plane(o, 0)[i] + rgb.plane(o, 1)[i] + rgb.plane(o, 2)[i]) / T{3};
    }
  }
  return out;
}

namespace detail {

// Fan-in scaled Gaussian weights (std = sqrt(2 / fan_in)), zero bias.
template <typename T>
ConvLayer<T> init_conv(std::mt19937_64& rng, std::size_t in, std::size_t out, std::size_t k, std::size_t dilation) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in * k * k)));
  ConvLayer<T> layer{Tensor4<T>(out, in, k, k), Tensor4<T>(1, out, 1, 1), dilation};
  for (std::size_t i = 0; i < layer.weight.size(); ++i) layer.weight[i] = static_cast<T>(normal(rng));
  return layer;
}

}  // namespace detail

template <typename T>
ModelParams<T> build(const ModelConfig& config) {
  config.validate();
  ModelParams<T> p;
  p.config = config;
  std::mt19937_64 rng(config.seed);

  std::size_t in = 3;
  for (std::size_t base : kFrontendPlan) {
    if (base == 0) continue;
    const std::size_t out = config.channels(base);
    p.frontend.push_back(detail::init_conv<T>(rng, in, out, 3, 1));
    in = out;
  }
  const std::size_t c = p.feature_channels();
  if (config.uses_context()) {
    for (std::size_t j = 0; j < config.scales; ++j) p.context.push_back(detail::init_conv<T>(rng, c, c, 1, 1));
  }
  if (config.uses_weights()) {
    const std::size_t win = config.uses_geometry() ? 2 * c : c;
    const std::size_t wout = config.single_channel_weights ? 1 : c;
    for (std::size_t j = 0; j < config.scales; ++j) p.weight_nets.push_back(detail::init_conv<T>(rng, win, wout, 1, 1));
  }
  if (config.uses_geometry()) {
    // Clone of the front-end with a single input channel.
    p.geometry = p.frontend;
    p.geometry.front().weight = init_single_channel_from_rgb(p.frontend.front().weight);
  }
  in = p.decoder_input_channels();
  for (std::size_t base : kDecoderPlan) {
    const std::size_t out = config.channels(base);
    p.decoder.push_back(detail::init_conv<T>(rng, in, out, 3, kDecoderDilation));
    in = out;
  }
  p.decoder.push_back(detail::init_conv<T>(rng, in, 1, 1, 1));
  return p;
}

// ---------------------------------------------------------------------------
// Forward pass

template <typename T>
struct FeatureBundle {
  Var<T> f_v;
  std::vector<Var<T>> pooled;         // P_ave(f_v, j), k_j x k_j
  std::vector<Var<T>> s;              // scale-aware features
  std::vector<Var<T>> c;              // contrast features
  std::vector<Var<T>> weight_inputs;  // what each weight net consumed
  std::vector<Var<T>> omega;          // weight maps
  Var<T> fused;
  Var<T> f_I;                         // decoder input
  Var<T> f_g;                         // geometry features (ECAN)
};

template <typename T>
struct ForwardResult {
  Var<T> density;
  FeatureBundle<T> features;
};

namespace detail {

template <typename T>
Var<T> apply_conv(Graph<T>& g, Var<T> x, ConvLayer<T>& layer) {
  return ad::conv2d_same(x, g.parameter(layer.weight), g.parameter(layer.bias), layer.dilation);
}

template <typename T>
Var<T> vgg_stack(Graph<T>& g, std::vector<ConvLayer<T>>& layers, Var<T> x) {
  const Shape& s = x.shape();
  if (s.h % kOutputStride != 0 || s.w % kOutputStride != 0) {
    throw DimensionError("front-end input " + to_string(s) + " must have h, w divisible by 8");
  }
  std::size_t layer = 0;
  for (std::size_t base : kFrontendPlan) {
    if (base == 0) {
      x = ad::max_pool2(x);
    } else {
      x = ad::relu(apply_conv(g, x, layers.at(layer++)));
    }
  }
  return x;
}

}  // namespace detail

template <typename T>
Var<T> frontend_forward(Graph<T>& g, ModelParams<T>& params, Var<T> image) {
  if (image.shape().c != params.frontend.front().in_channels()) {
    throw DimensionError("front-end expects " + std::to_string(params.frontend.front().in_channels()) +
                         "-channel images, got " + to_string(image.shape()));
  }
  return detail::vgg_stack(g, params.frontend, image);
}

// Geometry front-end over a normalized perspective map [n, 1, h, w].
template <typename T>
Var<T> geometry_forward(Graph<T>& g, ModelParams<T>& params, Var<T> perspective) {
  if (!params.config.uses_geometry()) {
    throw ConfigError("geometry branch requested for variant " + variant_name(params.config.variant));
  }
  if (perspective.shape().c != 1) throw DimensionError("perspective input must have one channel");
  return detail::vgg_stack(g, params.geometry, perspective);
}

// w_j = sigmoid(conv1x1_j([c_j | f_g])).
template <typename T>
std::vector<Var<T>> geometry_weights(Graph<T>& g, ModelParams<T>& params, const std::vector<Var<T>>& contrast,
                                     Var<T> f_g, std::vector<Var<T>>* inputs = nullptr) {
  if (!params.config.uses_geometry()) {
    throw ConfigError("geometry-guided weights requested for variant " + variant_name(params.config.variant));
  }
  if (contrast.size() != params.weight_nets.size()) throw DimensionError("one contrast feature per scale required");
  std::vector<Var<T>> omega;
  for (std::size_t j = 0; j < contrast.size(); ++j) {
    Var<T> in = ad::concat_channels<T>({contrast[j], f_g});
    if (in.shape().c != params.weight_nets[j].in_channels()) {
      throw DimensionError("geometry weight net " + std::to_string(j) + " expects " +
                           std::to_string(params.weight_nets[j].in_channels()) + " channels, got " +
                           std::to_string(in.shape().c));
    }
    if (inputs != nullptr) inputs->push_back(in);
    omega.push_back(ad::sigmoid(detail::apply_conv(g, in, params.weight_nets[j])));
  }
  return omega;
}

// Scale-aware features, weights and fusion. `f_g` is required for ECAN.
template <typename T>
FeatureBundle<T> context_forward(Graph<T>& g, ModelParams<T>& params, Var<T> f_v, Var<T> f_g = {}) {
  const ModelConfig& cfg = params.config;
  FeatureBundle<T> fb;
  fb.f_v = f_v;
  fb.f_g = f_g;
  if (!cfg.uses_context()) {
    fb.f_I = f_v;
    return fb;
  }
  const std::size_t h = f_v.shape().h, w = f_v.shape().w;
  for (std::size_t j = 0; j < params.context.size(); ++j) {
    Var<T> pooled = ad::adaptive_avg_pool(f_v, cfg.block_sizes.at(j));
    Var<T> s = ad::bilinear_upsample(ad::relu(detail::apply_conv(g, pooled, params.context[j])), h, w);
    fb.pooled.push_back(pooled);
    fb.s.push_back(s);
    fb.c.push_back(ad::sub(s, f_v));
  }
  if (cfg.variant == Variant::vgg_concat) {
    std::vector<Var<T>> parts{f_v};
    parts.insert(parts.end(), fb.s.begin(), fb.s.end());
    fb.f_I = ad::concat_channels(parts);
    return fb;
  }
  if (cfg.uses_geometry()) {
    if (!f_g.valid()) throw UsageError("ECAN context module needs geometry features");
    fb.omega = geometry_weights(g, params, fb.c, f_g, &fb.weight_inputs);
  } else {
    for (std::size_t j = 0; j < params.weight_nets.size(); ++j) {
      Var<T> in = cfg.variant == Variant::vgg_ncont ? fb.s[j] : fb.c[j];
      fb.weight_inputs.push_back(in);
      fb.omega.push_back(ad::sigmoid(detail::apply_conv(g, in, params.weight_nets[j])));
    }
  }
  Var<T> num = ad::mul(fb.s[0], fb.omega[0]);
  Var<T> den = fb.omega[0];
  for (std::size_t j = 1; j < fb.omega.size(); ++j) {
    num = ad::add(num, ad::mul(fb.s[j], fb.omega[j]));
    den = ad::add(den, fb.omega[j]);
  }
  fb.fused = ad::div(num, den);
  fb.f_I = ad::concat_channels<T>({f_v, fb.fused});
  return fb;
}

template <typename T>
Var<T> decoder_forward(Graph<T>& g, ModelParams<T>& params, Var<T> f_I) {
  if (f_I.shape().c != params.decoder_input_channels()) {
    throw ConfigError("decoder for " + variant_name(params.config.variant) + " expects " +
                      std::to_string(params.decoder_input_channels()) + " channels, got " +
                      std::to_string(f_I.shape().c));
  }
  Var<T> x = f_I;
  for (std::size_t i = 0; i + 1 < params.decoder.size(); ++i) x = ad::relu(detail::apply_conv(g, x, params.decoder[i]));
  return detail::apply_conv(g, x, params.decoder.back());
}

// Full network. `perspective` ([n,1,h,w], normalized and scaled like the
// image) is required for ECAN and ignored otherwise.
template <typename T>
ForwardResult<T> forward(Graph<T>& g, ModelParams<T>& params, const Tensor4<T>& image,
                         const Tensor4<T>* perspective = nullptr) {
  Var<T> f_v = frontend_forward(g, params, g.constant(image));
  Var<T> f_g;
  if (params.config.uses_geometry()) {
    if (perspective == nullptr) throw UsageError("ECAN forward needs a perspective map");
    if (perspective->h() != image.h() || perspective->w() != image.w() || perspective->n() != image.n()) {
      throw DimensionError("perspective map " + to_string(perspective->shape()) + " does not match image " +
                           to_string(image.shape()));
    }
    f_g = geometry_forward(g, params, g.constant(*perspective));
  }
  ForwardResult<T> r;
  r.features = context_forward(g, params, f_v, f_g);
  r.density = decoder_forward(g, params, r.features.f_I);
  return r;
}

// Network input for a normalized perspective map: [0, 255] scaled to [0, 1]
// like image pixels.
template <typename T>
Tensor4<T> perspective_input(const Grid<double>& normalized) {
  Tensor4<T> t(1, 1, normalized.h, normalized.w);
  for (std::size_t i = 0; i < normalized.size(); ++i) t[i] = static_cast<T>(normalized.values[i] / 255.0);
  return t;
}

// Density estimate without keeping the graph around.
template <typename T>
Tensor4<T> predict_density(ModelParams<T>& params, const Tensor4<T>& image, const Tensor4<T>* perspective = nullptr) {
  Graph<T> g;
  return forward(g, params, image, perspective).density.value();
}

// ---------------------------------------------------------------------------
// CANW weight files: "CANW 1 <record_count>\n", then per record a line
// "<name> <n> <c> <h> <w>\n" followed by little-endian float32 values.

struct WeightRecord {
  std::string name;
  Tensor4<float> tensor;
};

inline constexpr const char* kVariantRecord = "config.variant";
inline constexpr const char* kBlockSizesRecord = "config.block_sizes";
inline constexpr const char* kWidthRecord = "config.width_multiplier";

inline void write_canw(std::ostream& os, const std::vector<WeightRecord>& records) {
  os << "CANW 1 " << records.size() << '\n';
  for (const WeightRecord& r : records) {
    const Shape& s = r.tensor.shape();
    os << r.name << ' ' << s.n << ' ' << s.c << ' ' << s.h << ' ' << s.w << '\n';
    for (std::size_t i = 0; i < r.tensor.size(); ++i) detail::write_f32_le(os, r.tensor[i]);
  }
}

inline std::vector<WeightRecord> read_canw(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("CANW: missing header");
  std::istringstream hs(line);
  std::string magic;
  int version = 0;
  long long count = -1;
  hs >> magic >> version >> count;
  if (magic != "CANW" || version != 1 || hs.fail() || count < 0) throw FormatError("CANW: malformed header '" + line + "'");
  std::vector<WeightRecord> records;
  for (long long r = 0; r < count; ++r) {
    if (!std::getline(is, line)) throw FormatError("CANW: truncated before record " + std::to_string(r));
    std::istringstream rs(line);
    WeightRecord rec;
    long long n = -1, c = -1, h = -1, w = -1;
    rs >> rec.name >> n >> c >> h >> w;
    if (rs.fail() || n < 0 || c < 0 || h < 0 || w < 0) throw FormatError("CANW: malformed record line '" + line + "'");
    rec.tensor = Tensor4<float>(static_cast<std::size_t>(n), static_cast<std::size_t>(c), static_cast<std::size_t>(h),
                                static_cast<std::size_t>(w));
    for (std::size_t i = 0; i < rec.tensor.size(); ++i) {
      try {
        rec.tensor[i] = detail::read_f32_le(is);
      } catch (const FormatError&) {
        throw FormatError("CANW: record '" + rec.name + "' is truncated");
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

inline float variant_code(Variant v) { return static_cast<float>(static_cast<int>(v)); }

template <typename T>
std::vector<WeightRecord> to_records(const ModelParams<T>& params) {
  std::vector<WeightRecord> out;
  out.push_back({kVariantRecord, Tensor4<float>(1, 1, 1, 1, variant_code(params.config.variant))});
  Tensor4<float> blocks(params.config.block_sizes.size(), 1, 1, 1);
  for (std::size_t j = 0; j < params.config.block_sizes.size(); ++j) blocks[j] = static_cast<float>(params.config.block_sizes[j]);
  out.push_back({kBlockSizesRecord, blocks});
  out.push_back({kWidthRecord, Tensor4<float>(1, 1, 1, 1, static_cast<float>(params.config.width_multiplier))});
  for (const auto& [name, t] : params.named()) out.push_back({name, t->template cast<float>()});
  return out;
}

template <typename T>
void save_params(const ModelParams<T>& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  write_canw(os, to_records(params));
}

inline std::vector<WeightRecord> load_records(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open weight file '" + path + "'");
  try {
    return read_canw(is);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

enum class LoadMode {
  strict,   // every parameter must be present
  partial,  // missing parameters keep their current values
};

// Copies records into params by name. Shape mismatches and unknown records
// are errors in both modes.
template <typename T>
void merge_records(ModelParams<T>& params, const std::vector<WeightRecord>& records, LoadMode mode) {
  std::map<std::string, const WeightRecord*> by_name;
  for (const WeightRecord& r : records) by_name[r.name] = &r;
  if (auto it = by_name.find(kVariantRecord); it != by_name.end()) {
    const float code = it->second->tensor.size() == 1 ? it->second->tensor[0] : -1.0f;
    if (code != variant_code(params.config.variant)) {
      throw ConfigError("weight file variant does not match configured variant " + variant_name(params.config.variant));
    }
  }
  std::set<std::string> known{kVariantRecord, kBlockSizesRecord, kWidthRecord};
  for (auto& [name, t] : params.named()) {
    known.insert(name);
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      if (mode == LoadMode::strict) throw FormatError("weight file is missing record '" + name + "'");
      continue;
    }
    if (it->second->tensor.shape() != t->shape()) {
      throw FormatError("record '" + name + "' has shape " + to_string(it->second->tensor.shape()) + ", expected " +
                        to_string(t->shape()));
    }
    *t = it->second->tensor.template cast<T>();
  }
  for (const WeightRecord& r : records) {
    if (!known.contains(r.name)) throw FormatError("weight file has unknown record '" + r.name + "'");
  }
}

// Builds the model described by `config` and overwrites it from the file.
template <typename T>
ModelParams<T> load_params(const std::string& path, const ModelConfig& config, LoadMode mode = LoadMode::strict) {
  ModelParams<T> params = build<T>(config);
  merge_records(params, load_records(path), mode);
  return params;
}

// Recovers the configuration from the file itself (config records and
// tensor shapes), then loads strictly.
template <typename T>
ModelParams<T> load_params(const std::string& path) {
  const std::vector<WeightRecord> records = load_records(path);
  ModelConfig cfg;
  bool have_variant = false;
  for (const WeightRecord& r : records) {
    if (r.name == kVariantRecord && r.tensor.size() == 1) {
      const int code = static_cast<int>(r.tensor[0]);
      if (code < 0 || code > 4) throw FormatError(path + ": bad variant code");
      cfg.variant = static_cast<Variant>(code);
      have_variant = true;
    } else if (r.name == kBlockSizesRecord) {
      cfg.block_sizes.clear();
      for (std::size_t j = 0; j < r.tensor.size(); ++j) cfg.block_sizes.push_back(static_cast<std::size_t>(r.tensor[j]));
      cfg.scales = cfg.block_sizes.size();
    } else if (r.name == kWidthRecord && r.tensor.size() == 1) {
      cfg.width_multiplier = static_cast<double>(r.tensor[0]);
    } else if (r.name == "weight_net.0.weight") {
      cfg.single_channel_weights = r.tensor.n() == 1 && r.tensor.c() > 2;
    }
  }
  if (!have_variant) throw FormatError(path + ": no '" + std::string(kVariantRecord) + "' record; pass a model config");
  ModelParams<T> params = build<T>(cfg);
  merge_records(params, records, LoadMode::strict);
  return params;
}

}  // namespace crowdscale
