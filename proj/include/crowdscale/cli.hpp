#pragma once

// Batch command line: gen-gt, gen-perspective, train, eval, predict, synth.
//
// Every command takes one JSON run config (--config) whose fields can be
// overridden by flags. The effective config is written as config.json into
// the output directory next to a MANIFEST.sha256 of everything emitted.
//
// Exit codes: 0 ok, 1 usage/config, 2 data/format, 3 numerical, 4 finished
// with a warning (degenerate perspective normalization).

#include <openssl/evp.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "crowdscale/evaluation.hpp"
#include "crowdscale/geometry.hpp"
#include "crowdscale/groundtruth.hpp"
#include "crowdscale/image_io.hpp"
#include "crowdscale/log.hpp"
#include "crowdscale/model.hpp"
#include "crowdscale/synth.hpp"
#include "crowdscale/training.hpp"

namespace crowdscale::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3, kWarning = 4 };

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e)) return kUsage;
  if (dynamic_cast<const NumericalError*>(&e)) return kNumerical;
  return kData;
}

// ---------------------------------------------------------------------------
// SHA-256 and the manifest

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw FormatError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw FormatError("cannot write '" + p.string() + "'");
  os << bytes;
}

// Output directory that remembers what was written into it.
class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec) throw UsageError("cannot create output directory '" + root_.string() + "': " + ec.message());
  }

  const fs::path& root() const { return root_; }

  fs::path path(const std::string& rel) {
    const fs::path p = root_ / rel;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    files_.push_back(rel);
    return p;
  }

  void write(const std::string& rel, const std::string& bytes) { write_file(path(rel), bytes); }

  // config.json then the manifest over every recorded file, sorted by name.
  // The output path itself is left out so a rerun elsewhere matches byte
  // for byte.
  void finish(json config) {
    if (config.contains("paths") && config["paths"].is_object()) config["paths"].erase("output");
    write("config.json", config.dump(2) + "\n");
    std::vector<std::string> names = files_;
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    std::ostringstream m;
    for (const std::string& n : names) m << sha256_hex(read_file(root_ / n)) << "  " << n << '\n';
    write_file(root_ / "MANIFEST.sha256", m.str());
  }

 private:
  fs::path root_;
  std::vector<std::string> files_;
};

// ---------------------------------------------------------------------------
// Run config

struct Paths {
  std::string images, annotations, homographies, rois, density, perspective, weights, output, stats;
};

struct RunConfig {
  json doc;  // effective config, echoed into outputs
  ModelConfig model;
  TrainConfig train;
  KernelSpec kernel;
  bool sigma_given = false;
  std::size_t checkpoint_every = 0;
  bool wall_time = false;
  Paths paths;
  std::optional<PerspectiveStats> stats;
  std::size_t image_h = 0, image_w = 0;
  SceneSpec scene;
  std::size_t synth_n = 1;
  std::uint64_t synth_seed = 0;
};

namespace detail {

template <typename V>
void take(const json& j, const char* key, V& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<V>();
}

}  // namespace detail

inline RunConfig parse_run_config(const json& doc) {
  RunConfig rc;
  rc.doc = doc;
  try {
    if (!doc.is_object()) throw ConfigError("run config must be a JSON object");
    if (doc.contains("model")) {
      const json& m = doc.at("model");
      if (m.contains("variant")) rc.model.variant = parse_variant(m.at("variant").get<std::string>());
      detail::take(m, "width_multiplier", rc.model.width_multiplier);
      if (m.contains("block_sizes")) {
        rc.model.block_sizes = m.at("block_sizes").get<std::vector<std::size_t>>();
        rc.model.scales = rc.model.block_sizes.size();
      }
      detail::take(m, "seed", rc.model.seed);
      detail::take(m, "single_channel_weights", rc.model.single_channel_weights);
    }
    if (doc.contains("train")) {
      const json& t = doc.at("train");
      if (t.contains("optimizer")) rc.train.optimizer = parse_optimizer(t.at("optimizer").get<std::string>());
      detail::take(t, "batch_size", rc.train.batch_size);
      if (t.contains("learning_rate") && !t.at("learning_rate").is_null()) {
        rc.train.learning_rate = t.at("learning_rate").get<double>();
      }
      detail::take(t, "epochs", rc.train.epochs);
      detail::take(t, "seed", rc.train.seed);
      detail::take(t, "crop", rc.train.crop_enabled);
      detail::take(t, "mirror", rc.train.mirror_enabled);
      detail::take(t, "checkpoint_every", rc.checkpoint_every);
      detail::take(t, "wall_time", rc.wall_time);
    }
    if (doc.contains("kernel")) {
      rc.kernel = kernel_from_json(doc.at("kernel"));
      rc.sigma_given = doc.at("kernel").contains("sigma") && !doc.at("kernel").at("sigma").is_null();
    }
    if (doc.contains("paths")) {
      const json& p = doc.at("paths");
      detail::take(p, "images", rc.paths.images);
      detail::take(p, "annotations", rc.paths.annotations);
      detail::take(p, "homographies", rc.paths.homographies);
      detail::take(p, "rois", rc.paths.rois);
      detail::take(p, "density", rc.paths.density);
      detail::take(p, "perspective", rc.paths.perspective);
      detail::take(p, "weights", rc.paths.weights);
      detail::take(p, "output", rc.paths.output);
      detail::take(p, "stats", rc.paths.stats);
    }
    if (doc.contains("perspective_stats") && !doc.at("perspective_stats").is_null()) {
      const json& s = doc.at("perspective_stats");
      rc.stats = PerspectiveStats{s.at("min").get<double>(), s.at("max").get<double>()};
    }
    if (doc.contains("image")) {
      detail::take(doc.at("image"), "h", rc.image_h);
      detail::take(doc.at("image"), "w", rc.image_w);
    }
    if (doc.contains("synth")) {
      const json& s = doc.at("synth");
      if (s.contains("scene")) rc.scene = scene_from_json(s.at("scene"));
      detail::take(s, "n", rc.synth_n);
      detail::take(s, "seed", rc.synth_seed);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid run config: ") + e.what());
  }
  rc.model.validate();
  rc.train.validate();
  return rc;
}

inline json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config '" + path + "'");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

inline void require_dir(const std::string& p, const char* what) {
  if (p.empty()) throw UsageError(std::string("no ") + what + " directory given");
  if (!fs::is_directory(p)) throw UsageError(std::string(what) + " directory '" + p + "' does not exist");
}

inline void require_file(const std::string& p, const char* what) {
  if (p.empty()) throw UsageError(std::string("no ") + what + " file given");
  if (!fs::is_regular_file(p)) throw UsageError(std::string(what) + " file '" + p + "' does not exist");
}

inline std::string require_output(const RunConfig& rc) {
  if (rc.paths.output.empty()) throw UsageError("no output directory given (paths.output or --output)");
  return rc.paths.output;
}

// Files in `dir` with one of the extensions, sorted by name.
inline std::vector<fs::path> list_files(const std::string& dir, const std::vector<std::string>& exts) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (std::find(exts.begin(), exts.end(), e.path().extension().string()) != exts.end()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::optional<fs::path> find_image(const std::string& dir, const std::string& stem) {
  if (dir.empty()) return std::nullopt;
  for (const char* ext : {".ppm", ".pgm"}) {
    const fs::path p = fs::path(dir) / (stem + ext);
    if (fs::is_regular_file(p)) return p;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Dataset loading and reflection padding

inline std::size_t reflect_index(std::size_t i, std::size_t n) {
  if (n == 1) return 0;
  while (i >= n) i = 2 * n - 2 - i;  // pads are smaller than n
  return i;
}

// Reflection-pads every field up to multiples of 8. Padding is excluded from
// counting through the ROI (created when absent).
inline Sample pad_to_stride(const Sample& s) {
  const std::size_t h = s.h(), w = s.w();
  const std::size_t ph = (h + kOutputStride - 1) / kOutputStride * kOutputStride;
  const std::size_t pw = (w + kOutputStride - 1) / kOutputStride * kOutputStride;
  if (ph == h && pw == w) return s;
  if (ph - h >= h || pw - w >= w) throw DimensionError("image '" + s.name + "' too small to reflection-pad");
  Tensor4<float> image(1, 3, ph, pw);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < ph; ++y) {
      for (std::size_t x = 0; x < pw; ++x) image.at(0, c, y, x) = s.image.at(0, c, reflect_index(y, h), reflect_index(x, w));
    }
  }
  DensityMap gt(ph, pw, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) gt(y, x) = s.gt_full(y, x);
  }
  Sample out = make_sample(s.name, std::move(image), std::move(gt));
  out.heads = s.heads;
  if (s.perspective) {
    Grid<double> p(ph, pw);
    for (std::size_t y = 0; y < ph; ++y) {
      for (std::size_t x = 0; x < pw; ++x) p(y, x) = (*s.perspective)(reflect_index(y, h), reflect_index(x, w));
    }
    out.perspective = std::move(p);
  }
  RoiMask roi(ph, pw, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) roi(y, x) = s.roi ? (*s.roi)(y, x) : 1;
  }
  out.roi = std::move(roi);
  return out;
}

inline Grid<double> load_map(const fs::path& p, std::size_t h, std::size_t w) {
  Grid<double> g = to_grid<double>(load_tnsr<double>(p.string()));
  if (g.h != h || g.w != w) {
    throw DimensionError("'" + p.string() + "' is " + std::to_string(g.h) + "x" + std::to_string(g.w) + ", expected " +
                         std::to_string(h) + "x" + std::to_string(w));
  }
  return g;
}

// One sample per image in paths.images. Ground truth comes from
// <density>/<stem>.full.tnsr, or from annotations and the kernel spec.
inline std::vector<Sample> load_dataset(const RunConfig& rc, bool need_perspective) {
  require_dir(rc.paths.images, "images");
  std::vector<Sample> out;
  for (const fs::path& ip : list_files(rc.paths.images, {".ppm", ".pgm"})) {
    const std::string stem = ip.stem().string();
    const Image img = load_image(ip.string());
    std::optional<HeadAnnotations> ann;
    if (!rc.paths.annotations.empty()) {
      const fs::path ap = fs::path(rc.paths.annotations) / (stem + ".json");
      if (fs::is_regular_file(ap)) ann = load_annotations(ap.string());
    }
    DensityMap gt;
    const fs::path dp = fs::path(rc.paths.density) / (stem + ".full.tnsr");
    if (!rc.paths.density.empty() && fs::is_regular_file(dp)) {
      gt = load_map(dp, img.h, img.w);
    } else if (ann) {
      if (rc.kernel.mode == KernelMode::fixed && !rc.sigma_given) {
        throw UsageError("no density file for '" + stem + "' and no kernel sigma to build one");
      }
      gt = ground_truth_density(*ann, rc.kernel);
    } else {
      throw FormatError("no ground truth (density file or annotations) for image '" + stem + "'");
    }
    Sample s = make_sample(stem, image_to_tensor<float>(img), std::move(gt));
    if (ann) s.heads = ann->points;
    if (!rc.paths.rois.empty()) {
      if (auto rp = find_image(rc.paths.rois, stem)) {
        RoiMask m = load_mask(rp->string());
        if (m.h != img.h || m.w != img.w) throw DimensionError("ROI '" + rp->string() + "' does not match its image");
        s.roi = std::move(m);
      }
    }
    if (need_perspective) {
      if (rc.paths.perspective.empty()) throw UsageError("ECAN needs paths.perspective (run gen-perspective first)");
      const fs::path pp = fs::path(rc.paths.perspective) / (stem + ".norm.tnsr");
      if (!fs::is_regular_file(pp)) throw UsageError("missing perspective map '" + pp.string() + "'");
      s.perspective = load_map(pp, img.h, img.w);
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw UsageError("no .ppm/.pgm images in '" + rc.paths.images + "'");
  return out;
}

// Training windows must tile the 8-pixel grid (16 with quarter crops).
inline Sample trim_for_training(const Sample& s, bool crop) {
  const std::size_t a = crop ? 2 * kOutputStride : kOutputStride;
  const std::size_t h = s.h() / a * a, w = s.w() / a * a;
  if (h == 0 || w == 0) throw DimensionError("image '" + s.name + "' smaller than " + std::to_string(a) + " pixels");
  if (h == s.h() && w == s.w()) return s;
  log_info("trimming '" + s.name + "' to " + std::to_string(h) + "x" + std::to_string(w) + " for training");
  return crop_sample(s, 0, 0, h, w);
}

inline json stats_json(const PerspectiveStats& s) { return {{"min", s.min}, {"max", s.max}}; }

// ---------------------------------------------------------------------------
// Commands

inline int cmd_gen_gt(RunConfig& rc, std::ostream& out, std::ostream& err) {
  require_dir(rc.paths.annotations, "annotations");
  if (rc.kernel.mode == KernelMode::fixed && !rc.sigma_given) {
    throw UsageError("fixed kernel needs a sigma (kernel.sigma or --sigma)");
  }
  rc.kernel.validate();
  OutputDir dir(require_output(rc));
  int code = kOk;
  std::size_t written = 0;
  for (const fs::path& ap : list_files(rc.paths.annotations, {".json"})) {
    const std::string stem = ap.stem().string();
    try {
      const HeadAnnotations ann = load_annotations(ap.string());
      DensityMap full;
      if (rc.kernel.mode == KernelMode::adaptive) {
        AdaptiveDensity ad = adaptive_kernel_density(ann, rc.kernel);
        if (ad.used_fallback) {
          log_warn("'" + stem + "': " + std::to_string(ann.points.size()) + " heads, fewer than k_nn + 1 = " +
                   std::to_string(rc.kernel.k_nn + 1) + "; fell back to sigma " + std::to_string(rc.kernel.sigma));
        }
        full = std::move(ad.density);
      } else {
        full = fixed_kernel_density(ann, rc.kernel);
      }
      save_density(dir.path(stem + ".full.tnsr").string(), full);
      save_density(dir.path(stem + ".ds.tnsr").string(), downsample_density_padded(full, kOutputStride));
      ++written;
    } catch (const Error& e) {
      err << "error: " << ap.string() << ": " << e.what() << '\n';
      code = kData;
    } catch (const json::exception& e) {
      err << "error: " << ap.string() << ": " << e.what() << '\n';
      code = kData;
    }
  }
  dir.finish(rc.doc);
  out << "wrote " << written << " density pairs to " << dir.root().string() << '\n';
  return code;
}

inline int cmd_gen_perspective(RunConfig& rc, std::ostream& out, std::ostream& err) {
  require_dir(rc.paths.homographies, "homographies");
  if (!rc.paths.stats.empty() && !rc.stats) {
    require_file(rc.paths.stats, "stats");
    const json s = load_json_file(rc.paths.stats);
    rc.stats = PerspectiveStats{s.at("min").get<double>(), s.at("max").get<double>()};
  }
  OutputDir dir(require_output(rc));
  std::vector<std::pair<std::string, PerspectiveMap>> maps;
  for (const fs::path& hp : list_files(rc.paths.homographies, {".txt"})) {
    const std::string stem = hp.stem().string();
    std::size_t h = rc.image_h, w = rc.image_w;
    if (auto ip = find_image(rc.paths.images, stem)) {
      const Image img = load_image(ip->string());
      h = img.h;
      w = img.w;
    }
    if (h == 0 || w == 0) throw UsageError("no image for '" + stem + "' and no image.h/image.w in the config");
    try {
      maps.emplace_back(stem, perspective_map_from_homography(load_homography(hp.string()), h, w));
    } catch (const GeometryError& e) {
      throw GeometryError(hp.string() + ": " + e.what());
    }
    if (maps.back().second.invalid_count > 0) {
      log_warn("'" + stem + "': " + std::to_string(maps.back().second.invalid_count) + " pixels at or above the horizon");
    }
  }
  if (maps.empty()) throw UsageError("no .txt homographies in '" + rc.paths.homographies + "'");
  PerspectiveStats st;
  if (rc.stats) {
    st = *rc.stats;
  } else {
    std::vector<const PerspectiveMap*> ptrs;
    for (const auto& m : maps) ptrs.push_back(&m.second);
    st = perspective_stats(ptrs);
    rc.doc["perspective_stats"] = stats_json(st);
  }
  bool degenerate = false;
  for (auto& [stem, pm] : maps) {
    normalize_perspective_map(pm, st);
    degenerate = degenerate || pm.degenerate;
    save_tnsr(dir.path(stem + ".raw.tnsr").string(), to_tensor<double>(pm.values));
    save_tnsr(dir.path(stem + ".norm.tnsr").string(), to_tensor<double>(pm.normalized));
  }
  dir.write("perspective_stats.json", stats_json(st).dump(2) + "\n");
  dir.finish(rc.doc);
  out << "wrote " << maps.size() << " perspective maps (min " << st.min << ", max " << st.max << ")\n";
  if (degenerate) {
    err << "warning: perspective range is degenerate (max == min); normalized maps are constant 127.5\n";
    return kWarning;
  }
  return kOk;
}

template <typename T>
void check_variant(const ModelParams<T>& loaded, const RunConfig& rc) {
  if (rc.doc.contains("model") && rc.doc.at("model").contains("variant") && loaded.config.variant != rc.model.variant) {
    throw FormatError("weights are " + variant_name(loaded.config.variant) + " but the config asks for " +
                      variant_name(rc.model.variant));
  }
}

inline int cmd_train(RunConfig& rc, std::ostream& out, std::ostream&) {
  std::vector<Sample> data = load_dataset(rc, rc.model.uses_geometry());
  for (Sample& s : data) s = trim_for_training(s, rc.train.crop_enabled);
  OutputDir dir(require_output(rc));
  ModelParams<float> model = build<float>(rc.model);
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& e) {
    log_info("epoch " + std::to_string(e.epoch) + " loss " + std::to_string(e.mean_loss));
    if (rc.checkpoint_every > 0 && e.epoch % rc.checkpoint_every == 0) {
      save_params(model, dir.path("checkpoint_epoch" + std::to_string(e.epoch) + ".canw").string());
    }
  };
  const TrainLog log = train(data, model, rc.train, hooks);
  save_params(model, dir.path("weights.canw").string());
  std::ostringstream csv;
  log.write_csv(csv, rc.wall_time);
  dir.write("train_log.csv", csv.str());
  dir.finish(rc.doc);
  out << "trained " << variant_name(rc.model.variant) << " for " << rc.train.epochs << " epochs; final loss "
      << log.epochs.back().mean_loss << '\n';
  return kOk;
}

inline int cmd_eval(RunConfig& rc, bool published_ref, std::ostream& out, std::ostream&) {
  require_file(rc.paths.weights, "weights");
  ModelParams<float> model = load_params<float>(rc.paths.weights);
  check_variant(model, rc);
  std::vector<Sample> data = load_dataset(rc, model.config.uses_geometry());
  std::vector<ImageResult> rows;
  for (const Sample& s : data) rows.push_back({s.name, true_count(s), predict_count(model, pad_to_stride(s))});
  const EvalReport report = make_report(std::move(rows));
  std::ostringstream csv;
  write_report_csv(csv, report, published_ref);
  if (!rc.paths.output.empty()) {
    OutputDir dir(rc.paths.output);
    dir.write("report.csv", csv.str());
    dir.finish(rc.doc);
  }
  out << csv.str();
  return kOk;
}

struct PredictOptions {
  std::string image;
  std::string homography;
  bool normalize_ground = false;
};

inline int cmd_predict(RunConfig& rc, const PredictOptions& po, std::ostream& out, std::ostream&) {
  if (po.normalize_ground && po.homography.empty()) throw UsageError("--normalize-ground requires --homography");
  require_file(po.image, "image");
  require_file(rc.paths.weights, "weights");
  ModelParams<float> model = load_params<float>(rc.paths.weights);
  check_variant(model, rc);
  const Image img = load_image(po.image);
  const std::string stem = fs::path(po.image).stem().string();
  Sample s = make_sample(stem, image_to_tensor<float>(img), DensityMap(img.h, img.w, 0.0));
  if (model.config.uses_geometry()) {
    if (rc.paths.perspective.empty()) throw UsageError("ECAN prediction needs a perspective map (--perspective)");
    fs::path pp = rc.paths.perspective;
    if (fs::is_directory(pp)) pp /= stem + ".norm.tnsr";
    if (!fs::is_regular_file(pp)) throw UsageError("missing perspective map '" + pp.string() + "'");
    s.perspective = load_map(pp, img.h, img.w);
  }
  const Sample padded = pad_to_stride(s);
  Graph<float> g;
  const DensityMap d = to_grid<double>(forward_sample(g, model, padded).density.value());
  OutputDir dir(require_output(rc));
  const fs::path dp = dir.path(stem + ".density.tnsr");
  save_density(dp.string(), d);
  // Count what the file holds (float32) so the two agree.
  const double count = total_count(load_density(dp.string()));
  if (po.normalize_ground) {
    const Homography H = load_homography(po.homography);
    const PerspectiveMap pm = perspective_map_from_homography(H, padded.h(), padded.w());
    save_density(dir.path(stem + ".ground.tnsr").string(), ground_density_normalize(d, pm.values));
  }
  dir.finish(rc.doc);
  out << "count " << std::setprecision(10) << count << '\n';
  return kOk;
}

inline int cmd_synth(RunConfig& rc, std::ostream& out, std::ostream&) {
  OutputDir dir(require_output(rc));
  const std::vector<SynthScene> scenes = synth_dataset(rc.scene, rc.synth_n, rc.synth_seed);
  for (const SynthScene& s : scenes) {
    const std::string& n = s.sample.name;
    save_image(dir.path("images/" + n + ".ppm").string(), s.image);
    dir.write("annotations/" + n + ".json", annotations_to_json(s.annotations).dump() + "\n");
    dir.write("homographies/" + n + ".txt", format_homography(s.homography));
    save_image(dir.path("rois/" + n + ".pgm").string(),
               mask_to_image(s.sample.roi ? *s.sample.roi : RoiMask(s.image.h, s.image.w, 1)));
  }
  dir.finish(rc.doc);
  out << "wrote " << scenes.size() << " scenes to " << dir.root().string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"crowdscale: crowd counting with scale-aware context features"};
  app.require_subcommand(1);
  std::string config_path;
  std::string log_name = "warn";
  app.add_option("--config", config_path, "JSON run config");
  app.add_option("--log", log_name, "quiet, warn or info")->check(CLI::IsMember({"quiet", "warn", "info"}));

  // Overrides, copied into the config document when given.
  std::optional<std::string> variant, optimizer, kernel_mode, images, annotations, homographies, rois, density,
      perspective, weights, output, stats;
  std::optional<double> lr, wm, sigma, beta;
  std::optional<std::size_t> batch, epochs, knn, n, checkpoint_every, height, width;
  std::optional<std::uint64_t> seed;
  bool no_crop = false, no_mirror = false, wall_time = false, published_ref = false;
  PredictOptions po;

  auto paths_opts = [&](CLI::App* c) {
    c->add_option("--images", images, "image directory (.ppm/.pgm)");
    c->add_option("--annotations", annotations, "annotation directory (.json)");
    c->add_option("--homographies", homographies, "homography directory (.txt)");
    c->add_option("--rois", rois, "ROI mask directory (.pgm)");
    c->add_option("--density", density, "density directory (<stem>.full.tnsr)");
    c->add_option("--perspective", perspective, "perspective directory (<stem>.norm.tnsr) or file");
    c->add_option("--weights", weights, "CANW weight file");
    c->add_option("--output", output, "output directory");
  };
  auto kernel_opts = [&](CLI::App* c) {
    c->add_option("--kernel", kernel_mode, "fixed or adaptive")->check(CLI::IsMember({"fixed", "adaptive"}));
    c->add_option("--sigma", sigma, "Gaussian sigma in pixels (fixed kernel, adaptive fallback)");
    c->add_option("--beta", beta, "adaptive sigma factor");
    c->add_option("--knn", knn, "neighbours for the adaptive kernel");
  };
  auto model_opts = [&](CLI::App* c) {
    c->add_option("--variant", variant, "can, ecan, vgg-simple, vgg-concat or vgg-ncont");
    c->add_option("--width-multiplier", wm, "channel width factor in (0, 1]");
  };

  CLI::App* gen_gt = app.add_subcommand("gen-gt", "annotations -> full and /8 density maps");
  paths_opts(gen_gt);
  kernel_opts(gen_gt);
  CLI::App* gen_persp = app.add_subcommand("gen-perspective", "homographies -> raw and normalized perspective maps");
  paths_opts(gen_persp);
  gen_persp->add_option("--stats", stats, "reuse normalization stats from this JSON file");
  gen_persp->add_option("--height", height, "image height when no image directory is given");
  gen_persp->add_option("--width", width, "image width when no image directory is given");
  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  paths_opts(train_cmd);
  kernel_opts(train_cmd);
  model_opts(train_cmd);
  train_cmd->add_option("--optimizer", optimizer, "sgd or adam")->check(CLI::IsMember({"sgd", "adam"}));
  train_cmd->add_option("--batch", batch, "batch size");
  train_cmd->add_option("--lr", lr, "learning rate");
  train_cmd->add_option("--epochs", epochs, "epochs");
  train_cmd->add_option("--seed", seed, "seed for init and data order");
  train_cmd->add_option("--checkpoint-every", checkpoint_every, "save weights every k epochs");
  train_cmd->add_flag("--no-crop", no_crop, "disable random quarter crops");
  train_cmd->add_flag("--no-mirror", no_mirror, "disable random mirroring");
  train_cmd->add_flag("--wall-time", wall_time, "record epoch wall time in the log");
  CLI::App* eval_cmd = app.add_subcommand("eval", "MAE/RMSE report");
  paths_opts(eval_cmd);
  kernel_opts(eval_cmd);
  model_opts(eval_cmd);
  eval_cmd->add_flag("--published-ref", published_ref, "echo the published reference row");
  CLI::App* predict_cmd = app.add_subcommand("predict", "density map and count for one image");
  paths_opts(predict_cmd);
  model_opts(predict_cmd);
  predict_cmd->add_option("--image", po.image, "input .ppm/.pgm")->required();
  predict_cmd->add_option("--homography", po.homography, "homography file for --normalize-ground");
  predict_cmd->add_flag("--normalize-ground", po.normalize_ground, "also write people per square meter");
  CLI::App* synth_cmd = app.add_subcommand("synth", "synthetic perspective-distorted dataset");
  synth_cmd->add_option("--output", output, "output directory");
  synth_cmd->add_option("--n", n, "number of scenes");
  synth_cmd->add_option("--seed", seed, "seed of the first scene");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  log_level() = log_name == "quiet" ? LogLevel::quiet : log_name == "info" ? LogLevel::info : LogLevel::warn;

  try {
    json doc = config_path.empty() ? json::object() : load_json_file(config_path);
    auto set = [&doc](const char* section, const char* key, const auto& v) {
      if (v) doc[section][key] = *v;
    };
    set("model", "variant", variant);
    set("model", "width_multiplier", wm);
    set("train", "optimizer", optimizer);
    set("train", "batch_size", batch);
    set("train", "learning_rate", lr);
    set("train", "epochs", epochs);
    set("train", "checkpoint_every", checkpoint_every);
    if (no_crop) doc["train"]["crop"] = false;
    if (no_mirror) doc["train"]["mirror"] = false;
    if (wall_time) doc["train"]["wall_time"] = true;
    set("kernel", "mode", kernel_mode);
    set("kernel", "sigma", sigma);
    set("kernel", "beta", beta);
    set("kernel", "k_nn", knn);
    set("paths", "images", images);
    set("paths", "annotations", annotations);
    set("paths", "homographies", homographies);
    set("paths", "rois", rois);
    set("paths", "density", density);
    set("paths", "perspective", perspective);
    set("paths", "weights", weights);
    set("paths", "output", output);
    set("paths", "stats", stats);
    set("image", "h", height);
    set("image", "w", width);
    if (synth_cmd->parsed()) {
      set("synth", "n", n);
      set("synth", "seed", seed);
    } else if (seed) {
      doc["model"]["seed"] = *seed;
      doc["train"]["seed"] = *seed;
    }
    RunConfig rc = parse_run_config(doc);

    if (gen_gt->parsed()) return cmd_gen_gt(rc, out, err);
    if (gen_persp->parsed()) return cmd_gen_perspective(rc, out, err);
    if (train_cmd->parsed()) return cmd_train(rc, out, err);
    if (eval_cmd->parsed()) return cmd_eval(rc, published_ref, out, err);
    if (predict_cmd->parsed()) return cmd_predict(rc, po, out, err);
    if (synth_cmd->parsed()) return cmd_synth(rc, out, err);
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace crowdscale::cli
