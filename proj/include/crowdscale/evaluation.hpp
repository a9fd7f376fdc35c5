#pragma once

// Counting metrics and the variant comparison harness.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "crowdscale/error.hpp"
#include "crowdscale/geometry.hpp"
#include "crowdscale/groundtruth.hpp"
#include "crowdscale/model.hpp"
#include "crowdscale/training.hpp"

namespace crowdscale {

struct ImageResult {
  std::string image;
  double z = 0.0;     // true count inside the ROI
  double zhat = 0.0;  // integrated estimate inside the ROI
};

struct EvalReport {
  std::vector<ImageResult> images;
  double mae = 0.0;
  double rmse = 0.0;

  std::size_t size() const { return images.size(); }
};

// MAE = mean |z - zhat|, RMSE = sqrt(mean (z - zhat)^2).
inline EvalReport make_report(std::vector<ImageResult> images) {
  if (images.empty()) throw UsageError("cannot evaluate an empty dataset");
  EvalReport r;
  r.images = std::move(images);
  double abs_sum = 0.0, sq_sum = 0.0;
  for (const ImageResult& im : r.images) {
    const double d = im.z - im.zhat;
    abs_sum += std::abs(d);
    sq_sum += d * d;
  }
  const double n = static_cast<double>(r.images.size());
  r.mae = abs_sum / n;
  r.rmse = std::sqrt(sq_sum / n);
  return r;
}

inline EvalReport make_report(const std::vector<double>& z, const std::vector<double>& zhat) {
  if (z.size() != zhat.size()) throw DimensionError("true and estimated count lists differ in length");
  std::vector<ImageResult> images;
  for (std::size_t i = 0; i < z.size(); ++i) images.push_back({std::to_string(i), z[i], zhat[i]});
  return make_report(std::move(images));
}

struct ReferenceRow {
  std::string label;
  double mae;
  double rmse;
};

// Published CAN result on ShanghaiTech part A, echoed for context only.
inline const ReferenceRow kReferenceCan{"ShanghaiTech A", 62.3, 100.0};

inline void write_report_csv(std::ostream& os, const EvalReport& r, bool reference = false) {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "image,z,zhat,abs_err\n";
  for (const ImageResult& im : r.images) {
    out << im.image << ',' << im.z << ',' << im.zhat << ',' << std::abs(im.z - im.zhat) << '\n';
  }
  out << "MAE," << r.mae << '\n' << "RMSE," << r.rmse << '\n';
  if (reference) {
    out << "# published reference (" << kReferenceCan.label << "): MAE " << kReferenceCan.mae << " / RMSE "
        << kReferenceCan.rmse << '\n';
  }
  os << out.str();
}

// Ground-truth count of a sample inside its ROI: annotated heads when
// available, otherwise the integral of the full-resolution density.
inline double true_count(const Sample& s) {
  if (s.heads) {
    if (!s.roi) return static_cast<double>(s.heads->size());
    std::size_t n = 0;
    for (const Point2& p : *s.heads) {
      const auto x = std::min(static_cast<std::size_t>(p.x), s.roi->w - 1);
      const auto y = std::min(static_cast<std::size_t>(p.y), s.roi->h - 1);
      if ((*s.roi)(y, x) != 0) ++n;
    }
    return static_cast<double>(n);
  }
  return s.roi ? total_count(apply_roi(s.gt_full, *s.roi)) : total_count(s.gt_full);
}

// Integrated prediction, restricted to the ROI at decoder resolution.
template <typename T>
double predict_count(ModelParams<T>& model, const Sample& s) {
  Graph<T> g;
  const DensityMap d = to_grid<double>(forward_sample(g, model, s).density.value());
  if (!s.roi) return total_count(d);
  return total_count(apply_roi(d, downsample_mask(*s.roi, kOutputStride)));
}

template <typename T>
EvalReport evaluate(ModelParams<T>& model, const std::vector<Sample>& dataset) {
  if (dataset.empty()) throw UsageError("cannot evaluate an empty dataset");
  std::vector<ImageResult> images;
  images.reserve(dataset.size());
  for (const Sample& s : dataset) images.push_back({s.name, true_count(s), predict_count(model, s)});
  return make_report(std::move(images));
}

// ---------------------------------------------------------------------------
// Variant comparison

struct AblationRow {
  std::string label;
  ModelConfig config;
  EvalReport report;
};

// Trains every configuration on the same data with the same training
// settings and evaluates it on the test split.
template <typename T>
std::vector<AblationRow> ablation_run(const std::vector<ModelConfig>& variants, const std::vector<Sample>& train_set,
                                      const std::vector<Sample>& test_set, const TrainConfig& config) {
  std::vector<AblationRow> rows;
  for (const ModelConfig& mc : variants) {
    ModelParams<T> model = build<T>(mc);
    train(train_set, model, config);
    rows.push_back({variant_name(mc.variant), mc, evaluate(model, test_set)});
  }
  return rows;
}

// Published ShanghaiTech part A ablation numbers (MAE / RMSE).
inline const std::vector<ReferenceRow> kReferenceAblation{
    {"vgg-simple", 68.0, 113.4}, {"vgg-concat", 63.4, 108.7}, {"vgg-ncont", 63.1, 106.4}, {"can", 62.3, 100.0}};

inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "# published reference, ShanghaiTech part A (not reproduced here):";
  for (const ReferenceRow& r : kReferenceAblation) out << ' ' << r.label << ' ' << r.mae << '/' << r.rmse << ';';
  out << '\n' << "variant,seed,mae,rmse\n";
  for (const AblationRow& r : rows) out << r.label << ',' << r.config.seed << ',' << r.report.mae << ',' << r.report.rmse << '\n';
  os << out.str();
}

}  // namespace crowdscale
