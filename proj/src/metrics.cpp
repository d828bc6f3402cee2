#include "dtld/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace dtld::metrics {

std::string to_string(NormalizerKind kind) {
  switch (kind) {
    case NormalizerKind::inter_ocular:
      return "inter_ocular";
    case NormalizerKind::image_size:
      return "image_size";
    case NormalizerKind::bbox_geometric_mean:
      return "bbox";
  }
  return "unknown";
}

NormalizerKind parse_normalizer(const std::string& s) {
  if (s == "inter_ocular") return NormalizerKind::inter_ocular;
  if (s == "image_size") return NormalizerKind::image_size;
  if (s == "bbox" || s == "bbox_geometric_mean") return NormalizerKind::bbox_geometric_mean;
  throw ValidationError("unknown normalizer '" + s + "' (expected inter_ocular|image_size|bbox)");
}

double resolve_normalizer(const Normalizer& norm, const SampleMeta& meta) {
  double d = 0.0;
  switch (norm.kind) {
    case NormalizerKind::inter_ocular: {
      if (meta.gt == nullptr) throw ValidationError("inter_ocular normalizer needs ground-truth landmarks");
      const auto n = meta.gt->size();
      if (norm.left_eye < 0 || norm.right_eye < 0 || norm.left_eye >= n || norm.right_eye >= n)
        throw ValidationError("inter_ocular: eye landmark index out of range");
      const double dx = (meta.gt->x(norm.left_eye) - meta.gt->x(norm.right_eye)) * meta.image_width;
      const double dy = (meta.gt->y(norm.left_eye) - meta.gt->y(norm.right_eye)) * meta.image_height;
      d = std::hypot(dx, dy);
      if (!(d > 0.0)) throw ValidationError("inter_ocular: eye landmarks coincide (D = 0)");
      return d;
    }
    case NormalizerKind::image_size:
      if (meta.image_width != meta.image_height)
        throw ValidationError("image_size normalizer expects square images");
      d = meta.image_width;
      break;
    case NormalizerKind::bbox_geometric_mean:
      d = std::sqrt(meta.bbox.width() * meta.bbox.height());
      break;
  }
  if (!(d > 0.0)) throw ValidationError(to_string(norm.kind) + ": normalization distance must be positive");
  return d;
}

double nme(const LandmarkSet& pred, const LandmarkSet& gt, double d, int image_width, int image_height) {
  if (pred.size() != gt.size() || pred.coords.cols() != 2 || gt.coords.cols() != 2)
    throw ValidationError("nme: prediction and ground truth shapes differ");
  if (!(d > 0.0)) throw ValidationError("nme: normalization distance must be positive");
  if (gt.size() == 0) throw ValidationError("nme: no landmarks");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < gt.size(); ++i)
    sum += std::hypot((pred.x(i) - gt.x(i)) * image_width, (pred.y(i) - gt.y(i)) * image_height);
  return sum / static_cast<double>(gt.size()) / d;
}

double failure_rate(const std::vector<double>& nmes, double threshold) {
  if (nmes.empty()) throw ValidationError("failure_rate: empty NME list");
  if (!(threshold > 0.0)) throw ValidationError("failure_rate: threshold must be positive");
  const auto failed = std::count_if(nmes.begin(), nmes.end(), [&](double e) { return e > threshold; });
  return static_cast<double>(failed) / static_cast<double>(nmes.size());
}

double auc(const std::vector<double>& nmes, double cutoff) {
  if (nmes.empty()) throw ValidationError("auc: empty NME list");
  if (!(cutoff > 0.0)) throw ValidationError("auc: cutoff must be positive");
  // CDF(x) = #{e <= x}/n; each error e <= cutoff contributes (cutoff - e)/n.
  double area = 0.0;
  for (double e : nmes)
    if (e <= cutoff) area += cutoff - std::max(e, 0.0);
  return area / static_cast<double>(nmes.size()) / cutoff;
}

EvalResult summarize(std::vector<double> per_sample, const std::vector<double>& fr_thresholds,
                     const std::vector<double>& auc_cutoffs) {
  if (per_sample.empty()) throw ValidationError("evaluation: no samples");
  EvalResult r;
  double sum = 0.0;
  for (double e : per_sample) sum += e;
  r.mean_nme = sum / static_cast<double>(per_sample.size());
  for (double t : fr_thresholds) r.failure_rates.emplace_back(t, failure_rate(per_sample, t));
  for (double c : auc_cutoffs) r.aucs.emplace_back(c, auc(per_sample, c));
  r.per_sample = std::move(per_sample);
  return r;
}

}  // namespace dtld::metrics
