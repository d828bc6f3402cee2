#pragma once

#include "dtld/geometry.hpp"

#include <string>
#include <utility>
#include <vector>

namespace dtld::metrics {

/// Axis-aligned box in pixels.
struct BBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  [[nodiscard]] double width() const { return x1 - x0; }
  [[nodiscard]] double height() const { return y1 - y0; }
};

enum class NormalizerKind { inter_ocular, image_size, bbox_geometric_mean };

struct Normalizer {
  NormalizerKind kind = NormalizerKind::image_size;
  int left_eye = 0;   // landmark indices used by inter_ocular
  int right_eye = 1;
};

[[nodiscard]] std::string to_string(NormalizerKind kind);
[[nodiscard]] NormalizerKind parse_normalizer(const std::string& s);

/// Ground-truth information a normalizer may need.
struct SampleMeta {
  const LandmarkSet* gt = nullptr;
  int image_width = 0;
  int image_height = 0;
  BBox bbox;
};

/// Normalization distance D for one sample. Throws when D would be <= 0.
[[nodiscard]] double resolve_normalizer(const Normalizer& norm, const SampleMeta& meta);

/// Mean Euclidean pixel distance between pred and gt divided by D.
[[nodiscard]] double nme(const LandmarkSet& pred, const LandmarkSet& gt, double d, int image_width, int image_height);

/// Fraction of NMEs strictly above threshold.
[[nodiscard]] double failure_rate(const std::vector<double>& nmes, double threshold);

/// Exact area under the empirical CDF of the NMEs on [0, cutoff], divided by
/// cutoff.
[[nodiscard]] double auc(const std::vector<double>& nmes, double cutoff);

struct EvalResult {
  std::vector<double> per_sample;
  double mean_nme = 0.0;
  std::vector<std::pair<double, double>> failure_rates;  // (threshold, FR)
  std::vector<std::pair<double, double>> aucs;           // (cutoff, AUC)
};

[[nodiscard]] EvalResult summarize(std::vector<double> per_sample, const std::vector<double>& fr_thresholds,
                                   const std::vector<double>& auc_cutoffs);

}  // namespace dtld::metrics
