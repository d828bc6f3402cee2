#pragma once

#include "dtld/geometry.hpp"
#include "dtld/image.hpp"
#include "dtld/layers.hpp"
#include "dtld/metrics.hpp"

#include <cstdint>
#include <vector>

namespace dtld {

/// One labeled face: image, normalized landmarks, and a pixel bounding box.
struct Sample {
  Image image;
  LandmarkSet landmarks;
  metrics::BBox bbox;
};

using Dataset = std::vector<Sample>;

/// Synthetic face renderer. A face is a canonical landmark template placed
/// with random rotation/scale/translation; every landmark is drawn as a
/// colored Gaussian blob, so blob centers equal the labels by construction.
struct SyntheticFaceSpec {
  int image_size = 32;
  int landmarks = 5;
  double face_scale = 0.6;        // template extent as a fraction of the image side
  double rotation_deg = 10.0;     // uniform jitter in [-r, r]
  double scale_jitter = 0.1;      // face scale multiplied by 1 + U(-s, s)
  double translate_jitter = 0.05; // per-axis shift in normalized units
  double blob_sigma = 0.035;      // Gaussian radius as a fraction of the image side
  double blob_intensity = 1.0;
  double background = 0.15;
  double noise = 0.03;            // uniform per-pixel noise amplitude
  double contrast = 1.0;          // scales face and blob colors around the background
  double bbox_enlarge = 0.0;      // fractional enlargement of the tight landmark box

  void validate() const;
};

/// Template coordinates centered on the face (unit extent, y down). The first
/// five points are eyes, nose tip and mouth corners; extra points follow the
/// lower face contour.
[[nodiscard]] std::vector<Eigen::Vector2d> canonical_template(int landmarks);

/// Index of each landmark's mirror image under a horizontal flip.
[[nodiscard]] std::vector<int> template_flip_permutation(int landmarks);

/// Landmark indices of the two eye centers in the template.
[[nodiscard]] std::pair<int, int> template_eye_indices(int landmarks);

/// Renders a face whose blobs sit exactly at `landmarks`.
[[nodiscard]] Image render_face(const SyntheticFaceSpec& spec, const LandmarkSet& landmarks, Rng& rng);

/// Tight landmark box (pixels) grown by `enlarge` about its center and
/// clamped to the image.
[[nodiscard]] metrics::BBox landmark_bbox(const LandmarkSet& landmarks, int width, int height, double enlarge);

/// Per-sample generator seeded from (seed, index).
[[nodiscard]] Rng sample_rng(uint64_t seed, uint64_t index, uint64_t stream = 0);

[[nodiscard]] Sample gen_synthetic_sample(const SyntheticFaceSpec& spec, uint64_t seed, uint64_t index);
[[nodiscard]] Dataset gen_synthetic(const SyntheticFaceSpec& spec, int count, uint64_t seed);

}  // namespace dtld
