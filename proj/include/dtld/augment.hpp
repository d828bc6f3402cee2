#pragma once

#include "dtld/geometry.hpp"
#include "dtld/image.hpp"
#include "dtld/layers.hpp"

#include <utility>
#include <vector>

namespace dtld {

struct AugmentConfig {
  bool translate = false;
  int max_shift_px = 2;
  bool flip = false;
  std::vector<int> flip_permutation;  // required when flip is enabled
  bool rotate = false;
  double max_rotation_deg = 10.0;
  bool occlude = false;
  double max_occlusion_frac = 0.3;  // occluder side as a fraction of the image side
  bool blur = false;
  int blur_radius = 1;
  double probability = 0.5;  // chance that each enabled transform is applied

  [[nodiscard]] bool any() const { return translate || flip || rotate || occlude || blur; }
  void validate(Eigen::Index landmarks) const;
};

using Augmented = std::pair<Image, LandmarkSet>;

/// Integer pixel shift with zero fill; landmarks move by (dx/W, dy/H).
[[nodiscard]] Augmented translate(const Image& image, const LandmarkSet& lm, int dx, int dy);
/// Mirrors columns; x -> 1 - x and landmark i takes the label of perm[i].
[[nodiscard]] Augmented hflip(const Image& image, const LandmarkSet& lm, const std::vector<int>& perm);
/// Rotation by `radians` about the image center, bilinear resampling with
/// zero padding.
[[nodiscard]] Augmented rotate(const Image& image, const LandmarkSet& lm, double radians);
/// Fills the pixel rectangle [x0,x1) x [y0,y1) with a constant gray.
[[nodiscard]] Image occlude(const Image& image, int x0, int y0, int x1, int y1, double value);
/// (2r+1)^2 box filter, borders averaged over in-image pixels only.
[[nodiscard]] Image box_blur(const Image& image, int radius);

/// Applies the enabled subset of transforms with random parameters.
[[nodiscard]] Augmented augment(const Image& image, const LandmarkSet& lm, Rng& rng, const AugmentConfig& cfg);

}  // namespace dtld
