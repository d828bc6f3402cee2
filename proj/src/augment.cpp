#include "dtld/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dtld {

void AugmentConfig::validate(Eigen::Index landmarks) const {
  if (flip) {
    if (flip_permutation.empty()) throw ValidationError("augment: flipping enabled but no flip permutation table given");
    if (static_cast<Eigen::Index>(flip_permutation.size()) != landmarks)
      throw ValidationError("augment: flip permutation has " + std::to_string(flip_permutation.size()) +
                            " entries, expected " + std::to_string(landmarks));
    for (size_t i = 0; i < flip_permutation.size(); ++i) {
      const int j = flip_permutation[i];
      if (j < 0 || static_cast<size_t>(j) >= flip_permutation.size() ||
          flip_permutation[static_cast<size_t>(j)] != static_cast<int>(i))
        throw ValidationError("augment: flip permutation must be an involution");
    }
  }
  if (max_shift_px < 0 || max_rotation_deg < 0 || blur_radius < 0) throw ValidationError("augment: negative strength");
  if (max_occlusion_frac < 0 || max_occlusion_frac > 1) throw ValidationError("augment: occlusion fraction must lie in [0,1]");
  if (probability < 0 || probability > 1) throw ValidationError("augment: probability must lie in [0,1]");
}

Augmented translate(const Image& image, const LandmarkSet& lm, int dx, int dy) {
  Image out(image.height, image.width);
  for (int i = 0; i < image.height; ++i)
    for (int j = 0; j < image.width; ++j)
      if (image.contains(i - dy, j - dx)) out.pixels.row(out.index(i, j)) = image.pixels.row(image.index(i - dy, j - dx));
  LandmarkSet moved = lm;
  moved.coords.col(0).array() += static_cast<double>(dx) / image.width;
  moved.coords.col(1).array() += static_cast<double>(dy) / image.height;
  return {std::move(out), std::move(moved)};
}

Augmented hflip(const Image& image, const LandmarkSet& lm, const std::vector<int>& perm) {
  if (static_cast<Eigen::Index>(perm.size()) != lm.size()) throw ValidationError("hflip: permutation size mismatch");
  Image out(image.height, image.width);
  for (int i = 0; i < image.height; ++i)
    for (int j = 0; j < image.width; ++j)
      out.pixels.row(out.index(i, j)) = image.pixels.row(image.index(i, image.width - 1 - j));
  LandmarkSet flipped = LandmarkSet::zeros(lm.size());
  for (Eigen::Index i = 0; i < lm.size(); ++i) {
    const auto src = static_cast<Eigen::Index>(perm[static_cast<size_t>(i)]);
    flipped.coords(i, 0) = 1.0 - lm.x(src);
    flipped.coords(i, 1) = lm.y(src);
  }
  return {std::move(out), std::move(flipped)};
}

Augmented rotate(const Image& image, const LandmarkSet& lm, double radians) {
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  const double cx = image.width / 2.0;
  const double cy = image.height / 2.0;
  Image out(image.height, image.width);
  for (int i = 0; i < image.height; ++i) {
    for (int j = 0; j < image.width; ++j) {
      // Inverse map the output pixel center into the source image.
      const double px = j + 0.5 - cx;
      const double py = i + 0.5 - cy;
      const double sx = c * px + s * py + cx;
      const double sy = -s * px + c * py + cy;
      out.pixels.row(out.index(i, j)) =
          bilinear_sample(image.pixels, image.height, image.width, sx / image.width, sy / image.height);
    }
  }
  LandmarkSet moved = lm;
  for (Eigen::Index k = 0; k < lm.size(); ++k) {
    const double px = lm.x(k) * image.width - cx;
    const double py = lm.y(k) * image.height - cy;
    moved.coords(k, 0) = (c * px - s * py + cx) / image.width;
    moved.coords(k, 1) = (s * px + c * py + cy) / image.height;
  }
  return {std::move(out), std::move(moved)};
}

Image occlude(const Image& image, int x0, int y0, int x1, int y1, double value) {
  Image out = image;
  for (int i = std::max(0, y0); i < std::min(image.height, y1); ++i)
    for (int j = std::max(0, x0); j < std::min(image.width, x1); ++j) out.pixels.row(out.index(i, j)).setConstant(value);
  return out;
}

Image box_blur(const Image& image, int radius) {
  if (radius <= 0) return image;
  Image out(image.height, image.width);
  for (int i = 0; i < image.height; ++i) {
    for (int j = 0; j < image.width; ++j) {
      RowVector acc = RowVector::Zero(3);
      int count = 0;
      for (int di = -radius; di <= radius; ++di)
        for (int dj = -radius; dj <= radius; ++dj)
          if (image.contains(i + di, j + dj)) {
            acc += image.pixels.row(image.index(i + di, j + dj));
            ++count;
          }
      out.pixels.row(out.index(i, j)) = acc / count;
    }
  }
  return out;
}

Augmented augment(const Image& image, const LandmarkSet& lm, Rng& rng, const AugmentConfig& cfg) {
  cfg.validate(lm.size());
  if ((lm.coords.array() < 0.0).any() || (lm.coords.array() > 1.0).any())
    throw ValidationError("augment: landmarks must lie inside the image");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto chance = [&] { return unit(rng) < cfg.probability; };
  Augmented cur{image, lm};
  if (!cfg.any()) return cur;
  // Draw every random number unconditionally so streams stay aligned across toggles.
  const bool do_flip = chance();
  const bool do_rot = chance();
  const double angle = (2.0 * unit(rng) - 1.0) * cfg.max_rotation_deg * std::numbers::pi / 180.0;
  const bool do_shift = chance();
  std::uniform_int_distribution<int> shift(-cfg.max_shift_px, cfg.max_shift_px);
  const int dx = shift(rng);
  const int dy = shift(rng);
  const bool do_occ = chance();
  const double ow = unit(rng) * cfg.max_occlusion_frac * image.width;
  const double oh = unit(rng) * cfg.max_occlusion_frac * image.height;
  const double ox = unit(rng) * (image.width - ow);
  const double oy = unit(rng) * (image.height - oh);
  const double gray = unit(rng);
  const bool do_blur = chance();

  if (cfg.flip && do_flip) cur = hflip(cur.first, cur.second, cfg.flip_permutation);
  if (cfg.rotate && do_rot) cur = rotate(cur.first, cur.second, angle);
  if (cfg.translate && do_shift) cur = translate(cur.first, cur.second, dx, dy);
  if (cfg.occlude && do_occ)
    cur.first = occlude(cur.first, static_cast<int>(ox), static_cast<int>(oy), static_cast<int>(ox + ow),
                        static_cast<int>(oy + oh), gray);
  if (cfg.blur && do_blur) cur.first = box_blur(cur.first, cfg.blur_radius);
  return cur;
}

}  // namespace dtld
