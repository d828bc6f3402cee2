#include "dtld/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace dtld {

void SyntheticFaceSpec::validate() const {
  if (image_size <= 0) throw ValidationError("data.image_size must be positive");
  if (landmarks < 1) throw ValidationError("data.landmarks must be >= 1");
  if (!(face_scale > 0.0)) throw ValidationError("data.face_scale must be positive");
  if (rotation_deg < 0 || scale_jitter < 0 || translate_jitter < 0 || noise < 0)
    throw ValidationError("data jitter and noise amplitudes must be non-negative");
  if (!(blob_sigma > 0.0)) throw ValidationError("data.blob_sigma must be positive");
  if (bbox_enlarge < 0) throw ValidationError("data.bbox_enlarge must be non-negative");
}

std::vector<Eigen::Vector2d> canonical_template(int landmarks) {
  if (landmarks < 1) throw ValidationError("template needs at least one landmark");
  const std::vector<Eigen::Vector2d> five{
      {-0.22, -0.18}, {0.22, -0.18}, {0.0, 0.04}, {-0.17, 0.24}, {0.17, 0.24}};
  std::vector<Eigen::Vector2d> out;
  for (int i = 0; i < std::min(landmarks, 5); ++i) out.push_back(five[static_cast<size_t>(i)]);
  const int extra = landmarks - 5;
  for (int k = 0; k < extra; ++k) {
    // Lower contour, symmetric: point k mirrors point extra-1-k.
    const double theta = std::numbers::pi * (k + 0.5) / extra;
    out.emplace_back(-0.42 * std::cos(theta), -0.05 + 0.45 * std::sin(theta));
  }
  return out;
}

std::vector<int> template_flip_permutation(int landmarks) {
  const auto pts = canonical_template(landmarks);
  std::vector<int> perm(pts.size());
  for (size_t i = 0; i < pts.size(); ++i) {
    const Eigen::Vector2d mirrored(-pts[i].x(), pts[i].y());
    double best = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < pts.size(); ++j) {
      const double d = (pts[j] - mirrored).squaredNorm();
      if (d < best) {
        best = d;
        perm[i] = static_cast<int>(j);
      }
    }
  }
  return perm;
}

std::pair<int, int> template_eye_indices(int landmarks) {
  if (landmarks < 2) throw ValidationError("template has no eye pair with fewer than 2 landmarks");
  return {0, 1};
}

namespace {

// Mirror pairs share a color so that a flipped face is still a valid face.
Color landmark_color(int index, const std::vector<int>& flip) {
  const int key = std::min(index, flip[static_cast<size_t>(index)]);
  const double phase = 2.0 * std::numbers::pi * key * 0.381966;  // golden-angle spread
  return {0.5 + 0.5 * std::cos(phase), 0.5 + 0.5 * std::cos(phase + 2.0944), 0.5 + 0.5 * std::cos(phase + 4.18879)};
}

}  // namespace

Image render_face(const SyntheticFaceSpec& spec, const LandmarkSet& landmarks, Rng& rng) {
  const int size = spec.image_size;
  Image img(size, size);
  std::uniform_real_distribution<double> noise(-spec.noise, spec.noise);
  const auto flip = template_flip_permutation(static_cast<int>(landmarks.size()));

  // Face disc: soft ellipse around the landmark centroid.
  const double cx = landmarks.coords.col(0).mean() * size;
  const double cy = landmarks.coords.col(1).mean() * size;
  const double rx = 0.33 * spec.face_scale * size / 0.6;
  const double ry = 0.40 * spec.face_scale * size / 0.6;
  const double sigma = spec.blob_sigma * size;
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      const double px = j + 0.5;
      const double py = i + 0.5;
      const double e = std::pow((px - cx) / rx, 2) + std::pow((py - cy) / ry, 2);
      const double face = 0.35 * spec.contrast / (1.0 + std::exp(6.0 * (e - 1.0)));
      Color c{spec.background + face, spec.background + 0.8 * face, spec.background + 0.6 * face};
      for (Eigen::Index k = 0; k < landmarks.size(); ++k) {
        const double dx = px - landmarks.x(k) * size;
        const double dy = py - landmarks.y(k) * size;
        const double g = spec.blob_intensity * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        if (g < 1e-4) continue;
        const Color lc = landmark_color(static_cast<int>(k), flip);
        for (size_t ch = 0; ch < 3; ++ch)
          c[ch] = c[ch] * (1.0 - g) + g * (spec.background + spec.contrast * (lc[ch] - spec.background));
      }
      for (int ch = 0; ch < 3; ++ch)
        img.pixels(img.index(i, j), ch) = std::clamp(c[static_cast<size_t>(ch)] + noise(rng), 0.0, 1.0);
    }
  }
  return img;
}

metrics::BBox landmark_bbox(const LandmarkSet& landmarks, int width, int height, double enlarge) {
  const double x0 = landmarks.coords.col(0).minCoeff() * width;
  const double x1 = landmarks.coords.col(0).maxCoeff() * width;
  const double y0 = landmarks.coords.col(1).minCoeff() * height;
  const double y1 = landmarks.coords.col(1).maxCoeff() * height;
  const double hw = 0.5 * (x1 - x0) * (1.0 + enlarge);
  const double hh = 0.5 * (y1 - y0) * (1.0 + enlarge);
  const double mx = 0.5 * (x0 + x1);
  const double my = 0.5 * (y0 + y1);
  return {std::max(0.0, mx - hw), std::max(0.0, my - hh), std::min<double>(width, mx + hw),
          std::min<double>(height, my + hh)};
}

Rng sample_rng(uint64_t seed, uint64_t index, uint64_t stream) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(index),
                    static_cast<uint32_t>(index >> 32), static_cast<uint32_t>(stream)};
  return Rng(seq);
}

Sample gen_synthetic_sample(const SyntheticFaceSpec& spec, uint64_t seed, uint64_t index) {
  Rng rng = sample_rng(seed, index);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double angle = spec.rotation_deg * std::numbers::pi / 180.0 * unit(rng);
  const double scale = spec.face_scale * (1.0 + spec.scale_jitter * unit(rng));
  const double tx = spec.translate_jitter * unit(rng);
  const double ty = spec.translate_jitter * unit(rng);
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);

  const auto tmpl = canonical_template(spec.landmarks);
  Matrix coords(spec.landmarks, 2);
  for (int k = 0; k < spec.landmarks; ++k) {
    const auto& p = tmpl[static_cast<size_t>(k)];
    coords(k, 0) = 0.5 + tx + scale * (ca * p.x() - sa * p.y());
    coords(k, 1) = 0.5 + ty + scale * (sa * p.x() + ca * p.y());
  }
  Sample s;
  s.landmarks = LandmarkSet(std::move(coords));
  s.image = render_face(spec, s.landmarks, rng);
  s.bbox = landmark_bbox(s.landmarks, spec.image_size, spec.image_size, spec.bbox_enlarge);
  return s;
}

Dataset gen_synthetic(const SyntheticFaceSpec& spec, int count, uint64_t seed) {
  spec.validate();
  if (count < 1) throw ValidationError("synthetic dataset count must be >= 1, got " + std::to_string(count));
  Dataset out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(gen_synthetic_sample(spec, seed, static_cast<uint64_t>(i)));
  return out;
}

}  // namespace dtld
