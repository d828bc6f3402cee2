#include "dtld/augment.hpp"
#include "dtld/synthetic.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

namespace dtld {
namespace {

/// One Gaussian spot per landmark, each in its own channel (up to three).
Image spot_image(const LandmarkSet& lm, int side, double sigma = 1.2) {
  Image img(side, side);
  img.pixels.setZero();
  for (Eigen::Index k = 0; k < lm.size(); ++k)
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j) {
        const double dx = j + 0.5 - lm.x(k) * side, dy = i + 0.5 - lm.y(k) * side;
        img.pixels(img.index(i, j), k) += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      }
  return img;
}

/// Intensity-weighted centroid of channel `ch`, in pixels.
Eigen::Vector2d centroid(const Image& img, int ch) {
  const double peak = img.pixels.col(ch).maxCoeff();
  double sx = 0, sy = 0, sw = 0;
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j) {
      const double w = img.pixels(img.index(i, j), ch);
      if (w < 0.3 * peak) continue;
      sx += w * (j + 0.5);
      sy += w * (i + 0.5);
      sw += w;
    }
  return {sx / sw, sy / sw};
}

void expect_spots_at_labels(const Augmented& a, int side) {
  for (Eigen::Index k = 0; k < a.second.size(); ++k) {
    const Eigen::Vector2d c = centroid(a.first, static_cast<int>(k));
    EXPECT_NEAR(c.x(), a.second.x(k) * side, 1.0) << k;
    EXPECT_NEAR(c.y(), a.second.y(k) * side, 1.0) << k;
  }
}

LandmarkSet three_points() {
  Matrix m(3, 2);
  m << 0.3, 0.35, 0.7, 0.4, 0.5, 0.7;
  return LandmarkSet(m);
}

TEST(Translate, ShiftsPixelsAndLabels) {
  const LandmarkSet lm = three_points();
  const Image img = spot_image(lm, 32);
  const auto out = translate(img, lm, 3, -2);
  EXPECT_NEAR(out.second.x(0), 0.3 + 3.0 / 32, 1e-15);
  EXPECT_NEAR(out.second.y(0), 0.35 - 2.0 / 32, 1e-15);
  EXPECT_EQ(out.first.pixels(out.first.index(10, 13), 1), img.pixels(img.index(12, 10), 1));
  EXPECT_EQ(out.first.pixels(out.first.index(31, 0), 0), 0.0);  // vacated rows are zero
  expect_spots_at_labels(out, 32);
}

TEST(Flip, MirrorsAndPermutes) {
  const LandmarkSet lm = three_points();
  const Image img = spot_image(lm, 32);
  const std::vector<int> perm{1, 0, 2};
  const auto out = hflip(img, lm, perm);
  EXPECT_DOUBLE_EQ(out.second.x(0), 1.0 - 0.7);
  EXPECT_DOUBLE_EQ(out.second.y(0), 0.4);
  EXPECT_DOUBLE_EQ(out.second.x(2), 0.5);
  EXPECT_EQ(out.first.pixels(out.first.index(5, 0), 0), img.pixels(img.index(5, 31), 0));
  const auto twice = hflip(out.first, out.second, perm);
  EXPECT_EQ(twice.first.pixels, img.pixels);
  EXPECT_LT((twice.second.coords - lm.coords).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Flip, RejectsBadPermutation) {
  AugmentConfig cfg;
  cfg.flip = true;
  cfg.flip_permutation = {0, 0, 1};
  EXPECT_THROW(cfg.validate(3), ValidationError);
  cfg.flip_permutation = {1, 0};
  EXPECT_THROW(cfg.validate(3), ValidationError);
}

TEST(Rotate, ZeroAngleIsIdentity) {
  const LandmarkSet lm = three_points();
  const Image img = spot_image(lm, 32);
  const auto out = rotate(img, lm, 0.0);
  EXPECT_LT((out.first.pixels - img.pixels).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((out.second.coords - lm.coords).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Rotate, QuarterTurnMovesLabelsAboutCenter) {
  const LandmarkSet lm = three_points();
  const auto out = rotate(spot_image(lm, 32), lm, std::numbers::pi / 2);
  for (Eigen::Index k = 0; k < 3; ++k) {
    const double rx = lm.x(k) - 0.5, ry = lm.y(k) - 0.5;
    EXPECT_NEAR(std::hypot(out.second.x(k) - 0.5, out.second.y(k) - 0.5), std::hypot(rx, ry), 1e-12);
  }
  expect_spots_at_labels(out, 32);
}

TEST(Rotate, SmallAnglesKeepSpotsOnLabels) {
  const LandmarkSet lm = three_points();
  const Image img = spot_image(lm, 48);
  for (double deg : {-10.0, -3.0, 4.0, 10.0}) expect_spots_at_labels(rotate(img, lm, deg * std::numbers::pi / 180), 48);
}

TEST(Occlude, FillsRectangleOnly) {
  const Image img = spot_image(three_points(), 16);
  const Image out = occlude(img, 2, 3, 6, 5, 0.25);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      const bool inside = j >= 2 && j < 6 && i >= 3 && i < 5;
      for (int c = 0; c < 3; ++c)
        EXPECT_EQ(out.pixels(out.index(i, j), c), inside ? 0.25 : img.pixels(img.index(i, j), c));
    }
}

TEST(Blur, PreservesConstantImage) {
  Image img(9, 7);
  img.pixels.setConstant(0.4);
  EXPECT_LT((box_blur(img, 2).pixels.array() - 0.4).abs().maxCoeff(), 1e-15);
}

TEST(Blur, AveragesNeighborhood) {
  Image img(5, 5);
  img.pixels.setZero();
  img.pixels(img.index(2, 2), 0) = 9.0;
  const Image out = box_blur(img, 1);
  EXPECT_DOUBLE_EQ(out.pixels(out.index(1, 1), 0), 1.0);
  EXPECT_DOUBLE_EQ(out.pixels(out.index(0, 0), 0), 0.0);
  // Corner (0,0) sees four in-image pixels, none of them the spike.
  img.pixels(img.index(0, 0), 1) = 4.0;
  EXPECT_DOUBLE_EQ(box_blur(img, 1).pixels(0, 1), 1.0);
}

TEST(Augment, DisabledIsIdentity) {
  const LandmarkSet lm = three_points();
  const Image img = spot_image(lm, 16);
  Rng rng(1);
  const auto out = augment(img, lm, rng, AugmentConfig{});
  EXPECT_EQ(out.first.pixels, img.pixels);
  EXPECT_EQ(out.second.coords, lm.coords);
}

TEST(Augment, GeometricTransformsKeepLabelsOnSpots) {
  const LandmarkSet lm = three_points();
  const Image img = spot_image(lm, 48);
  AugmentConfig cfg;
  cfg.translate = cfg.flip = cfg.rotate = true;
  cfg.flip_permutation = {1, 0, 2};
  cfg.probability = 0.7;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto out = augment(img, lm, rng, cfg);
    // Flips swap labels 0 and 1 but the spots stay in their channels; undo the
    // permutation when the label and channel disagree.
    const Eigen::Vector2d c0 = centroid(out.first, 0);
    const bool flipped = std::abs(c0.x() - out.second.x(1) * 48) < std::abs(c0.x() - out.second.x(0) * 48);
    if (flipped) out.second.coords.row(0).swap(out.second.coords.row(1));
    expect_spots_at_labels(out, 48);
  }
}

TEST(Augment, RejectsLandmarksOutsideImage) {
  Matrix m(1, 2);
  m << 1.2, 0.5;
  AugmentConfig cfg;
  cfg.blur = true;
  Rng rng(2);
  EXPECT_THROW((void)augment(Image(8, 8), LandmarkSet(m), rng, cfg), ValidationError);
}

TEST(Augment, SameSeedSameResult) {
  const LandmarkSet lm = three_points();
  const Image img = spot_image(lm, 16);
  AugmentConfig cfg;
  cfg.translate = cfg.rotate = cfg.occlude = cfg.blur = true;
  Rng a(3), b(3);
  const auto x = augment(img, lm, a, cfg), y = augment(img, lm, b, cfg);
  EXPECT_EQ(x.first.pixels, y.first.pixels);
  EXPECT_EQ(x.second.coords, y.second.coords);
}

TEST(Synthetic, SameSeedIsBitIdentical) {
  SyntheticFaceSpec spec;
  const Dataset a = gen_synthetic(spec, 4, 9), b = gen_synthetic(spec, 4, 9);
  for (size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a[i].image.pixels, b[i].image.pixels);
    EXPECT_EQ(a[i].landmarks.coords, b[i].landmarks.coords);
  }
  const Dataset c = gen_synthetic(spec, 4, 10);
  EXPECT_NE(a[0].landmarks.coords, c[0].landmarks.coords);
}

TEST(Synthetic, SampleDoesNotDependOnCount) {
  SyntheticFaceSpec spec;
  const Dataset small = gen_synthetic(spec, 2, 5), large = gen_synthetic(spec, 6, 5);
  EXPECT_EQ(small[1].image.pixels, large[1].image.pixels);
}

TEST(Synthetic, ZeroJitterPlacesTemplate) {
  SyntheticFaceSpec spec;
  spec.rotation_deg = spec.scale_jitter = spec.translate_jitter = 0.0;
  const Dataset a = gen_synthetic(spec, 3, 1);
  for (const auto& s : a) EXPECT_EQ(s.landmarks.coords, a[0].landmarks.coords);
  const auto tmpl = canonical_template(spec.landmarks);
  for (int k = 0; k < spec.landmarks; ++k) {
    EXPECT_NEAR(a[0].landmarks.x(k), 0.5 + spec.face_scale * tmpl[static_cast<size_t>(k)].x(), 1e-12);
    EXPECT_NEAR(a[0].landmarks.y(k), 0.5 + spec.face_scale * tmpl[static_cast<size_t>(k)].y(), 1e-12);
  }
}

TEST(Synthetic, LandmarksInsideImage) {
  SyntheticFaceSpec spec;
  spec.landmarks = 68;
  spec.image_size = 64;
  for (const auto& s : gen_synthetic(spec, 10, 3)) {
    EXPECT_GT(s.landmarks.coords.minCoeff(), 0.0);
    EXPECT_LT(s.landmarks.coords.maxCoeff(), 1.0);
    EXPECT_EQ(s.image.width, 64);
    EXPECT_GE(s.image.pixels.minCoeff(), 0.0);
    EXPECT_LE(s.image.pixels.maxCoeff(), 1.0);
  }
}

TEST(Synthetic, BboxEnlargement) {
  SyntheticFaceSpec spec;
  spec.bbox_enlarge = 0.2;
  spec.face_scale = 0.4;
  const Sample s = gen_synthetic(spec, 1, 4)[0];
  const auto tight = landmark_bbox(s.landmarks, 32, 32, 0.0);
  EXPECT_NEAR(s.bbox.width(), 1.2 * tight.width(), 1e-12);
  EXPECT_NEAR(s.bbox.height(), 1.2 * tight.height(), 1e-12);
  EXPECT_NEAR(s.bbox.x0 + s.bbox.x1, tight.x0 + tight.x1, 1e-12);
}

TEST(Synthetic, CountZeroRejected) { EXPECT_THROW((void)gen_synthetic(SyntheticFaceSpec{}, 0, 1), ValidationError); }

TEST(Synthetic, FlipPermutationIsInvolution) {
  for (int n : {5, 12, 68}) {
    const auto perm = template_flip_permutation(n);
    ASSERT_EQ(perm.size(), static_cast<size_t>(n));
    const auto tmpl = canonical_template(n);
    for (int k = 0; k < n; ++k) {
      const auto j = static_cast<size_t>(perm[static_cast<size_t>(k)]);
      EXPECT_EQ(perm[j], k);
      EXPECT_NEAR(tmpl[j].x(), -tmpl[static_cast<size_t>(k)].x(), 1e-12);
      EXPECT_NEAR(tmpl[j].y(), tmpl[static_cast<size_t>(k)].y(), 1e-12);
    }
  }
}

TEST(Synthetic, BlobsSitOnLabels) {
  // Noise-free faces: the local contrast peak of each blob is within a pixel
  // of its label.
  SyntheticFaceSpec spec;
  spec.image_size = 64;
  spec.noise = 0.0;
  const Sample s = gen_synthetic(spec, 1, 6)[0];
  SyntheticFaceSpec bare = spec;
  bare.blob_intensity = 0.0;
  Rng rng(0);
  const Image face = render_face(bare, s.landmarks, rng);
  for (Eigen::Index k = 0; k < s.landmarks.size(); ++k) {
    double best = -1;
    int bi = 0, bj = 0;
    for (int i = 0; i < 64; ++i)
      for (int j = 0; j < 64; ++j) {
        const double d = (s.image.pixels.row(s.image.index(i, j)) - face.pixels.row(face.index(i, j))).norm();
        const double dx = j + 0.5 - s.landmarks.x(k) * 64, dy = i + 0.5 - s.landmarks.y(k) * 64;
        if (dx * dx + dy * dy > 9.0) continue;
        if (d > best) best = d, bi = i, bj = j;
      }
    EXPECT_NEAR(bj + 0.5, s.landmarks.x(k) * 64, 1.0) << k;
    EXPECT_NEAR(bi + 0.5, s.landmarks.y(k) * 64, 1.0) << k;
  }
}

}  // namespace
}  // namespace dtld
