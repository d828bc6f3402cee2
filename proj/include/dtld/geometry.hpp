#pragma once

#include "dtld/tensor.hpp"

#include <array>
#include <span>
#include <vector>

namespace dtld {

inline constexpr double kInverseSigmoidEps = 1e-5;

/// N normalized 2-D points; column 0 is x (column fraction), column 1 is y
/// (row fraction).
struct LandmarkSet {
  Matrix coords;

  LandmarkSet() = default;
  explicit LandmarkSet(Matrix c) : coords(std::move(c)) {}
  static LandmarkSet zeros(Eigen::Index n) { return LandmarkSet(Matrix::Zero(n, 2)); }

  [[nodiscard]] Eigen::Index size() const { return coords.rows(); }
  [[nodiscard]] double x(Eigen::Index i) const { return coords(i, 0); }
  [[nodiscard]] double y(Eigen::Index i) const { return coords(i, 1); }
};

struct LevelShape {
  int height = 0;
  int width = 0;
  int stride = 0;
  Eigen::Index offset = 0;  // first row of this level's block in the memory

  [[nodiscard]] Eigen::Index size() const { return Eigen::Index{height} * width; }
};

/// Per-level spatial shapes of the feature pyramid and where each level's
/// block sits in the flattened memory. Levels are always indexed in logical
/// (stride) order; block order in memory may be permuted.
class PyramidLayout {
 public:
  PyramidLayout() = default;

  static PyramidLayout from_image(int image_height, int image_width, std::span<const int> strides);

  /// Same level shapes, memory blocks stored in `order` (order[k] is the
  /// logical level placed k-th).
  [[nodiscard]] PyramidLayout with_block_order(std::span<const int> order) const;

  [[nodiscard]] const std::vector<LevelShape>& levels() const { return levels_; }
  [[nodiscard]] const LevelShape& level(int l) const { return levels_.at(static_cast<size_t>(l)); }
  [[nodiscard]] int num_levels() const { return static_cast<int>(levels_.size()); }
  [[nodiscard]] Eigen::Index total_len() const { return total_len_; }

  /// Logical level of each memory row.
  [[nodiscard]] std::vector<int> row_levels() const;

 private:
  std::vector<LevelShape> levels_;
  Eigen::Index total_len_ = 0;
};

[[nodiscard]] double sigmoid(double x);

/// log(p'/(1-p')) with p' = clamp(p, eps, 1-eps). Throws on non-finite p.
[[nodiscard]] double inverse_sigmoid(double p, double eps = kInverseSigmoidEps);

/// Bilinear interpolation stencil for a normalized point on an h x w map.
/// Pixel centers sit at ((j+0.5)/w, (i+0.5)/h); taps outside the map are
/// marked invalid and read as zero.
struct BilinearTaps {
  std::array<Eigen::Index, 4> index{};  // row-major pixel index (valid taps only)
  std::array<double, 4> weight{};
  std::array<bool, 4> valid{};
  double fx = 0.0;
  double fy = 0.0;
};

[[nodiscard]] BilinearTaps bilinear_taps(int height, int width, double u, double v);

using ConstMapRef = Eigen::Ref<const Matrix, 0, Eigen::OuterStride<>>;
using MapRef = Eigen::Ref<Matrix, 0, Eigen::OuterStride<>>;

/// Samples an (h*w) x C row-major feature map at normalized point (u, v).
[[nodiscard]] RowVector bilinear_sample(const ConstMapRef& map, int height, int width, double u, double v);

/// Accumulates gradients of a bilinear sample: d_map += dL/dmap, and returns
/// dL/du, dL/dv through the out-parameters.
void bilinear_sample_backward(const ConstMapRef& map, int height, int width, double u, double v,
                              const Eigen::Ref<const RowVector>& d_out, MapRef d_map, double& d_u,
                              double& d_v);

/// Fixed sinusoidal code of a normalized location: dim/2 channels for x
/// followed by dim/2 channels for y.
[[nodiscard]] RowVector sinusoid_embedding(double x, double y, int dim);

/// M x dim sinusoidal codes of every pixel center, rows in memory order.
[[nodiscard]] Matrix build_pixel_positions(const PyramidLayout& layout, int dim);

/// M x 2 normalized pixel centers, rows in memory order.
[[nodiscard]] Matrix pixel_centers(const PyramidLayout& layout);

}  // namespace dtld
