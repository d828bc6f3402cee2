#include "dtld/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace dtld {

PyramidLayout PyramidLayout::from_image(int image_height, int image_width, std::span<const int> strides) {
  if (strides.empty()) throw ValidationError("pyramid layout needs at least one level");
  if (image_height <= 0 || image_width <= 0) throw ValidationError("image size must be positive");
  PyramidLayout layout;
  int prev = 0;
  for (int s : strides) {
    if (s <= prev) throw ValidationError("pyramid strides must be strictly increasing");
    prev = s;
    LevelShape lvl;
    lvl.stride = s;
    lvl.height = (image_height + s - 1) / s;
    lvl.width = (image_width + s - 1) / s;
    lvl.offset = layout.total_len_;
    layout.total_len_ += lvl.size();
    layout.levels_.push_back(lvl);
  }
  return layout;
}

PyramidLayout PyramidLayout::with_block_order(std::span<const int> order) const {
  if (order.size() != levels_.size()) throw ValidationError("block order must list every level once");
  std::vector<bool> seen(levels_.size(), false);
  PyramidLayout out = *this;
  Eigen::Index offset = 0;
  for (int l : order) {
    if (l < 0 || l >= num_levels() || seen[static_cast<size_t>(l)])
      throw ValidationError("block order must be a permutation of level indices");
    seen[static_cast<size_t>(l)] = true;
    out.levels_[static_cast<size_t>(l)].offset = offset;
    offset += levels_[static_cast<size_t>(l)].size();
  }
  return out;
}

std::vector<int> PyramidLayout::row_levels() const {
  std::vector<int> out(static_cast<size_t>(total_len_));
  for (int l = 0; l < num_levels(); ++l) {
    const auto& lvl = levels_[static_cast<size_t>(l)];
    std::fill_n(out.begin() + lvl.offset, lvl.size(), l);
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double inverse_sigmoid(double p, double eps) {
  if (!std::isfinite(p)) throw ValidationError("inverse_sigmoid: non-finite input");
  if (!(eps > 0.0 && eps < 0.5)) throw ValidationError("inverse_sigmoid: eps must lie in (0, 0.5)");
  const double c = std::clamp(p, eps, 1.0 - eps);
  return std::log(c / (1.0 - c));
}

BilinearTaps bilinear_taps(int height, int width, double u, double v) {
  BilinearTaps t;
  const double px = u * width - 0.5;
  const double py = v * height - 0.5;
  const double fx0 = std::floor(px);
  const double fy0 = std::floor(py);
  t.fx = px - fx0;
  t.fy = py - fy0;
  // Far outside the map: every tap is padding. Also keeps the int casts safe.
  if (fx0 < -2.0 || fy0 < -2.0 || fx0 > width + 1.0 || fy0 > height + 1.0) return t;
  const int x0 = static_cast<int>(fx0);
  const int y0 = static_cast<int>(fy0);
  const std::array<int, 4> xs{x0, x0 + 1, x0, x0 + 1};
  const std::array<int, 4> ys{y0, y0, y0 + 1, y0 + 1};
  t.weight = {(1 - t.fx) * (1 - t.fy), t.fx * (1 - t.fy), (1 - t.fx) * t.fy, t.fx * t.fy};
  for (size_t c = 0; c < 4; ++c) {
    t.valid[c] = xs[c] >= 0 && xs[c] < width && ys[c] >= 0 && ys[c] < height;
    if (t.valid[c]) t.index[c] = Eigen::Index{ys[c]} * width + xs[c];
  }
  return t;
}

RowVector bilinear_sample(const ConstMapRef& map, int height, int width, double u, double v) {
  RowVector out = RowVector::Zero(map.cols());
  const BilinearTaps t = bilinear_taps(height, width, u, v);
  for (size_t c = 0; c < 4; ++c)
    if (t.valid[c]) out.noalias() += t.weight[c] * map.row(t.index[c]);
  return out;
}

void bilinear_sample_backward(const ConstMapRef& map, int height, int width, double u, double v,
                              const Eigen::Ref<const RowVector>& d_out, MapRef d_map, double& d_u,
                              double& d_v) {
  const BilinearTaps t = bilinear_taps(height, width, u, v);
  const std::array<double, 4> dw_dfx{-(1 - t.fy), 1 - t.fy, -t.fy, t.fy};
  const std::array<double, 4> dw_dfy{-(1 - t.fx), -t.fx, 1 - t.fx, t.fx};
  double gx = 0.0;
  double gy = 0.0;
  for (size_t c = 0; c < 4; ++c) {
    if (!t.valid[c]) continue;
    d_map.row(t.index[c]).noalias() += t.weight[c] * d_out;
    const double dot = d_out.dot(map.row(t.index[c]));
    gx += dw_dfx[c] * dot;
    gy += dw_dfy[c] * dot;
  }
  d_u = gx * width;
  d_v = gy * height;
}

RowVector sinusoid_embedding(double x, double y, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw ValidationError("positional embedding dim must be positive and even, got " + std::to_string(dim));
  const int half = dim / 2;
  RowVector out(dim);
  for (int axis = 0; axis < 2; ++axis) {
    const double coord = axis == 0 ? x : y;
    for (int k = 0; k < half; ++k) {
      const double freq = std::pow(10000.0, -2.0 * (k / 2) / half);
      const double angle = 2.0 * std::numbers::pi * coord * freq;
      out(axis * half + k) = (k % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return out;
}

Matrix pixel_centers(const PyramidLayout& layout) {
  Matrix out(layout.total_len(), 2);
  for (const auto& lvl : layout.levels()) {
    for (int i = 0; i < lvl.height; ++i) {
      for (int j = 0; j < lvl.width; ++j) {
        const Eigen::Index r = lvl.offset + Eigen::Index{i} * lvl.width + j;
        out(r, 0) = (j + 0.5) / lvl.width;
        out(r, 1) = (i + 0.5) / lvl.height;
      }
    }
  }
  return out;
}

Matrix build_pixel_positions(const PyramidLayout& layout, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw ValidationError("positional embedding dim must be positive and even, got " + std::to_string(dim));
  const Matrix centers = pixel_centers(layout);
  Matrix out(centers.rows(), dim);
  for (Eigen::Index r = 0; r < centers.rows(); ++r) out.row(r) = sinusoid_embedding(centers(r, 0), centers(r, 1), dim);
  return out;
}

}  // namespace dtld
