#pragma once

#include "dtld/tensor.hpp"

#include <array>
#include <filesystem>
#include <string>

namespace dtld {

/// RGB image with values in [0,1], stored (height*width) x 3 row-major.
struct Image {
  int height = 0;
  int width = 0;
  Matrix pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(Matrix::Zero(Eigen::Index{h} * w, 3)) {}

  [[nodiscard]] Eigen::Index index(int row, int col) const { return Eigen::Index{row} * width + col; }
  [[nodiscard]] bool contains(int row, int col) const { return row >= 0 && row < height && col >= 0 && col < width; }
};

/// Binary portable pixmap (P6, maxval 255). Comment lines are written after
/// the magic number, one per entry.
void write_ppm(const std::filesystem::path& path, const Image& image, const std::vector<std::string>& comments = {});
[[nodiscard]] Image read_ppm(const std::filesystem::path& path);

/// Quantizes to 8 bits the same way write_ppm does.
[[nodiscard]] Image quantize8(const Image& image);

using Color = std::array<double, 3>;

/// Draws a plus-shaped marker centered at pixel coordinates (x_px, y_px).
void draw_marker(Image& image, double x_px, double y_px, const Color& color, int radius = 2);

}  // namespace dtld
