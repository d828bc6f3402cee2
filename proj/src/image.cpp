#include "dtld/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dtld {

namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  while (in) {
    const int c = in.peek();
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  in >> tok;
  return tok;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Image& image, const std::vector<std::string>& comments) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path.string());
  out << "P6\n";
  for (const auto& c : comments) out << "# " << c << "\n";
  out << image.width << " " << image.height << "\n255\n";
  std::string bytes(static_cast<size_t>(image.pixels.size()), '\0');
  for (Eigen::Index i = 0; i < image.pixels.size(); ++i)
    bytes[static_cast<size_t>(i)] = static_cast<char>(to_byte(image.pixels.data()[i]));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing image: " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read image: " + path.string());
  if (next_token(in) != "P6") throw ValidationError("not a binary PPM (P6) file: " + path.string());
  int w = 0;
  int h = 0;
  int maxval = 0;
  try {
    w = std::stoi(next_token(in));
    h = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw ValidationError("malformed PPM header: " + path.string());
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw ValidationError("unsupported PPM dimensions or maxval: " + path.string());
  in.get();  // single whitespace after maxval
  Image img(h, w);
  std::string bytes(static_cast<size_t>(img.pixels.size()), '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw ValidationError("truncated PPM data: " + path.string());
  for (Eigen::Index i = 0; i < img.pixels.size(); ++i)
    img.pixels.data()[i] = static_cast<unsigned char>(bytes[static_cast<size_t>(i)]) / 255.0;
  return img;
}

Image quantize8(const Image& image) {
  Image out = image;
  for (Eigen::Index i = 0; i < out.pixels.size(); ++i) out.pixels.data()[i] = to_byte(out.pixels.data()[i]) / 255.0;
  return out;
}

void draw_marker(Image& image, double x_px, double y_px, const Color& color, int radius) {
  const int cx = static_cast<int>(std::floor(x_px));
  const int cy = static_cast<int>(std::floor(y_px));
  for (int d = -radius; d <= radius; ++d) {
    for (auto [r, c] : {std::pair{cy, cx + d}, std::pair{cy + d, cx}}) {
      if (!image.contains(r, c)) continue;
      for (int k = 0; k < 3; ++k) image.pixels(image.index(r, c), k) = color[static_cast<size_t>(k)];
    }
  }
}

}  // namespace dtld
