#include "dtld/dataset_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace dtld {

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string read_text(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ValidationError(std::string("cannot read ") + what + ": " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
  if (!out) throw ValidationError("failed writing " + path.string());
}

/// Non-empty, non-comment lines.
std::vector<std::string> content_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#') continue;
    out.push_back(line);
  }
  return out;
}

}  // namespace

std::string format_landmarks(const LandmarkSet& lm, int width, int height, const std::string& config_hash) {
  std::string out = "version 1\nn_points " + std::to_string(lm.size()) + "\n";
  for (Eigen::Index i = 0; i < lm.size(); ++i)
    out += fixed6(lm.x(i) * width) + " " + fixed6(lm.y(i) * height) + "\n";
  if (!config_hash.empty()) out += "# config " + config_hash + "\n";
  return out;
}

LandmarkSet parse_landmarks(const std::string& text, int width, int height) {
  if (width <= 0 || height <= 0) throw ValidationError("landmarks: image size must be positive");
  const auto lines = content_lines(text);
  if (lines.size() < 2 || lines[0] != "version 1") throw ValidationError("landmarks: expected 'version 1' header");
  std::istringstream head(lines[1]);
  std::string tag;
  long n = -1;
  if (!(head >> tag >> n) || tag != "n_points" || n < 0) throw ValidationError("landmarks: expected 'n_points <N>'");
  if (static_cast<long>(lines.size()) - 2 != n)
    throw ValidationError("landmarks: header says " + std::to_string(n) + " points, file has " +
                          std::to_string(lines.size() - 2));
  LandmarkSet lm = LandmarkSet::zeros(n);
  for (long i = 0; i < n; ++i) {
    std::istringstream row(lines[static_cast<size_t>(i) + 2]);
    double x = 0.0, y = 0.0;
    std::string extra;
    if (!(row >> x >> y) || (row >> extra))
      throw ValidationError("landmarks: malformed point line " + std::to_string(i + 1));
    if (!std::isfinite(x) || !std::isfinite(y)) throw ValidationError("landmarks: non-finite coordinate");
    lm.coords(i, 0) = x / width;
    lm.coords(i, 1) = y / height;
  }
  return lm;
}

void write_landmarks(const std::filesystem::path& path, const LandmarkSet& lm, int width, int height,
                     const std::string& config_hash) {
  write_text(path, format_landmarks(lm, width, height, config_hash));
}

LandmarkSet read_landmarks(const std::filesystem::path& path, int width, int height) {
  return parse_landmarks(read_text(path, "landmark file"), width, height);
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data, const std::string& config_hash) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw ValidationError("cannot create " + (dir / "images").string() + ": " + ec.message());
  std::filesystem::create_directories(dir / "labels", ec);
  if (ec) throw ValidationError("cannot create " + (dir / "labels").string() + ": " + ec.message());
  std::string manifest = "# config " + config_hash + "\n";
  for (size_t i = 0; i < data.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%06zu", i);
    const std::string img = std::string("images/") + stem + ".ppm";
    const std::string pts = std::string("labels/") + stem + ".pts";
    const Sample& s = data[i];
    write_ppm(dir / img, s.image, {"config " + config_hash});
    write_landmarks(dir / pts, s.landmarks, s.image.width, s.image.height, config_hash);
    manifest += img + " " + pts + " " + fixed6(s.bbox.x0) + " " + fixed6(s.bbox.y0) + " " + fixed6(s.bbox.x1) + " " +
                fixed6(s.bbox.y1) + "\n";
  }
  write_text(dir / kManifestName, manifest);
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest = dir / kManifestName;
  if (!std::filesystem::is_regular_file(manifest)) throw ValidationError("dataset not found: " + dir.string());
  Dataset out;
  size_t line_no = 0;
  for (const auto& line : content_lines(read_text(manifest, "manifest"))) {
    ++line_no;
    std::istringstream row(line);
    std::string img, pts, extra;
    metrics::BBox box;
    if (!(row >> img >> pts >> box.x0 >> box.y0 >> box.x1 >> box.y1) || (row >> extra))
      throw ValidationError(manifest.string() + ": malformed entry " + std::to_string(line_no));
    Sample s;
    s.image = read_ppm(dir / img);
    s.landmarks = read_landmarks(dir / pts, s.image.width, s.image.height);
    s.bbox = box;
    out.push_back(std::move(s));
  }
  if (out.empty()) throw ValidationError("dataset is empty: " + dir.string());
  return out;
}

}  // namespace dtld
