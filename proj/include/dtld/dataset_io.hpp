#pragma once

#include "dtld/synthetic.hpp"

#include <filesystem>
#include <string>

namespace dtld {

/// Landmark file:
///   version 1
///   n_points <N>
///   <x_px> <y_px>      (N lines, 6 decimals)
///   # config <hash>    (optional)
/// Lines starting with '#' are comments.
[[nodiscard]] std::string format_landmarks(const LandmarkSet& lm, int width, int height, const std::string& config_hash);
[[nodiscard]] LandmarkSet parse_landmarks(const std::string& text, int width, int height);

void write_landmarks(const std::filesystem::path& path, const LandmarkSet& lm, int width, int height,
                     const std::string& config_hash);
[[nodiscard]] LandmarkSet read_landmarks(const std::filesystem::path& path, int width, int height);

/// Dataset directory: manifest.txt holds one line per sample,
///   <image.ppm> <labels.pts> <x0> <y0> <x1> <y1>
/// with paths relative to the directory and the bbox in pixels.
inline constexpr const char* kManifestName = "manifest.txt";

void write_dataset(const std::filesystem::path& dir, const Dataset& data, const std::string& config_hash);
/// Throws ValidationError("dataset not found: <dir>") when the manifest is missing.
[[nodiscard]] Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace dtld
