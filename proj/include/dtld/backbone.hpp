#pragma once

#include "dtld/geometry.hpp"
#include "dtld/image.hpp"
#include "dtld/layers.hpp"

#include <vector>

namespace dtld {

struct BackboneConfig {
  int image_size = 256;
  std::vector<int> channels{16, 32, 64, 128};  // one entry per pyramid level

  [[nodiscard]] int num_levels() const { return static_cast<int>(channels.size()); }
  /// Level l has stride 4 * 2^l.
  [[nodiscard]] std::vector<int> strides() const;
};

/// Backbone outputs F_1..F_L, strides 4, 8, 16, ...
struct FeaturePyramid {
  std::vector<FeatureMap> maps;
  std::vector<int> strides;
};

/// Flattened, projected pyramid: M x C with the level block layout.
struct MemoryFeature {
  Matrix data;
  PyramidLayout layout;
};

/// Small trainable CNN. Stage 0 is [conv s2, conv s2, conv s1], every later
/// stage is [conv s2, conv s1]; each conv is followed by a rectifier.
struct Backbone {
  std::vector<std::vector<Conv3x3>> stages;

  Backbone() = default;
  explicit Backbone(const BackboneConfig& cfg);

  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& f);

  struct Cache {
    std::vector<std::vector<Conv3x3::Cache>> conv;
    std::vector<std::vector<Matrix>> pre_activation;
  };

  [[nodiscard]] FeaturePyramid forward(const Image& image, Cache& cache) const;
  /// d_pyramid holds dL/dF_l for each level (missing gradients as zero maps).
  void backward(const Cache& cache, const FeaturePyramid& d_pyramid, Backbone& grad) const;
};

/// Per-level 1x1 projections into the common channel dim.
struct LevelProjections {
  std::vector<Linear> levels;

  LevelProjections() = default;
  LevelProjections(const std::vector<int>& in_channels, int dim);

  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& f);
};

/// Projects each level to C channels and stacks the blocks; `block_order`
/// (empty = natural) selects memory block order.
[[nodiscard]] MemoryFeature project_and_flatten(const FeaturePyramid& pyramid, const LevelProjections& proj,
                                                int image_height, int image_width,
                                                std::span<const int> block_order = {});

/// Gradient of project_and_flatten. Returns dL/dF_l and accumulates into grad.
[[nodiscard]] FeaturePyramid project_and_flatten_backward(const FeaturePyramid& pyramid, const LevelProjections& proj,
                                                          const MemoryFeature& memory, const Matrix& d_memory,
                                                          LevelProjections& grad);

/// Splits the memory back into per-level maps.
[[nodiscard]] std::vector<FeatureMap> unflatten(const MemoryFeature& memory);

}  // namespace dtld
