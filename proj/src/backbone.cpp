#include "dtld/backbone.hpp"

#include <string>

namespace dtld {

std::vector<int> BackboneConfig::strides() const {
  std::vector<int> s;
  for (int l = 0; l < num_levels(); ++l) s.push_back(4 << l);
  return s;
}

Backbone::Backbone(const BackboneConfig& cfg) {
  if (cfg.channels.empty()) throw ValidationError("backbone needs at least one level");
  int in = 3;
  for (int l = 0; l < cfg.num_levels(); ++l) {
    const int out = cfg.channels[static_cast<size_t>(l)];
    if (out <= 0) throw ValidationError("backbone channel counts must be positive");
    std::vector<Conv3x3> stage;
    if (l == 0) {
      stage.emplace_back(in, out, 2);
      stage.emplace_back(out, out, 2);
    } else {
      stage.emplace_back(in, out, 2);
    }
    stage.emplace_back(out, out, 1);
    stages.push_back(std::move(stage));
    in = out;
  }
}

void Backbone::init(Rng& rng) {
  for (auto& stage : stages)
    for (auto& conv : stage) conv.init_he(rng);
}

void Backbone::visit(const std::string& prefix, const ParamVisitor& f) {
  for (size_t l = 0; l < stages.size(); ++l)
    for (size_t k = 0; k < stages[l].size(); ++k)
      stages[l][k].visit(prefix + ".stage" + std::to_string(l) + ".conv" + std::to_string(k), ParamGroup::backbone, f);
}

FeaturePyramid Backbone::forward(const Image& image, Cache& cache) const {
  if (image.height % 32 != 0 || image.width % 32 != 0)
    throw ValidationError("image sides must be divisible by 32, got " + std::to_string(image.height) + "x" +
                          std::to_string(image.width));
  FeaturePyramid pyr;
  cache.conv.assign(stages.size(), {});
  cache.pre_activation.assign(stages.size(), {});
  FeatureMap x{image.height, image.width, image.pixels};
  for (size_t l = 0; l < stages.size(); ++l) {
    for (const auto& conv : stages[l]) {
      Conv3x3::Cache c;
      FeatureMap pre = conv.forward(x, c);
      cache.conv[l].push_back(std::move(c));
      x = FeatureMap{pre.height, pre.width, relu(pre.data)};
      cache.pre_activation[l].push_back(std::move(pre.data));
    }
    pyr.maps.push_back(x);
    pyr.strides.push_back(4 << l);
  }
  return pyr;
}

void Backbone::backward(const Cache& cache, const FeaturePyramid& d_pyramid, Backbone& grad) const {
  Matrix carry;  // gradient arriving from the next stage's input
  for (size_t l = stages.size(); l-- > 0;) {
    const auto& out_map = d_pyramid.maps[l];
    FeatureMap d{out_map.height, out_map.width, out_map.data};
    if (carry.size() != 0) d.data += carry;
    for (size_t k = stages[l].size(); k-- > 0;) {
      d.data = relu_backward(cache.pre_activation[l][k], d.data);
      d = stages[l][k].backward(cache.conv[l][k], d, grad.stages[l][k]);
    }
    carry = std::move(d.data);
  }
}

LevelProjections::LevelProjections(const std::vector<int>& in_channels, int dim) {
  for (int c : in_channels) levels.emplace_back(c, dim);
}

void LevelProjections::init(Rng& rng) {
  for (auto& p : levels) p.init_uniform(rng);
}

void LevelProjections::visit(const std::string& prefix, const ParamVisitor& f) {
  for (size_t l = 0; l < levels.size(); ++l) levels[l].visit(prefix + "." + std::to_string(l), ParamGroup::head, f);
}

MemoryFeature project_and_flatten(const FeaturePyramid& pyramid, const LevelProjections& proj, int image_height,
                                  int image_width, std::span<const int> block_order) {
  if (pyramid.maps.size() != proj.levels.size())
    throw ValidationError("projection count does not match pyramid levels");
  MemoryFeature mem;
  mem.layout = PyramidLayout::from_image(image_height, image_width, pyramid.strides);
  if (!block_order.empty()) mem.layout = mem.layout.with_block_order(block_order);
  const int dim = proj.levels.empty() ? 0 : proj.levels.front().out_features();
  mem.data.resize(mem.layout.total_len(), dim);
  for (int l = 0; l < mem.layout.num_levels(); ++l) {
    const auto& map = pyramid.maps[static_cast<size_t>(l)];
    const auto& lin = proj.levels[static_cast<size_t>(l)];
    const auto& lvl = mem.layout.level(l);
    if (map.channels() != lin.in_features())
      throw ValidationError("level " + std::to_string(l) + ": feature channels " + std::to_string(map.channels()) +
                            " do not match projection input " + std::to_string(lin.in_features()));
    if (map.height != lvl.height || map.width != lvl.width)
      throw ValidationError("level " + std::to_string(l) + ": feature map shape does not match layout");
    mem.data.middleRows(lvl.offset, lvl.size()) = lin.forward(map.data);
  }
  return mem;
}

FeaturePyramid project_and_flatten_backward(const FeaturePyramid& pyramid, const LevelProjections& proj,
                                            const MemoryFeature& memory, const Matrix& d_memory,
                                            LevelProjections& grad) {
  FeaturePyramid d;
  d.strides = pyramid.strides;
  for (int l = 0; l < memory.layout.num_levels(); ++l) {
    const auto& lvl = memory.layout.level(l);
    const auto& map = pyramid.maps[static_cast<size_t>(l)];
    const Matrix d_block = d_memory.middleRows(lvl.offset, lvl.size());
    d.maps.push_back(FeatureMap{map.height, map.width,
                                proj.levels[static_cast<size_t>(l)].backward(map.data, d_block,
                                                                             grad.levels[static_cast<size_t>(l)])});
  }
  return d;
}

std::vector<FeatureMap> unflatten(const MemoryFeature& memory) {
  std::vector<FeatureMap> out;
  for (const auto& lvl : memory.layout.levels())
    out.push_back(FeatureMap{lvl.height, lvl.width, memory.data.middleRows(lvl.offset, lvl.size())});
  return out;
}

}  // namespace dtld
