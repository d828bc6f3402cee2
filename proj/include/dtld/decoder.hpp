#pragma once

#include "dtld/attention.hpp"
#include "dtld/backbone.hpp"
#include "dtld/geometry.hpp"
#include "dtld/image.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dtld {

enum class DecoderMode { basic, parallel };
enum class QueryInit { learned, random };

[[nodiscard]] std::string to_string(DecoderMode mode);
[[nodiscard]] std::string to_string(QueryInit init);
[[nodiscard]] DecoderMode parse_decoder_mode(const std::string& s);
[[nodiscard]] QueryInit parse_query_init(const std::string& s);

struct ModelConfig {
  int image_size = 256;
  std::vector<int> backbone_channels{16, 32, 64, 128};
  int dim = 256;
  int heads = 8;
  int points = 4;
  int layers = 3;
  int landmarks = 68;
  int ffn_hidden = 0;  // 0 means 4 * dim
  DecoderMode mode = DecoderMode::basic;
  QueryInit query_init = QueryInit::learned;
  bool self_attention = true;
  /// Parallel mode only. When false the image rows are still computed but the
  /// memory passed to the next layer stays the input memory.
  bool update_memory = true;
  uint64_t seed = 0;

  [[nodiscard]] int num_levels() const { return static_cast<int>(backbone_channels.size()); }
  [[nodiscard]] int hidden() const { return ffn_hidden > 0 ? ffn_hidden : 4 * dim; }
  [[nodiscard]] AttentionConfig attention() const { return {dim, heads, num_levels(), points}; }
  [[nodiscard]] BackboneConfig backbone() const { return {image_size, backbone_channels}; }
  [[nodiscard]] PyramidLayout layout() const;
  void validate() const;
};

/// Three affine layers C -> C -> C -> 2 with rectifiers in between; the last
/// layer starts at zero so a fresh cascade leaves the reference points as is.
struct OffsetPredictor {
  Linear fc0;
  Linear fc1;
  Linear fc2;

  OffsetPredictor() = default;
  explicit OffsetPredictor(int dim);

  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& f);

  struct Cache {
    Matrix input;
    Matrix pre0, h0, pre1, h1;
  };
  [[nodiscard]] Matrix forward(const Matrix& x, Cache& cache) const;
  Matrix backward(const Cache& cache, const Matrix& d_out, OffsetPredictor& grad) const;
};

struct DecoderLayerParams {
  std::optional<SelfAttention> self_attn;
  CrossAttentionBlock cross;
  std::optional<LayerNorm> image_norm1;  // parallel mode only
  std::optional<LayerNorm> image_norm2;
  OffsetPredictor offset_head;

  void visit(const std::string& prefix, const ParamVisitor& f);
};

/// All learnable tensors. Gradients use a second instance of the same struct.
struct ModelParams {
  Backbone backbone;
  LevelProjections input_proj;
  std::optional<Linear> query_init;  // learned init: N x (h_L*w_L) spatial projection
  std::optional<Tensor> query_embed;  // random init: N x C
  Linear landmark_init;               // C -> 2
  Tensor query_pos;                   // N x C, shared by every layer
  Tensor level_embed;                 // L x C
  std::vector<DecoderLayerParams> layers;

  void visit(const ParamVisitor& f);
  [[nodiscard]] std::vector<ParamRef> refs();
  [[nodiscard]] ModelParams zeros_like() const;
  void set_zero();
  /// this += scale * other, path by path.
  void add_scaled(ModelParams& other, double scale);
};

[[nodiscard]] ModelParams build_params(const ModelConfig& cfg);
/// Fills freshly built params with their initial values.
void init_params(ModelParams& params, const ModelConfig& cfg, Rng& rng);

struct ParameterCount {
  std::vector<std::pair<std::string, int64_t>> per_path;
  int64_t total = 0;
};
[[nodiscard]] ParameterCount count_parameters(ModelParams& params);

/// State carried between decoder layers.
struct DecoderState {
  Matrix queries;          // N x C
  MemoryFeature memory;    // updated by parallel layers only
  LandmarkSet refs;        // reference points of the next layer
  std::vector<LandmarkSet> outputs;  // Y_0 .. Y_t
};

/// Q_0 = W * F_L + b (projection across the h_L*w_L spatial positions of the
/// last memory block, bias broadcast over channels).
[[nodiscard]] Matrix init_query(const MemoryFeature& memory, const Linear& projection);
/// Y_0 = sigmoid(Q_0 W^T + b).
[[nodiscard]] LandmarkSet init_landmarks(const Matrix& q0, const Linear& projection);

/// Y = sigmoid(offsets + inverse_sigmoid(refs)) elementwise. Evaluated in a
/// form that returns the clamped refs exactly when the offsets are zero.
[[nodiscard]] LandmarkSet refine(const Matrix& offsets, const LandmarkSet& refs, double eps = kInverseSigmoidEps);
/// Gradients of refine: returns dL/doffsets; writes dL/drefs.
[[nodiscard]] Matrix refine_backward(const LandmarkSet& refs, const LandmarkSet& out, const Matrix& d_out,
                                     Matrix& d_refs, double eps = kInverseSigmoidEps);

/// Everything one decoder layer needs to run backward.
struct LayerCache {
  Matrix queries_in;
  LandmarkSet refs;
  MemoryFeature memory_in;
  SelfAttention::Cache self_attn;
  Matrix queries_s;
  CrossAttentionBlock::Cache cross;  // basic mode
  // parallel mode
  DeformableAttention::Cache joint_attn;
  LayerNorm::Cache image_norm1, image_norm2, query_norm1, query_norm2;
  FeedForward::Cache joint_ffn;
  Matrix queries_d;
  OffsetPredictor::Cache head;
  Matrix offsets;
  LandmarkSet output;
};

/// Fixed per-layout tensors shared by every layer.
struct PositionBuffers {
  Matrix pixel_pos;      // M x C sinusoidal codes
  Matrix pixel_centers;  // M x 2
  std::vector<int> row_level;
};
[[nodiscard]] PositionBuffers make_position_buffers(const PyramidLayout& layout, int dim);

DecoderState basic_layer(const DecoderState& state, const DecoderLayerParams& layer, const Tensor& query_pos,
                         const ModelConfig& cfg, LayerCache* cache = nullptr);
DecoderState parallel_layer(const DecoderState& state, const DecoderLayerParams& layer, const Tensor& query_pos,
                            const Tensor& level_embed, const PositionBuffers& buffers, const ModelConfig& cfg,
                            LayerCache* cache = nullptr);

struct ForwardCache {
  Backbone::Cache backbone;
  FeaturePyramid pyramid;
  MemoryFeature memory0;
  Matrix q0;
  std::vector<LayerCache> layers;
};

/// Backbone, memory, query init and T decoder layers.
class Model {
 public:
  explicit Model(ModelConfig cfg);
  Model(ModelConfig cfg, ModelParams params);

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  [[nodiscard]] ModelParams& params() { return params_; }
  [[nodiscard]] const ModelParams& params() const { return params_; }
  [[nodiscard]] const PyramidLayout& layout() const { return layout_; }
  [[nodiscard]] const PositionBuffers& buffers() const { return buffers_; }

  /// Returns [Y_0 .. Y_T].
  [[nodiscard]] std::vector<LandmarkSet> forward(const Image& image, ForwardCache* cache = nullptr) const;

  /// d_outputs[t] = dL/dY_t. Accumulates parameter gradients into `grads`.
  void backward(const ForwardCache& cache, const std::vector<Matrix>& d_outputs, ModelParams& grads) const;

 private:
  ModelConfig cfg_;
  ModelParams params_;
  PyramidLayout layout_;
  PositionBuffers buffers_;
};

}  // namespace dtld
