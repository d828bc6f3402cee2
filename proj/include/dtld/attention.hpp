#pragma once

#include "dtld/backbone.hpp"
#include "dtld/geometry.hpp"
#include "dtld/layers.hpp"

namespace dtld {

struct AttentionConfig {
  int dim = 256;
  int heads = 8;
  int levels = 4;
  int points = 4;  // sampling points per head per level

  [[nodiscard]] int head_dim() const { return dim / heads; }
  /// Sampling slots per query, K = heads * levels * points.
  [[nodiscard]] int slots() const { return heads * levels * points; }
  [[nodiscard]] int slots_per_head() const { return levels * points; }
  /// Slot index of (head, level, point).
  [[nodiscard]] int slot(int h, int l, int p) const { return (h * levels + l) * points + p; }
  void validate() const;
};

/// Multi-head scaled dot-product self-attention over landmark queries, with
/// query = key = Q + pos and value = Q, followed by residual + LayerNorm.
struct SelfAttention {
  Linear q_proj;
  Linear k_proj;
  Linear v_proj;
  Linear out_proj;
  LayerNorm norm;

  SelfAttention() = default;
  explicit SelfAttention(int dim);

  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& f);

  struct Cache {
    Matrix input;
    Matrix with_pos;
    Matrix q, k, v;
    std::vector<Matrix> attention;  // per head, N x N; each row sums to 1
    Matrix heads_out;
    LayerNorm::Cache norm;
  };

  [[nodiscard]] Matrix forward(const Matrix& queries, const Matrix& pos, int heads, Cache& cache) const;
  /// Returns dL/dqueries; adds dL/dpos into d_pos.
  Matrix backward(const Cache& cache, const Matrix& d_out, int heads, SelfAttention& grad, Matrix& d_pos) const;
};

/// Per-query sampling offsets (normalized units) and attention weights.
/// offsets: n x (2K), columns (2k, 2k+1) are (dx, dy) of slot k.
/// weights: n x K, softmax-normalized per head over its levels*points slots.
struct SamplingField {
  Matrix offsets;
  Matrix weights;
};

/// Weighted bilinear aggregation of `value` (M x C, laid out by `layout`)
/// around each reference point: for every query, head h accumulates
/// sum_k w_k * sample(level_k, ref + offset_k) into channels of head h.
[[nodiscard]] Matrix aggregate_samples(const Matrix& value, const PyramidLayout& layout, const Matrix& refs,
                                       const SamplingField& field, const AttentionConfig& cfg);

/// Multi-scale deformable attention (no residual/normalization): predicts a
/// SamplingField from each query, aggregates the value-projected memory and
/// applies the output projection.
struct DeformableAttention {
  Linear value_proj;
  Linear offset_proj;
  Linear weight_proj;
  Linear out_proj;

  DeformableAttention() = default;
  explicit DeformableAttention(const AttentionConfig& cfg);

  /// Offsets start at zero weights with a ring of K directions (radius 0.01)
  /// as bias; attention logits start at zero (uniform weights).
  void init(Rng& rng, const AttentionConfig& cfg);
  void visit(const std::string& prefix, const ParamVisitor& f);

  struct Cache {
    Matrix queries;
    Matrix refs;
    Matrix value;
    SamplingField field;
    Matrix aggregated;
  };

  [[nodiscard]] SamplingField sampling_field(const Matrix& queries, const AttentionConfig& cfg) const;

  [[nodiscard]] Matrix forward(const Matrix& queries, const Matrix& refs, const MemoryFeature& memory,
                               const AttentionConfig& cfg, Cache& cache) const;

  struct InputGrads {
    Matrix queries;
    Matrix refs;
    Matrix memory;
  };
  InputGrads backward(const Cache& cache, const MemoryFeature& memory, const Matrix& d_out,
                      const AttentionConfig& cfg, DeformableAttention& grad) const;
};

/// Two-layer perceptron with a rectifier, hidden width 4*C by default.
struct FeedForward {
  Linear fc1;
  Linear fc2;

  FeedForward() = default;
  FeedForward(int dim, int hidden);

  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& f);

  struct Cache {
    Matrix input;
    Matrix hidden_pre;
    Matrix hidden;
  };
  [[nodiscard]] Matrix forward(const Matrix& x, Cache& cache) const;
  Matrix backward(const Cache& cache, const Matrix& d_out, FeedForward& grad) const;
};

/// Deformable attention followed by residual + LayerNorm, then a feed-forward
/// network with residual + LayerNorm.
struct CrossAttentionBlock {
  DeformableAttention attn;
  LayerNorm norm1;
  FeedForward ffn;
  LayerNorm norm2;

  CrossAttentionBlock() = default;
  CrossAttentionBlock(const AttentionConfig& cfg, int ffn_hidden);

  void init(Rng& rng, const AttentionConfig& cfg);
  void visit(const std::string& prefix, const ParamVisitor& f);

  struct Cache {
    DeformableAttention::Cache attn;
    LayerNorm::Cache norm1;
    FeedForward::Cache ffn;
    LayerNorm::Cache norm2;
  };

  [[nodiscard]] Matrix forward(const Matrix& queries, const Matrix& refs, const MemoryFeature& memory,
                               const AttentionConfig& cfg, Cache& cache) const;
  DeformableAttention::InputGrads backward(const Cache& cache, const MemoryFeature& memory, const Matrix& d_out,
                                           const AttentionConfig& cfg, CrossAttentionBlock& grad) const;
};

}  // namespace dtld
