#include "dtld/attention.hpp"

#include <cmath>
#include <numbers>

namespace dtld {

void AttentionConfig::validate() const {
  if (dim <= 0 || heads <= 0 || levels <= 0 || points <= 0)
    throw ValidationError("attention: dim, heads, levels and points must be positive");
  if (dim % heads != 0)
    throw ValidationError("attention: dim " + std::to_string(dim) + " is not divisible by heads " +
                          std::to_string(heads));
}

// ---------------------------------------------------------------- self-attention

SelfAttention::SelfAttention(int dim)
    : q_proj(dim, dim), k_proj(dim, dim), v_proj(dim, dim), out_proj(dim, dim), norm(dim) {}

void SelfAttention::init(Rng& rng) {
  q_proj.init_uniform(rng);
  k_proj.init_uniform(rng);
  v_proj.init_uniform(rng);
  out_proj.init_uniform(rng);
}

void SelfAttention::visit(const std::string& prefix, const ParamVisitor& f) {
  q_proj.visit(prefix + ".q_proj", ParamGroup::head, f);
  k_proj.visit(prefix + ".k_proj", ParamGroup::head, f);
  v_proj.visit(prefix + ".v_proj", ParamGroup::head, f);
  out_proj.visit(prefix + ".out_proj", ParamGroup::head, f);
  norm.visit(prefix + ".norm", ParamGroup::head, f);
}

Matrix SelfAttention::forward(const Matrix& queries, const Matrix& pos, int heads, Cache& cache) const {
  if (queries.rows() == 0) throw ValidationError("self_attention: no queries");
  if (pos.rows() != queries.rows() || pos.cols() != queries.cols())
    throw ValidationError("self_attention: position embedding shape mismatch");
  const Eigen::Index n = queries.rows();
  const Eigen::Index d = queries.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  cache.input = queries;
  cache.with_pos = queries + pos;
  cache.q = q_proj.forward(cache.with_pos);
  cache.k = k_proj.forward(cache.with_pos);
  cache.v = v_proj.forward(queries);
  cache.attention.assign(static_cast<size_t>(heads), Matrix());
  cache.heads_out.resize(n, queries.cols());
  for (int h = 0; h < heads; ++h) {
    const auto qh = cache.q.middleCols(h * d, d);
    const auto kh = cache.k.middleCols(h * d, d);
    const Matrix logits = (qh * kh.transpose()) * scale;
    Matrix a = grouped_softmax(logits, n);
    cache.heads_out.middleCols(h * d, d) = a * cache.v.middleCols(h * d, d);
    cache.attention[static_cast<size_t>(h)] = std::move(a);
  }
  const Matrix attended = out_proj.forward(cache.heads_out);
  return norm.forward(queries + attended, cache.norm);
}

Matrix SelfAttention::backward(const Cache& cache, const Matrix& d_out, int heads, SelfAttention& grad,
                               Matrix& d_pos) const {
  const Eigen::Index n = cache.input.rows();
  const Eigen::Index d = cache.input.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const Matrix d_sum = norm.backward(cache.norm, d_out, grad.norm);
  Matrix d_queries = d_sum;
  const Matrix d_heads = out_proj.backward(cache.heads_out, d_sum, grad.out_proj);
  Matrix dq(n, cache.q.cols());
  Matrix dk(n, cache.k.cols());
  Matrix dv(n, cache.v.cols());
  for (int h = 0; h < heads; ++h) {
    const Matrix& a = cache.attention[static_cast<size_t>(h)];
    const Matrix dh = d_heads.middleCols(h * d, d);
    const Matrix da = dh * cache.v.middleCols(h * d, d).transpose();
    dv.middleCols(h * d, d) = a.transpose() * dh;
    const Matrix dlogits = grouped_softmax_backward(a, da, n) * scale;
    dq.middleCols(h * d, d) = dlogits * cache.k.middleCols(h * d, d);
    dk.middleCols(h * d, d) = dlogits.transpose() * cache.q.middleCols(h * d, d);
  }
  Matrix d_with_pos = q_proj.backward(cache.with_pos, dq, grad.q_proj);
  d_with_pos += k_proj.backward(cache.with_pos, dk, grad.k_proj);
  d_queries += v_proj.backward(cache.input, dv, grad.v_proj);
  d_queries += d_with_pos;
  d_pos += d_with_pos;
  return d_queries;
}

// ---------------------------------------------------------------- deformable attention

Matrix aggregate_samples(const Matrix& value, const PyramidLayout& layout, const Matrix& refs,
                         const SamplingField& field, const AttentionConfig& cfg) {
  const Eigen::Index n = refs.rows();
  const int d = cfg.head_dim();
  if (layout.num_levels() != cfg.levels) throw ValidationError("deformable attention: level count mismatch");
  if (field.offsets.rows() != n || field.weights.rows() != n)
    throw ValidationError("deformable attention: reference/query count mismatch");
  Matrix out = Matrix::Zero(n, value.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int h = 0; h < cfg.heads; ++h) {
      auto acc = out.row(i).segment(Eigen::Index{h} * d, d);
      for (int l = 0; l < cfg.levels; ++l) {
        const auto& lvl = layout.level(l);
        for (int p = 0; p < cfg.points; ++p) {
          const int k = cfg.slot(h, l, p);
          const double beta = field.weights(i, k);
          const BilinearTaps t = bilinear_taps(lvl.height, lvl.width, refs(i, 0) + field.offsets(i, 2 * k),
                                               refs(i, 1) + field.offsets(i, 2 * k + 1));
          for (size_t c = 0; c < 4; ++c) {
            if (!t.valid[c]) continue;
            acc.noalias() += (beta * t.weight[c]) * value.row(lvl.offset + t.index[c]).segment(Eigen::Index{h} * d, d);
          }
        }
      }
    }
  }
  return out;
}

DeformableAttention::DeformableAttention(const AttentionConfig& cfg)
    : value_proj(cfg.dim, cfg.dim),
      offset_proj(cfg.dim, 2 * cfg.slots()),
      weight_proj(cfg.dim, cfg.slots()),
      out_proj(cfg.dim, cfg.dim) {
  cfg.validate();
}

void DeformableAttention::init(Rng& rng, const AttentionConfig& cfg) {
  value_proj.init_uniform(rng);
  out_proj.init_uniform(rng);
  offset_proj.weight.data.setZero();
  const int k_total = cfg.slots();
  for (int k = 0; k < k_total; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / k_total;
    offset_proj.bias.data(0, 2 * k) = 0.01 * std::cos(angle);
    offset_proj.bias.data(0, 2 * k + 1) = 0.01 * std::sin(angle);
  }
  weight_proj.weight.data.setZero();
  weight_proj.bias.data.setZero();
}

void DeformableAttention::visit(const std::string& prefix, const ParamVisitor& f) {
  value_proj.visit(prefix + ".value_proj", ParamGroup::head, f);
  offset_proj.visit(prefix + ".offset_proj", ParamGroup::head, f);
  weight_proj.visit(prefix + ".weight_proj", ParamGroup::head, f);
  out_proj.visit(prefix + ".out_proj", ParamGroup::head, f);
}

SamplingField DeformableAttention::sampling_field(const Matrix& queries, const AttentionConfig& cfg) const {
  SamplingField field;
  field.offsets = offset_proj.forward(queries);
  field.weights = grouped_softmax(weight_proj.forward(queries), cfg.slots_per_head());
  return field;
}

Matrix DeformableAttention::forward(const Matrix& queries, const Matrix& refs, const MemoryFeature& memory,
                                    const AttentionConfig& cfg, Cache& cache) const {
  if (refs.rows() != queries.rows() || refs.cols() != 2)
    throw ValidationError("deformable attention: need one 2-D reference point per query (" +
                          std::to_string(refs.rows()) + " refs, " + std::to_string(queries.rows()) + " queries)");
  cache.queries = queries;
  cache.refs = refs;
  cache.value = value_proj.forward(memory.data);
  cache.field = sampling_field(queries, cfg);
  cache.aggregated = aggregate_samples(cache.value, memory.layout, refs, cache.field, cfg);
  return out_proj.forward(cache.aggregated);
}

DeformableAttention::InputGrads DeformableAttention::backward(const Cache& cache, const MemoryFeature& memory,
                                                              const Matrix& d_out, const AttentionConfig& cfg,
                                                              DeformableAttention& grad) const {
  const Eigen::Index n = cache.queries.rows();
  const int d = cfg.head_dim();
  const Matrix d_agg = out_proj.backward(cache.aggregated, d_out, grad.out_proj);
  Matrix d_value = Matrix::Zero(cache.value.rows(), cache.value.cols());
  Matrix d_weights = Matrix::Zero(n, cfg.slots());
  Matrix d_offsets = Matrix::Zero(n, 2 * cfg.slots());
  InputGrads g;
  g.refs = Matrix::Zero(n, 2);
  const auto& field = cache.field;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int h = 0; h < cfg.heads; ++h) {
      const auto dh = d_agg.row(i).segment(Eigen::Index{h} * d, d);
      for (int l = 0; l < cfg.levels; ++l) {
        const auto& lvl = memory.layout.level(l);
        for (int p = 0; p < cfg.points; ++p) {
          const int k = cfg.slot(h, l, p);
          const double beta = field.weights(i, k);
          const BilinearTaps t = bilinear_taps(lvl.height, lvl.width, cache.refs(i, 0) + field.offsets(i, 2 * k),
                                               cache.refs(i, 1) + field.offsets(i, 2 * k + 1));
          const std::array<double, 4> dw_dfx{-(1 - t.fy), 1 - t.fy, -t.fy, t.fy};
          const std::array<double, 4> dw_dfy{-(1 - t.fx), -t.fx, 1 - t.fx, t.fx};
          double d_beta = 0.0;
          double gx = 0.0;
          double gy = 0.0;
          for (size_t c = 0; c < 4; ++c) {
            if (!t.valid[c]) continue;
            const Eigen::Index row = lvl.offset + t.index[c];
            const double dot = dh.dot(cache.value.row(row).segment(Eigen::Index{h} * d, d));
            d_beta += t.weight[c] * dot;
            gx += dw_dfx[c] * dot;
            gy += dw_dfy[c] * dot;
            d_value.row(row).segment(Eigen::Index{h} * d, d).noalias() += (beta * t.weight[c]) * dh;
          }
          d_weights(i, k) = d_beta;
          const double du = beta * gx * lvl.width;
          const double dv = beta * gy * lvl.height;
          d_offsets(i, 2 * k) = du;
          d_offsets(i, 2 * k + 1) = dv;
          g.refs(i, 0) += du;
          g.refs(i, 1) += dv;
        }
      }
    }
  }
  const Matrix d_logits = grouped_softmax_backward(field.weights, d_weights, cfg.slots_per_head());
  g.queries = offset_proj.backward(cache.queries, d_offsets, grad.offset_proj);
  g.queries += weight_proj.backward(cache.queries, d_logits, grad.weight_proj);
  g.memory = value_proj.backward(memory.data, d_value, grad.value_proj);
  return g;
}

// ---------------------------------------------------------------- feed-forward

FeedForward::FeedForward(int dim, int hidden) : fc1(dim, hidden), fc2(hidden, dim) {}

void FeedForward::init(Rng& rng) {
  fc1.init_uniform(rng);
  fc2.init_uniform(rng);
}

void FeedForward::visit(const std::string& prefix, const ParamVisitor& f) {
  fc1.visit(prefix + ".fc1", ParamGroup::head, f);
  fc2.visit(prefix + ".fc2", ParamGroup::head, f);
}

Matrix FeedForward::forward(const Matrix& x, Cache& cache) const {
  cache.input = x;
  cache.hidden_pre = fc1.forward(x);
  cache.hidden = relu(cache.hidden_pre);
  return fc2.forward(cache.hidden);
}

Matrix FeedForward::backward(const Cache& cache, const Matrix& d_out, FeedForward& grad) const {
  const Matrix d_hidden = relu_backward(cache.hidden_pre, fc2.backward(cache.hidden, d_out, grad.fc2));
  return fc1.backward(cache.input, d_hidden, grad.fc1);
}

// ---------------------------------------------------------------- cross-attention block

CrossAttentionBlock::CrossAttentionBlock(const AttentionConfig& cfg, int ffn_hidden)
    : attn(cfg), norm1(cfg.dim), ffn(cfg.dim, ffn_hidden), norm2(cfg.dim) {}

void CrossAttentionBlock::init(Rng& rng, const AttentionConfig& cfg) {
  attn.init(rng, cfg);
  ffn.init(rng);
}

void CrossAttentionBlock::visit(const std::string& prefix, const ParamVisitor& f) {
  attn.visit(prefix + ".cross_attn", f);
  norm1.visit(prefix + ".norm1", ParamGroup::head, f);
  ffn.visit(prefix + ".ffn", f);
  norm2.visit(prefix + ".norm2", ParamGroup::head, f);
}

Matrix CrossAttentionBlock::forward(const Matrix& queries, const Matrix& refs, const MemoryFeature& memory,
                                    const AttentionConfig& cfg, Cache& cache) const {
  const Matrix a = attn.forward(queries, refs, memory, cfg, cache.attn);
  const Matrix z = norm1.forward(queries + a, cache.norm1);
  const Matrix f = ffn.forward(z, cache.ffn);
  return norm2.forward(z + f, cache.norm2);
}

DeformableAttention::InputGrads CrossAttentionBlock::backward(const Cache& cache, const MemoryFeature& memory,
                                                              const Matrix& d_out, const AttentionConfig& cfg,
                                                              CrossAttentionBlock& grad) const {
  const Matrix d_sum2 = norm2.backward(cache.norm2, d_out, grad.norm2);
  Matrix d_z = d_sum2 + ffn.backward(cache.ffn, d_sum2, grad.ffn);
  const Matrix d_sum1 = norm1.backward(cache.norm1, d_z, grad.norm1);
  auto g = attn.backward(cache.attn, memory, d_sum1, cfg, grad.attn);
  g.queries += d_sum1;
  return g;
}

}  // namespace dtld
