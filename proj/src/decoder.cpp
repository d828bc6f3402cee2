#include "dtld/decoder.hpp"

#include <cmath>

namespace dtld {

std::string to_string(DecoderMode mode) { return mode == DecoderMode::basic ? "basic" : "parallel"; }
std::string to_string(QueryInit init) { return init == QueryInit::learned ? "fc" : "random"; }

DecoderMode parse_decoder_mode(const std::string& s) {
  if (s == "basic") return DecoderMode::basic;
  if (s == "parallel") return DecoderMode::parallel;
  throw ValidationError("unknown decoder mode '" + s + "' (expected basic|parallel)");
}

QueryInit parse_query_init(const std::string& s) {
  if (s == "fc" || s == "learned") return QueryInit::learned;
  if (s == "random") return QueryInit::random;
  throw ValidationError("unknown query init '" + s + "' (expected fc|random)");
}

PyramidLayout ModelConfig::layout() const {
  const auto strides = backbone().strides();
  return PyramidLayout::from_image(image_size, image_size, strides);
}

void ModelConfig::validate() const {
  if (image_size <= 0 || image_size % 32 != 0)
    throw ValidationError("model.image_size must be a positive multiple of 32, got " + std::to_string(image_size));
  if (backbone_channels.empty()) throw ValidationError("model.backbone_channels must list at least one level");
  if (landmarks < 1) throw ValidationError("model.landmarks must be >= 1");
  if (layers < 0) throw ValidationError("model.layers must be >= 0");
  if (dim % 2 != 0) throw ValidationError("model.dim must be even");
  attention().validate();
}

// ---------------------------------------------------------------- offset predictor

OffsetPredictor::OffsetPredictor(int dim) : fc0(dim, dim), fc1(dim, dim), fc2(dim, 2) {}

void OffsetPredictor::init(Rng& rng) {
  fc0.init_uniform(rng);
  fc1.init_uniform(rng);
  fc2.weight.data.setZero();
  fc2.bias.data.setZero();
}

void OffsetPredictor::visit(const std::string& prefix, const ParamVisitor& f) {
  fc0.visit(prefix + ".fc0", ParamGroup::head, f);
  fc1.visit(prefix + ".fc1", ParamGroup::head, f);
  fc2.visit(prefix + ".fc2", ParamGroup::head, f);
}

Matrix OffsetPredictor::forward(const Matrix& x, Cache& cache) const {
  cache.input = x;
  cache.pre0 = fc0.forward(x);
  cache.h0 = relu(cache.pre0);
  cache.pre1 = fc1.forward(cache.h0);
  cache.h1 = relu(cache.pre1);
  return fc2.forward(cache.h1);
}

Matrix OffsetPredictor::backward(const Cache& cache, const Matrix& d_out, OffsetPredictor& grad) const {
  Matrix d = relu_backward(cache.pre1, fc2.backward(cache.h1, d_out, grad.fc2));
  d = relu_backward(cache.pre0, fc1.backward(cache.h0, d, grad.fc1));
  return fc0.backward(cache.input, d, grad.fc0);
}

// ---------------------------------------------------------------- parameters

void DecoderLayerParams::visit(const std::string& prefix, const ParamVisitor& f) {
  if (self_attn) self_attn->visit(prefix + ".self_attn", f);
  cross.visit(prefix, f);
  if (image_norm1) image_norm1->visit(prefix + ".image_norm1", ParamGroup::head, f);
  if (image_norm2) image_norm2->visit(prefix + ".image_norm2", ParamGroup::head, f);
  offset_head.visit(prefix + ".offset_head", f);
}

void ModelParams::visit(const ParamVisitor& f) {
  backbone.visit("backbone", f);
  input_proj.visit("input_proj", f);
  if (query_init) query_init->visit("query_init", ParamGroup::head, f);
  if (query_embed) f("query_embed", *query_embed, ParamGroup::head);
  landmark_init.visit("landmark_init", ParamGroup::head, f);
  f("query_pos", query_pos, ParamGroup::head);
  f("level_embed", level_embed, ParamGroup::head);
  for (size_t t = 0; t < layers.size(); ++t) layers[t].visit("decoder.layer" + std::to_string(t), f);
}

std::vector<ParamRef> ModelParams::refs() {
  std::vector<ParamRef> out;
  visit([&](const std::string& path, Tensor& t, ParamGroup g) { out.push_back({path, &t, g}); });
  return out;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams out = *this;
  out.set_zero();
  return out;
}

void ModelParams::set_zero() {
  visit([](const std::string&, Tensor& t, ParamGroup) { t.data.setZero(); });
}

void ModelParams::add_scaled(ModelParams& other, double scale) {
  auto mine = refs();
  auto theirs = other.refs();
  if (mine.size() != theirs.size()) throw ValidationError("add_scaled: parameter structures differ");
  for (size_t i = 0; i < mine.size(); ++i) mine[i].tensor->data += scale * theirs[i].tensor->data;
}

ModelParams build_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.backbone = Backbone(cfg.backbone());
  p.input_proj = LevelProjections(cfg.backbone_channels, cfg.dim);
  const PyramidLayout layout = cfg.layout();
  const auto& last = layout.level(layout.num_levels() - 1);
  if (cfg.query_init == QueryInit::learned)
    p.query_init = Linear(static_cast<int>(last.size()), cfg.landmarks);
  else
    p.query_embed = Tensor({cfg.landmarks, cfg.dim}, cfg.landmarks, cfg.dim);
  p.landmark_init = Linear(cfg.dim, 2);
  p.query_pos = Tensor({cfg.landmarks, cfg.dim}, cfg.landmarks, cfg.dim);
  p.level_embed = Tensor({cfg.num_levels(), cfg.dim}, cfg.num_levels(), cfg.dim);
  const AttentionConfig acfg = cfg.attention();
  for (int t = 0; t < cfg.layers; ++t) {
    DecoderLayerParams layer;
    if (cfg.self_attention) layer.self_attn = SelfAttention(cfg.dim);
    layer.cross = CrossAttentionBlock(acfg, cfg.hidden());
    if (cfg.mode == DecoderMode::parallel) {
      layer.image_norm1 = LayerNorm(cfg.dim);
      layer.image_norm2 = LayerNorm(cfg.dim);
    }
    layer.offset_head = OffsetPredictor(cfg.dim);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

void init_params(ModelParams& p, const ModelConfig& cfg, Rng& rng) {
  p.backbone.init(rng);
  p.input_proj.init(rng);
  std::normal_distribution<double> small(0.0, 0.1);
  if (p.query_init) p.query_init->init_uniform(rng);
  if (p.query_embed)
    for (Eigen::Index i = 0; i < p.query_embed->data.size(); ++i) p.query_embed->data.data()[i] = small(rng);
  p.landmark_init.init_uniform(rng);
  for (Eigen::Index i = 0; i < p.query_pos.data.size(); ++i) p.query_pos.data.data()[i] = small(rng);
  for (Eigen::Index i = 0; i < p.level_embed.data.size(); ++i) p.level_embed.data.data()[i] = small(rng);
  const AttentionConfig acfg = cfg.attention();
  for (auto& layer : p.layers) {
    if (layer.self_attn) layer.self_attn->init(rng);
    layer.cross.init(rng, acfg);
    layer.offset_head.init(rng);
  }
}

ParameterCount count_parameters(ModelParams& params) {
  ParameterCount out;
  params.visit([&](const std::string& path, Tensor& t, ParamGroup) {
    out.per_path.emplace_back(path, t.numel());
    out.total += t.numel();
  });
  return out;
}

// ---------------------------------------------------------------- query init and refinement

Matrix init_query(const MemoryFeature& memory, const Linear& projection) {
  if (memory.layout.num_levels() == 0) throw ValidationError("init_query: memory has no levels");
  const auto& last = memory.layout.level(memory.layout.num_levels() - 1);
  if (last.size() != projection.in_features())
    throw ValidationError("init_query: last level has " + std::to_string(last.size()) +
                          " positions but the projection expects " + std::to_string(projection.in_features()));
  Matrix q0 = projection.weight.data * memory.data.middleRows(last.offset, last.size());
  q0.colwise() += projection.bias.data.row(0).transpose();
  return q0;
}

LandmarkSet init_landmarks(const Matrix& q0, const Linear& projection) {
  Matrix y = projection.forward(q0);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = sigmoid(y.data()[i]);
  return LandmarkSet(std::move(y));
}

LandmarkSet refine(const Matrix& offsets, const LandmarkSet& refs, double eps) {
  if (offsets.rows() != refs.size() || offsets.cols() != 2) throw ValidationError("refine: shape mismatch");
  Matrix y(offsets.rows(), 2);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double r = std::clamp(refs.coords.data()[i], eps, 1.0 - eps);
    const double a = offsets.data()[i];
    if (a > 30.0) {
      y.data()[i] = sigmoid(a + inverse_sigmoid(r, eps));
    } else {
      // sigmoid(a + logit(r)) rewritten as r + r(1-r)m/(1+rm), m = e^a - 1.
      const double m = std::expm1(a);
      y.data()[i] = r + r * (1.0 - r) * m / (1.0 + r * m);
    }
  }
  return LandmarkSet(std::move(y));
}

Matrix refine_backward(const LandmarkSet& refs, const LandmarkSet& out, const Matrix& d_out, Matrix& d_refs,
                       double eps) {
  Matrix d_offsets(d_out.rows(), 2);
  d_refs.resize(d_out.rows(), 2);
  for (Eigen::Index i = 0; i < d_out.size(); ++i) {
    const double y = out.coords.data()[i];
    const double g = d_out.data()[i] * y * (1.0 - y);
    d_offsets.data()[i] = g;
    const double r = refs.coords.data()[i];
    d_refs.data()[i] = (r > eps && r < 1.0 - eps) ? g / (r * (1.0 - r)) : 0.0;
  }
  return d_offsets;
}

PositionBuffers make_position_buffers(const PyramidLayout& layout, int dim) {
  return {build_pixel_positions(layout, dim), pixel_centers(layout), layout.row_levels()};
}

// ---------------------------------------------------------------- decoder layers

namespace {

Matrix self_attention_stage(const Matrix& q, const DecoderLayerParams& layer, const Tensor& query_pos,
                            const ModelConfig& cfg, LayerCache* cache) {
  if (!layer.self_attn) return q;
  SelfAttention::Cache local;
  return layer.self_attn->forward(q, query_pos.data, cfg.heads, cache ? cache->self_attn : local);
}

DecoderState finish_layer(const DecoderState& state, const DecoderLayerParams& layer, Matrix q_d,
                          MemoryFeature memory, LayerCache* cache) {
  OffsetPredictor::Cache local;
  Matrix offsets = layer.offset_head.forward(q_d, cache ? cache->head : local);
  DecoderState next;
  next.refs = refine(offsets, state.refs);
  next.queries = std::move(q_d);
  next.memory = std::move(memory);
  next.outputs = state.outputs;
  next.outputs.push_back(next.refs);
  if (cache) {
    cache->queries_d = next.queries;
    cache->offsets = std::move(offsets);
    cache->output = next.refs;
  }
  return next;
}

}  // namespace

DecoderState basic_layer(const DecoderState& state, const DecoderLayerParams& layer, const Tensor& query_pos,
                         const ModelConfig& cfg, LayerCache* cache) {
  if (cache) {
    cache->queries_in = state.queries;
    cache->refs = state.refs;
    cache->memory_in = state.memory;
  }
  const Matrix q_s = self_attention_stage(state.queries, layer, query_pos, cfg, cache);
  CrossAttentionBlock::Cache local;
  Matrix q_d = layer.cross.forward(q_s, state.refs.coords, state.memory, cfg.attention(), cache ? cache->cross : local);
  if (cache) cache->queries_s = q_s;
  return finish_layer(state, layer, std::move(q_d), state.memory, cache);
}

DecoderState parallel_layer(const DecoderState& state, const DecoderLayerParams& layer, const Tensor& query_pos,
                            const Tensor& level_embed, const PositionBuffers& buffers, const ModelConfig& cfg,
                            LayerCache* cache) {
  if (!layer.image_norm1 || !layer.image_norm2) throw ValidationError("parallel layer needs image normalizations");
  LayerCache local;
  LayerCache& c = cache ? *cache : local;
  c.queries_in = state.queries;
  c.refs = state.refs;
  c.memory_in = state.memory;

  const Matrix& mem = state.memory.data;
  const Eigen::Index m = mem.rows();
  const Eigen::Index n = state.queries.rows();
  const Matrix q_s = self_attention_stage(state.queries, layer, query_pos, cfg, &c);
  c.queries_s = q_s;

  // Joint query set: embedded memory rows followed by landmark queries.
  Matrix joint(m + n, mem.cols());
  joint.topRows(m) = mem + buffers.pixel_pos;
  for (Eigen::Index r = 0; r < m; ++r) joint.row(r) += level_embed.data.row(buffers.row_level[static_cast<size_t>(r)]);
  joint.bottomRows(n) = q_s;
  Matrix joint_refs(m + n, 2);
  joint_refs.topRows(m) = buffers.pixel_centers;
  joint_refs.bottomRows(n) = state.refs.coords;

  const Matrix a = layer.cross.attn.forward(joint, joint_refs, state.memory, cfg.attention(), c.joint_attn);
  Matrix z(m + n, mem.cols());
  z.topRows(m) = layer.image_norm1->forward(mem + a.topRows(m), c.image_norm1);
  z.bottomRows(n) = layer.cross.norm1.forward(q_s + a.bottomRows(n), c.query_norm1);
  const Matrix f = layer.cross.ffn.forward(z, c.joint_ffn);
  MemoryFeature next_memory;
  next_memory.layout = state.memory.layout;
  if (cfg.update_memory)
    next_memory.data = layer.image_norm2->forward(z.topRows(m) + f.topRows(m), c.image_norm2);
  else
    next_memory.data = mem;
  Matrix q_d = layer.cross.norm2.forward(z.bottomRows(n) + f.bottomRows(n), c.query_norm2);
  return finish_layer(state, layer, std::move(q_d), std::move(next_memory), cache);
}

// ---------------------------------------------------------------- model

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)), params_(build_params(cfg_)) {
  Rng rng(cfg_.seed);
  init_params(params_, cfg_, rng);
  layout_ = cfg_.layout();
  buffers_ = make_position_buffers(layout_, cfg_.dim);
}

Model::Model(ModelConfig cfg, ModelParams params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  layout_ = cfg_.layout();
  buffers_ = make_position_buffers(layout_, cfg_.dim);
}

std::vector<LandmarkSet> Model::forward(const Image& image, ForwardCache* cache) const {
  if (image.height != cfg_.image_size || image.width != cfg_.image_size)
    throw ValidationError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                          " but the model expects " + std::to_string(cfg_.image_size) + "x" +
                          std::to_string(cfg_.image_size));
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.pyramid = params_.backbone.forward(image, c.backbone);
  c.memory0 = project_and_flatten(c.pyramid, params_.input_proj, image.height, image.width);
  c.q0 = params_.query_init ? init_query(c.memory0, *params_.query_init) : params_.query_embed->data;

  DecoderState state;
  state.queries = c.q0;
  state.memory = c.memory0;
  state.refs = init_landmarks(c.q0, params_.landmark_init);
  state.outputs.push_back(state.refs);

  c.layers.assign(params_.layers.size(), LayerCache{});
  for (size_t t = 0; t < params_.layers.size(); ++t) {
    LayerCache* lc = cache ? &c.layers[t] : nullptr;
    if (cfg_.mode == DecoderMode::basic)
      state = basic_layer(state, params_.layers[t], params_.query_pos, cfg_, lc);
    else
      state = parallel_layer(state, params_.layers[t], params_.query_pos, params_.level_embed, buffers_, cfg_, lc);
  }
  return std::move(state.outputs);
}

void Model::backward(const ForwardCache& cache, const std::vector<Matrix>& d_outputs, ModelParams& grads) const {
  const size_t num_layers = params_.layers.size();
  if (d_outputs.size() != num_layers + 1) throw ValidationError("backward: need one gradient per output");
  const AttentionConfig acfg = cfg_.attention();
  const Eigen::Index n = cache.q0.rows();
  const Eigen::Index m = cache.memory0.data.rows();

  Matrix d_y = d_outputs[num_layers];        // dL/dY_t, complete when layer t is processed
  Matrix d_q = Matrix::Zero(n, cfg_.dim);     // dL/d(queries leaving layer t)
  Matrix d_mem = Matrix::Zero(m, cfg_.dim);   // dL/d(memory leaving layer t)

  for (size_t t = num_layers; t-- > 0;) {
    const auto& layer = params_.layers[t];
    auto& g = grads.layers[t];
    const LayerCache& c = cache.layers[t];

    Matrix d_refs;
    const Matrix d_offsets = refine_backward(c.refs, c.output, d_y, d_refs);
    Matrix d_qd = d_q + layer.offset_head.backward(c.head, d_offsets, g.offset_head);

    Matrix d_qs;
    if (cfg_.mode == DecoderMode::basic) {
      auto ig = layer.cross.backward(c.cross, c.memory_in, d_qd, acfg, g.cross);
      d_qs = std::move(ig.queries);
      d_refs += ig.refs;
      d_mem += ig.memory;
    } else {
      Matrix d_z(m + n, cfg_.dim);
      Matrix d_img_out = cfg_.update_memory ? d_mem : Matrix::Zero(m, cfg_.dim);
      Matrix d_mem_in = cfg_.update_memory ? Matrix::Zero(m, cfg_.dim) : d_mem;
      Matrix d_sum2(m + n, cfg_.dim);
      d_sum2.bottomRows(n) = layer.cross.norm2.backward(c.query_norm2, d_qd, g.cross.norm2);
      if (cfg_.update_memory)
        d_sum2.topRows(m) = layer.image_norm2->backward(c.image_norm2, d_img_out, *g.image_norm2);
      else
        d_sum2.topRows(m).setZero();
      d_z = d_sum2 + layer.cross.ffn.backward(c.joint_ffn, d_sum2, g.cross.ffn);
      Matrix d_a(m + n, cfg_.dim);
      d_a.topRows(m) = layer.image_norm1->backward(c.image_norm1, d_z.topRows(m), *g.image_norm1);
      d_a.bottomRows(n) = layer.cross.norm1.backward(c.query_norm1, d_z.bottomRows(n), g.cross.norm1);
      auto ig = layer.cross.attn.backward(c.joint_attn, c.memory_in, d_a, acfg, g.cross.attn);
      d_mem_in += d_a.topRows(m) + ig.queries.topRows(m) + ig.memory;
      for (Eigen::Index r = 0; r < m; ++r)
        grads.level_embed.data.row(buffers_.row_level[static_cast<size_t>(r)]) += ig.queries.row(r);
      d_qs = d_a.bottomRows(n) + ig.queries.bottomRows(n);
      d_refs += ig.refs.bottomRows(n);
      d_mem = std::move(d_mem_in);
    }

    if (layer.self_attn)
      d_q = layer.self_attn->backward(c.self_attn, d_qs, cfg_.heads, *g.self_attn, grads.query_pos.data);
    else
      d_q = std::move(d_qs);

    d_y = d_outputs[t] + d_refs;
  }

  // Y_0 = sigmoid(Q_0 W^T + b)
  const LandmarkSet y0 = init_landmarks(cache.q0, params_.landmark_init);
  Matrix d_logits = d_y.array() * y0.coords.array() * (1.0 - y0.coords.array());
  d_q += params_.landmark_init.backward(cache.q0, d_logits, grads.landmark_init);

  if (params_.query_init) {
    const auto& last = cache.memory0.layout.level(cache.memory0.layout.num_levels() - 1);
    const auto& w = params_.query_init->weight.data;
    grads.query_init->weight.data.noalias() += d_q * cache.memory0.data.middleRows(last.offset, last.size()).transpose();
    grads.query_init->bias.data.row(0) += d_q.rowwise().sum().transpose();
    d_mem.middleRows(last.offset, last.size()).noalias() += w.transpose() * d_q;
  } else {
    grads.query_embed->data += d_q;
  }

  const FeaturePyramid d_pyr =
      project_and_flatten_backward(cache.pyramid, params_.input_proj, cache.memory0, d_mem, grads.input_proj);
  params_.backbone.backward(cache.backbone, d_pyr, grads.backbone);
}

}  // namespace dtld
