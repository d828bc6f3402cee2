#include "dtld/decoder.hpp"
#include "dtld/gradcheck.hpp"

#include "../oracles/reference.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

namespace dtld {
namespace {

using testing::random_matrix;

Image random_image(std::mt19937_64& rng, int side) {
  Image img(side, side);
  img.pixels = random_matrix(rng, Eigen::Index{side} * side, 3, 0.0, 1.0);
  return img;
}

double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

Model perturbed_model(const ModelConfig& cfg, uint64_t seed, double scale = 0.05) {
  Model model(cfg);
  Rng rng(seed);
  perturb_params(model.params(), rng, scale);
  return model;
}

/// Scalar replay of the whole forward pass after the memory is built.
std::vector<Matrix> oracle_forward(const Model& model, const Image& image) {
  const ModelConfig& cfg = model.config();
  const ModelParams& p = model.params();
  Backbone::Cache bc;
  const MemoryFeature mem0 = project_and_flatten(p.backbone.forward(image, bc), p.input_proj, image.height, image.width);

  Matrix q;
  if (p.query_init) {
    const auto& last = mem0.layout.level(mem0.layout.num_levels() - 1);
    const auto& w = p.query_init->weight.data;
    q.resize(cfg.landmarks, cfg.dim);
    for (int n = 0; n < cfg.landmarks; ++n)
      for (int c = 0; c < cfg.dim; ++c) {
        double s = p.query_init->bias.data(0, n);
        for (Eigen::Index k = 0; k < last.size(); ++k) s += w(n, k) * mem0.data(last.offset + k, c);
        q(n, c) = s;
      }
  } else {
    q = p.query_embed->data;
  }
  Matrix y = oracle::linear(p.landmark_init, q);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = oracle::logistic(y.data()[i]);
  std::vector<Matrix> outs{y};

  MemoryFeature mem = mem0;
  const AttentionConfig acfg = cfg.attention();
  for (const auto& layer : p.layers) {
    const Matrix qs = layer.self_attn ? oracle::self_attention(*layer.self_attn, q, p.query_pos.data, cfg.heads) : q;
    Matrix qd;
    if (cfg.mode == DecoderMode::basic) {
      const Matrix z = oracle::layer_norm(layer.cross.norm1, qs + oracle::deformable(layer.cross.attn, qs, y, mem, acfg));
      qd = oracle::layer_norm(layer.cross.norm2, z + oracle::ffn(layer.cross.ffn, z));
    } else {
      const Eigen::Index m = mem.data.rows(), n = qs.rows();
      const Matrix pos = build_pixel_positions(mem.layout, cfg.dim);
      const Matrix centers = pixel_centers(mem.layout);
      const auto levels = mem.layout.row_levels();
      Matrix joint(m + n, cfg.dim), joint_refs(m + n, 2);
      for (Eigen::Index r = 0; r < m; ++r) {
        joint.row(r) = mem.data.row(r) + pos.row(r) + p.level_embed.data.row(levels[static_cast<size_t>(r)]);
        joint_refs.row(r) = centers.row(r);
      }
      joint.bottomRows(n) = qs;
      joint_refs.bottomRows(n) = y;
      const Matrix a = oracle::deformable(layer.cross.attn, joint, joint_refs, mem, acfg);
      const Matrix zi = oracle::layer_norm(*layer.image_norm1, mem.data + a.topRows(m));
      const Matrix zq = oracle::layer_norm(layer.cross.norm1, qs + a.bottomRows(n));
      if (cfg.update_memory) mem.data = oracle::layer_norm(*layer.image_norm2, zi + oracle::ffn(layer.cross.ffn, zi));
      qd = oracle::layer_norm(layer.cross.norm2, zq + oracle::ffn(layer.cross.ffn, zq));
    }
    y = oracle::refine(oracle::offset_head(layer.offset_head, qd), y);
    q = qd;
    outs.push_back(y);
  }
  return outs;
}

TEST(InitQuery, AveragingRowGivesColumnMeans) {
  std::mt19937_64 rng(1);
  const std::array<int, 2> strides{4, 8};
  MemoryFeature mem{random_matrix(rng, 64 + 16, 6), PyramidLayout::from_image(32, 32, strides)};
  Linear proj(16, 3);
  proj.weight.data.setZero();
  proj.bias.data.setZero();
  proj.weight.data.row(1).setConstant(1.0 / 16);
  const Matrix q0 = init_query(mem, proj);
  ASSERT_EQ(q0.rows(), 3);
  ASSERT_EQ(q0.cols(), 6);
  EXPECT_EQ(q0.row(0).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LT(max_abs_diff(q0.row(1), mem.data.bottomRows(16).colwise().mean()), 1e-15);
}

TEST(InitQuery, ConstantLastLevelGivesConstantColumns) {
  const std::array<int, 2> strides{4, 8};
  MemoryFeature mem{Matrix::Zero(80, 4), PyramidLayout::from_image(32, 32, strides)};
  mem.data.bottomRows(16).rowwise() = RowVector::LinSpaced(4, 1.0, 4.0);
  std::mt19937_64 rng(2);
  Linear proj(16, 5);
  proj.init_uniform(rng);
  const Matrix q0 = init_query(mem, proj);
  for (int n = 0; n < 5; ++n) {
    const double rowsum = proj.weight.data.row(n).sum();
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(q0(n, c), rowsum * (c + 1) + proj.bias.data(0, n), 1e-13);
  }
}

TEST(InitQuery, DefaultShapeIs68ByC) {
  ModelConfig cfg;
  cfg.dim = 32;
  cfg.heads = 4;
  cfg.layers = 0;
  Model model(cfg);
  ForwardCache cache;
  std::mt19937_64 rng(3);
  (void)model.forward(random_image(rng, 256), &cache);
  EXPECT_EQ(cache.q0.rows(), 68);
  EXPECT_EQ(cache.q0.cols(), 32);
  EXPECT_EQ(model.params().query_init->weight.data.cols(), 64);  // 8 x 8 last level
}

TEST(InitQuery, MismatchedProjectionRejected) {
  const std::array<int, 1> strides{4};
  MemoryFeature mem{Matrix::Zero(64, 4), PyramidLayout::from_image(32, 32, strides)};
  EXPECT_THROW((void)init_query(mem, Linear(10, 2)), ValidationError);
}

TEST(InitLandmarks, ZeroWeightsGiveCenter) {
  Linear proj(8, 2);
  proj.weight.data.setZero();
  proj.bias.data.setZero();
  std::mt19937_64 rng(4);
  const LandmarkSet y = init_landmarks(random_matrix(rng, 5, 8, -10, 10), proj);
  EXPECT_EQ(y.coords, Matrix::Constant(5, 2, 0.5));
}

TEST(InitLandmarks, InsideUnitSquareAndMatchesOracle) {
  std::mt19937_64 rng(5);
  Linear proj(8, 2);
  proj.weight.data = random_matrix(rng, 2, 8, -3, 3);
  proj.bias.data = random_matrix(rng, 1, 2);
  const Matrix q = random_matrix(rng, 7, 8, -2, 2);
  const LandmarkSet y = init_landmarks(q, proj);
  EXPECT_GT(y.coords.minCoeff(), 0.0);
  EXPECT_LT(y.coords.maxCoeff(), 1.0);
  Matrix ref = oracle::linear(proj, q);
  for (Eigen::Index i = 0; i < ref.size(); ++i) ref.data()[i] = oracle::logistic(ref.data()[i]);
  EXPECT_LT(max_abs_diff(y.coords, ref), 1e-12);
}

TEST(Refine, ZeroOffsetIsIdentity) {
  std::mt19937_64 rng(6);
  const LandmarkSet refs(random_matrix(rng, 20, 2, 0.001, 0.999));
  EXPECT_EQ(refine(Matrix::Zero(20, 2), refs).coords, refs.coords);
}

TEST(Refine, HalfShiftedByOne) {
  // sigmoid(1)
  Matrix r(1, 2);
  r << 0.5, 0.5;
  const LandmarkSet y = refine(Matrix::Ones(1, 2), LandmarkSet(r));
  EXPECT_NEAR(y.x(0), 0.731058578630004879, 1e-15);
  EXPECT_NEAR(y.y(0), 0.731058578630004879, 1e-15);
}

TEST(Refine, MonotoneInOffsetAndMatchesOracle) {
  std::mt19937_64 rng(7);
  const LandmarkSet refs(random_matrix(rng, 10, 2, 0.01, 0.99));
  Matrix prev = refine(Matrix::Constant(10, 2, -5.0), refs).coords;
  for (double a = -4.9; a <= 5.0; a += 0.1) {
    const Matrix off = Matrix::Constant(10, 2, a);
    const Matrix cur = refine(off, refs).coords;
    EXPECT_TRUE((cur.array() > prev.array()).all()) << a;
    EXPECT_LT(max_abs_diff(cur, oracle::refine(off, refs.coords)), 1e-14);
    prev = cur;
  }
}

TEST(Refine, LargeOffsetsStayInRange) {
  Matrix r(1, 2);
  r << 0.2, 0.8;
  Matrix off(1, 2);
  off << 800.0, -800.0;
  const LandmarkSet y = refine(off, LandmarkSet(r));
  EXPECT_EQ(y.x(0), 1.0);
  EXPECT_EQ(y.y(0), 0.0);
}

TEST(Refine, ShapeMismatchRejected) {
  EXPECT_THROW((void)refine(Matrix::Zero(3, 2), LandmarkSet::zeros(4)), ValidationError);
}

TEST(BasicLayer, FreshLayerKeepsReferencePoints) {
  const ModelConfig cfg = tiny_config(DecoderMode::basic);
  Model model(cfg);
  std::mt19937_64 rng(8);
  DecoderState s;
  s.queries = random_matrix(rng, cfg.landmarks, cfg.dim);
  s.memory = MemoryFeature{random_matrix(rng, model.layout().total_len(), cfg.dim), model.layout()};
  s.refs = LandmarkSet(random_matrix(rng, cfg.landmarks, 2, 0.1, 0.9));
  s.outputs = {s.refs};
  const DecoderState next = basic_layer(s, model.params().layers[0], model.params().query_pos, cfg);
  EXPECT_EQ(next.refs.coords, s.refs.coords);
  ASSERT_EQ(next.outputs.size(), 2u);
  EXPECT_EQ(next.outputs.back().coords, s.refs.coords);
  EXPECT_EQ(next.memory.data, s.memory.data);
}

TEST(BasicLayer, MatchesScalarOracle) {
  const ModelConfig cfg = tiny_config(DecoderMode::basic);
  Model model = perturbed_model(cfg, 9, 0.2);
  std::mt19937_64 rng(9);
  DecoderState s;
  s.queries = random_matrix(rng, cfg.landmarks, cfg.dim);
  s.memory = MemoryFeature{random_matrix(rng, model.layout().total_len(), cfg.dim), model.layout()};
  s.refs = LandmarkSet(random_matrix(rng, cfg.landmarks, 2, 0.1, 0.9));
  const auto& layer = model.params().layers[0];
  const DecoderState next = basic_layer(s, layer, model.params().query_pos, cfg);

  const Matrix qs = oracle::self_attention(*layer.self_attn, s.queries, model.params().query_pos.data, cfg.heads);
  const Matrix z =
      oracle::layer_norm(layer.cross.norm1, qs + oracle::deformable(layer.cross.attn, qs, s.refs.coords, s.memory,
                                                                    cfg.attention()));
  const Matrix qd = oracle::layer_norm(layer.cross.norm2, z + oracle::ffn(layer.cross.ffn, z));
  EXPECT_LT(max_abs_diff(next.queries, qd), 1e-12);
  EXPECT_LT(max_abs_diff(next.refs.coords, oracle::refine(oracle::offset_head(layer.offset_head, qd), s.refs.coords)),
            1e-12);
}

TEST(ParallelLayer, ExtraParametersAreFourCPerLayer) {
  for (int dim : {16, 256}) {
    ModelConfig basic;
    basic.image_size = 64;
    basic.dim = dim;
    basic.heads = 8;
    basic.layers = 3;
    ModelConfig parallel = basic;
    parallel.mode = DecoderMode::parallel;
    ModelParams pb = build_params(basic), pp = build_params(parallel);
    EXPECT_EQ(count_parameters(pp).total - count_parameters(pb).total, 3 * 4 * dim);
  }
}

TEST(ParallelLayer, FrozenMemoryReproducesBasicTrajectory) {
  ModelConfig pcfg = tiny_config(DecoderMode::parallel);
  pcfg.update_memory = false;
  Model parallel = perturbed_model(pcfg, 10, 0.2);
  ModelParams shared = parallel.params();
  for (auto& layer : shared.layers) {
    layer.image_norm1.reset();
    layer.image_norm2.reset();
  }
  ModelConfig bcfg = pcfg;
  bcfg.mode = DecoderMode::basic;
  const Model basic(bcfg, shared);
  std::mt19937_64 rng(10);
  const Image img = random_image(rng, pcfg.image_size);
  const auto a = parallel.forward(img);
  const auto b = basic.forward(img);
  ASSERT_EQ(a.size(), b.size());
  for (size_t t = 0; t < a.size(); ++t) EXPECT_LT(max_abs_diff(a[t].coords, b[t].coords), 1e-12) << t;
}

TEST(ParallelLayer, UpdatesMemory) {
  const ModelConfig cfg = tiny_config(DecoderMode::parallel);
  Model model = perturbed_model(cfg, 11);
  std::mt19937_64 rng(11);
  DecoderState s;
  s.queries = random_matrix(rng, cfg.landmarks, cfg.dim);
  s.memory = MemoryFeature{random_matrix(rng, model.layout().total_len(), cfg.dim), model.layout()};
  s.refs = LandmarkSet(random_matrix(rng, cfg.landmarks, 2, 0.1, 0.9));
  const DecoderState next = parallel_layer(s, model.params().layers[0], model.params().query_pos,
                                           model.params().level_embed, model.buffers(), cfg);
  EXPECT_EQ(next.memory.data.rows(), s.memory.data.rows());
  EXPECT_GT(max_abs_diff(next.memory.data, s.memory.data), 1e-3);
}

TEST(ParallelLayer, MissingImageNormsRejected) {
  const ModelConfig cfg = tiny_config(DecoderMode::basic);
  Model model(cfg);
  DecoderState s;
  s.queries = Matrix::Zero(cfg.landmarks, cfg.dim);
  s.memory = MemoryFeature{Matrix::Zero(model.layout().total_len(), cfg.dim), model.layout()};
  s.refs = LandmarkSet(Matrix::Constant(cfg.landmarks, 2, 0.5));
  EXPECT_THROW((void)parallel_layer(s, model.params().layers[0], model.params().query_pos, model.params().level_embed,
                                    model.buffers(), cfg),
               ValidationError);
}

TEST(Model, DefaultForwardReturnsFourSets) {
  ModelConfig cfg;
  cfg.dim = 32;
  cfg.heads = 4;
  Model model(cfg);
  std::mt19937_64 rng(12);
  const auto out = model.forward(random_image(rng, 256));
  ASSERT_EQ(out.size(), 4u);
  for (const auto& y : out) {
    EXPECT_EQ(y.size(), 68);
    EXPECT_GT(y.coords.minCoeff(), 0.0);
    EXPECT_LT(y.coords.maxCoeff(), 1.0);
  }
}

TEST(Model, WrongImageSizeRejected) {
  Model model(tiny_config(DecoderMode::basic));
  EXPECT_THROW((void)model.forward(Image(64, 64)), ValidationError);
}

TEST(Model, ForwardIsDeterministic) {
  const ModelConfig cfg = tiny_config(DecoderMode::parallel);
  const Model a(cfg), b(cfg);
  std::mt19937_64 rng(13);
  const Image img = random_image(rng, cfg.image_size);
  const auto ya = a.forward(img), yb = b.forward(img);
  for (size_t t = 0; t < ya.size(); ++t) EXPECT_EQ(ya[t].coords, yb[t].coords);
}

TEST(Model, FreshCascadeOutputsAreIdentical) {
  for (auto mode : {DecoderMode::basic, DecoderMode::parallel}) {
    const Model model(tiny_config(mode));
    std::mt19937_64 rng(14);
    const auto out = model.forward(random_image(rng, 32));
    for (size_t t = 1; t < out.size(); ++t) EXPECT_EQ(out[t].coords, out[0].coords) << to_string(mode) << t;
  }
}

TEST(Model, RandomQueriesMakeY0ImageIndependent) {
  ModelConfig cfg = tiny_config(DecoderMode::basic);
  cfg.query_init = QueryInit::random;
  const Model model = perturbed_model(cfg, 15);
  std::mt19937_64 rng(15);
  const auto a = model.forward(random_image(rng, 32));
  const auto b = model.forward(random_image(rng, 32));
  EXPECT_EQ(a[0].coords, b[0].coords);
  EXPECT_GT(max_abs_diff(a.back().coords, b.back().coords), 0.0);
}

TEST(Model, LearnedQueriesMakeY0ImageDependent) {
  const Model model = perturbed_model(tiny_config(DecoderMode::basic), 16);
  std::mt19937_64 rng(16);
  const auto a = model.forward(random_image(rng, 32));
  const auto b = model.forward(random_image(rng, 32));
  EXPECT_GT(max_abs_diff(a[0].coords, b[0].coords), 0.0);
}

TEST(Model, MatchesScalarOracle) {
  for (auto mode : {DecoderMode::basic, DecoderMode::parallel}) {
    const Model model = perturbed_model(tiny_config(mode), 17, 0.2);
    std::mt19937_64 rng(17);
    const Image img = random_image(rng, 32);
    const auto out = model.forward(img);
    const auto ref = oracle_forward(model, img);
    ASSERT_EQ(out.size(), ref.size());
    for (size_t t = 0; t < out.size(); ++t)
      EXPECT_LT(max_abs_diff(out[t].coords, ref[t]), 1e-10) << to_string(mode) << " Y" << t;
  }
}

TEST(Model, CascadeKeepsFirstOutputsFixed) {
  // The first t+1 outputs of a deeper model equal those of its truncation.
  ModelConfig deep = tiny_config(DecoderMode::parallel);
  deep.layers = 3;
  const Model full = perturbed_model(deep, 18);
  ModelParams head = full.params();
  head.layers.pop_back();
  ModelConfig shallow = deep;
  shallow.layers = 2;
  const Model truncated(shallow, head);
  std::mt19937_64 rng(18);
  const Image img = random_image(rng, 32);
  const auto a = full.forward(img), b = truncated.forward(img);
  ASSERT_EQ(b.size(), 3u);
  for (size_t t = 0; t < b.size(); ++t) EXPECT_EQ(a[t].coords, b[t].coords);
}

TEST(Model, RandomQueryModeCountsNByC) {
  ModelConfig cfg = tiny_config(DecoderMode::basic);
  cfg.query_init = QueryInit::random;
  ModelParams p = build_params(cfg);
  const auto count = count_parameters(p);
  bool found = false;
  for (const auto& [path, n] : count.per_path)
    if (path == "query_embed") {
      found = true;
      EXPECT_EQ(n, int64_t{cfg.landmarks} * cfg.dim);
    }
  EXPECT_TRUE(found);
  int64_t sum = 0;
  for (const auto& entry : count.per_path) sum += entry.second;
  EXPECT_EQ(sum, count.total);
}

TEST(Model, GradientsMatchFiniteDifferences) {
  SyntheticFaceSpec spec;
  const Dataset batch = gen_synthetic(spec, 2, 19);
  for (auto mode : {DecoderMode::basic, DecoderMode::parallel}) {
    Model model = perturbed_model(tiny_config(mode), 19);
    GradCheckOptions opts;
    opts.samples_per_path = 4;
    const auto report = grad_check_model(model, batch, opts);
    EXPECT_TRUE(report.passed()) << to_string(mode) << " max error " << report.max_error();
  }
}

}  // namespace
}  // namespace dtld
