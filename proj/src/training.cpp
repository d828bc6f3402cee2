#include "dtld/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dtld {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("train.lr must be a finite non-negative number");
  if (!(lr_backbone_scale >= 0.0)) throw ValidationError("train.lr_backbone_scale must be non-negative");
  if (epochs < 0) throw ValidationError("train.epochs must be >= 0");
  if (lr_drop_epoch < 0 || lr_drop_epoch > epochs)
    throw ValidationError("train.lr_drop_epoch must lie in [0, epochs]");
  if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ValidationError("train: Adam betas must lie in [0,1)");
}

double deep_supervision_loss(const std::vector<LandmarkSet>& outputs, const LandmarkSet& gt,
                             std::vector<Matrix>* d_outputs, double scale) {
  if (d_outputs) d_outputs->assign(outputs.size(), Matrix());
  double loss = 0.0;
  for (size_t t = 0; t < outputs.size(); ++t) {
    const auto& y = outputs[t].coords;
    if (y.rows() != gt.coords.rows() || y.cols() != gt.coords.cols())
      throw ValidationError("loss: output " + std::to_string(t) + " shape does not match ground truth");
    const Matrix diff = y - gt.coords;
    loss += diff.cwiseAbs().sum();
    if (d_outputs) (*d_outputs)[t] = scale * diff.unaryExpr([](double v) { return double((v > 0) - (v < 0)); });
  }
  return loss;
}

double batch_loss_and_grad(const Model& model, std::span<const Sample* const> batch, ModelParams& grads) {
  if (batch.empty()) throw ValidationError("empty batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const Sample* s : batch) {
    ForwardCache cache;
    const auto outputs = model.forward(s->image, &cache);
    std::vector<Matrix> d_outputs;
    total += deep_supervision_loss(outputs, s->landmarks, &d_outputs, scale);
    model.backward(cache, d_outputs, grads);
  }
  return total * scale;
}

Adam::Adam(ModelParams& params, double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& r : params.refs()) {
    m_.push_back(Matrix::Zero(r.tensor->data.rows(), r.tensor->data.cols()));
    v_.push_back(Matrix::Zero(r.tensor->data.rows(), r.tensor->data.cols()));
  }
}

void Adam::step(ModelParams& params, ModelParams& grads, double lr_head, double lr_backbone) {
  auto p = params.refs();
  auto g = grads.refs();
  if (p.size() != m_.size() || g.size() != m_.size()) throw ValidationError("Adam: parameter structure changed");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < p.size(); ++i) {
    const double lr = p[i].group == ParamGroup::backbone ? lr_backbone : lr_head;
    const Matrix& grad = g[i].tensor->data;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad.cwiseAbs2();
    p[i].tensor->data.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.empty()) throw ValidationError("train: dataset is empty");
  if (cfg.augment.any()) cfg.augment.validate(model.config().landmarks);
  for (const auto& s : data)
    if (s.landmarks.size() != model.config().landmarks)
      throw ValidationError("train: sample has " + std::to_string(s.landmarks.size()) + " landmarks, model expects " +
                            std::to_string(model.config().landmarks));

  Adam adam(model.params(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  ModelParams grads = model.params().zeros_like();
  Rng order_rng = sample_rng(cfg.seed, 0, 2);
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});
  const size_t bs = static_cast<size_t>(cfg.batch_size);

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    const double lr = cfg.lr * (epoch >= cfg.lr_drop_epoch ? 0.1 : 1.0);
    double epoch_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += bs) {
      const size_t end = std::min(order.size(), start + bs);
      std::vector<Sample> augmented;
      std::vector<const Sample*> batch;
      augmented.reserve(end - start);
      for (size_t k = start; k < end; ++k) {
        const Sample& s = data[order[k]];
        if (cfg.augment.any()) {
          Rng rng = sample_rng(cfg.seed, static_cast<uint64_t>(epoch) * data.size() + order[k], 1);
          auto [img, lm] = augment(s.image, s.landmarks, rng, cfg.augment);
          augmented.push_back(Sample{std::move(img), std::move(lm), s.bbox});
          batch.push_back(&augmented.back());
        } else {
          batch.push_back(&s);
        }
      }
      grads.set_zero();
      const double loss = batch_loss_and_grad(model, batch, grads);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "training diverged: non-finite loss at epoch " << epoch << ", batch starting at " << start;
        throw NumericError(msg.str());
      }
      epoch_sum += loss * static_cast<double>(batch.size());
      adam.step(model.params(), grads, lr, lr * cfg.lr_backbone_scale);
    }
    const double mean = epoch_sum / static_cast<double>(data.size());
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

std::vector<LandmarkSet> predict_last(const Model& model, std::span<const Image> images) {
  std::vector<LandmarkSet> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(model.forward(img).back());
  return out;
}

LayerwiseEval evaluate(const Model& model, const Dataset& data, const EvalOptions& opts) {
  if (data.empty()) throw ValidationError("evaluate: dataset is empty");
  const size_t layers = static_cast<size_t>(model.config().layers) + 1;
  std::vector<std::vector<double>> per_layer(layers);
  for (const auto& s : data) {
    if (s.landmarks.size() != model.config().landmarks)
      throw ValidationError("evaluate: sample has " + std::to_string(s.landmarks.size()) + " landmarks, model expects " +
                            std::to_string(model.config().landmarks));
    const auto outputs = model.forward(s.image);
    const metrics::SampleMeta meta{&s.landmarks, s.image.width, s.image.height, s.bbox};
    const double d = metrics::resolve_normalizer(opts.normalizer, meta);
    for (size_t t = 0; t < layers; ++t)
      per_layer[t].push_back(metrics::nme(outputs[t], s.landmarks, d, s.image.width, s.image.height));
  }
  LayerwiseEval out;
  for (auto& v : per_layer) out.per_layer.push_back(metrics::summarize(std::move(v), opts.fr_thresholds, opts.auc_cutoffs));
  return out;
}

double mean_nme(const Model& model, const Dataset& data, const metrics::Normalizer& norm) {
  EvalOptions opts;
  opts.normalizer = norm;
  return evaluate(model, data, opts).per_layer.back().mean_nme;
}

Dataset pseudo_label(const Model& model, std::span<const Image> images) {
  Dataset out;
  out.reserve(images.size());
  for (const auto& img : images) {
    LandmarkSet lm = model.forward(img).back();
    const auto box = landmark_bbox(lm, img.width, img.height, 0.0);
    out.push_back(Sample{img, std::move(lm), box});
  }
  return out;
}

std::vector<SelfTrainRound> self_train(Model& model, const Dataset& labeled, std::span<const Image> unlabeled,
                                       int rounds, const TrainConfig& cfg, const Dataset* eval_set,
                                       const metrics::Normalizer& norm) {
  if (rounds < 1) throw ValidationError("self_train: rounds must be >= 1");
  if (unlabeled.empty()) throw ValidationError("self_train: unlabeled pool is empty");
  std::vector<SelfTrainRound> report;
  for (int r = 0; r < rounds; ++r) {
    Dataset train_set = labeled;
    for (auto& s : pseudo_label(model, unlabeled)) train_set.push_back(std::move(s));
    TrainConfig round_cfg = cfg;
    round_cfg.seed = cfg.seed + static_cast<uint64_t>(r) + 1;
    const auto res = train(model, train_set, round_cfg);
    SelfTrainRound row;
    row.round = r + 1;
    row.train_size = train_set.size();
    row.final_loss = res.epoch_loss.empty() ? 0.0 : res.epoch_loss.back();
    row.eval_nme = eval_set ? mean_nme(model, *eval_set, norm) : 0.0;
    report.push_back(row);
  }
  return report;
}

}  // namespace dtld
