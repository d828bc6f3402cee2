#pragma once

#include "dtld/augment.hpp"
#include "dtld/decoder.hpp"
#include "dtld/metrics.hpp"
#include "dtld/synthetic.hpp"

#include <functional>
#include <span>
#include <vector>

namespace dtld {

struct TrainConfig {
  double lr = 1e-4;
  double lr_backbone_scale = 0.1;
  int epochs = 2000;
  int lr_drop_epoch = 1600;  // learning rates drop 10x from this epoch on
  int batch_size = 8;
  uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  AugmentConfig augment;

  void validate() const;
};

/// Deep-supervised L1 loss: sum over layers t = 0..T of sum |Y_t - gt|.
/// When d_outputs is given it receives scale * dL/dY_t (sign of residual,
/// zero at ties).
double deep_supervision_loss(const std::vector<LandmarkSet>& outputs, const LandmarkSet& gt,
                             std::vector<Matrix>* d_outputs = nullptr, double scale = 1.0);

/// Mean loss over `batch`; adds the batch-mean gradient into `grads`.
double batch_loss_and_grad(const Model& model, std::span<const Sample* const> batch, ModelParams& grads);

/// Adaptive-moment optimizer with a separate learning rate for the backbone
/// parameter group.
class Adam {
 public:
  Adam(ModelParams& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(ModelParams& params, ModelParams& grads, double lr_head, double lr_backbone);
  [[nodiscard]] int64_t steps() const { return t_; }

 private:
  double beta1_;
  double beta2_;
  double eps_;
  int64_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean per-sample loss of each epoch
};

using EpochCallback = std::function<void(int epoch, double loss)>;

/// Runs `cfg.epochs` epochs of shuffled mini-batch training. Throws
/// NumericError on a non-finite loss.
TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Last-layer prediction for every image.
[[nodiscard]] std::vector<LandmarkSet> predict_last(const Model& model, std::span<const Image> images);

struct LayerwiseEval {
  std::vector<metrics::EvalResult> per_layer;  // Y_0 .. Y_T
};

struct EvalOptions {
  metrics::Normalizer normalizer;
  std::vector<double> fr_thresholds{0.08, 0.10};
  std::vector<double> auc_cutoffs{0.07};
};

[[nodiscard]] LayerwiseEval evaluate(const Model& model, const Dataset& data, const EvalOptions& opts);

/// Mean last-layer NME.
[[nodiscard]] double mean_nme(const Model& model, const Dataset& data, const metrics::Normalizer& norm);

struct SelfTrainRound {
  int round = 0;
  size_t train_size = 0;
  double eval_nme = 0.0;
  double final_loss = 0.0;
};

/// Teacher/student self-training on an unlabeled pool. Each round the
/// current model pseudo-labels the pool with its last-layer output, trains
/// on labeled + pseudo-labeled samples starting from its own weights, and
/// becomes the next teacher. `eval_set` (optional) is scored after each round.
std::vector<SelfTrainRound> self_train(Model& model, const Dataset& labeled, std::span<const Image> unlabeled,
                                       int rounds, const TrainConfig& cfg, const Dataset* eval_set = nullptr,
                                       const metrics::Normalizer& norm = {});

/// Pseudo-labeled samples for `images` (bbox from the predicted landmarks).
[[nodiscard]] Dataset pseudo_label(const Model& model, std::span<const Image> images);

}  // namespace dtld
