#pragma once

#include "dtld/decoder.hpp"
#include "dtld/synthetic.hpp"

#include <functional>
#include <string>
#include <vector>

namespace dtld {

struct GradCheckOptions {
  double step = 1e-5;
  double threshold = 1e-4;
  int samples_per_path = 8;  // paths with fewer elements are checked exhaustively
  uint64_t seed = 0;
  /// Relative error is |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-6;
  /// A coordinate that fails at `step` is re-tried at step/10 and step/100;
  /// a kink (rectifier, bilinear cell edge, L1 tie) crossed by the wider
  /// stencil does not survive the narrower ones.
  bool retry_smaller_steps = true;
  /// Fault injection: multiply the analytic gradient of this path by
  /// fault_scale before comparing.
  std::string fault_path;
  double fault_scale = 2.0;
};

struct GradCheckEntry {
  std::string path;
  int64_t numel = 0;
  int checked = 0;
  double max_rel_error = 0.0;
  int64_t worst_index = -1;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double threshold = 0.0;

  [[nodiscard]] bool passed() const;
  [[nodiscard]] double max_error() const;
  [[nodiscard]] std::vector<std::string> failed_paths() const;
};

/// Central-difference check of `analytic` gradients for the listed
/// parameters. `loss` must evaluate the objective at the current values.
[[nodiscard]] GradCheckReport grad_check(const std::vector<ParamRef>& params, const std::vector<const Tensor*>& analytic,
                                         const std::function<double()>& loss, const GradCheckOptions& opts);

/// Checks the batch-mean deep-supervision loss of `model` on `batch`.
[[nodiscard]] GradCheckReport grad_check_model(Model& model, const Dataset& batch, const GradCheckOptions& opts);

/// Adds N(0, scale^2) noise to every parameter so zero-initialized tensors
/// (offset heads, attention-weight projections) carry non-trivial gradients.
void perturb_params(ModelParams& params, Rng& rng, double scale);

/// The configuration used by the gradient-integrity check: C=16, 2 heads,
/// 2 levels, 2 points, 5 landmarks, 32x32 images, 2 decoder layers.
[[nodiscard]] ModelConfig tiny_config(DecoderMode mode);

}  // namespace dtld
