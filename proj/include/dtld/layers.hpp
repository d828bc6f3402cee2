#pragma once

// Differentiable building blocks. Each forward returns its output and fills a
// small cache; the matching backward consumes the cache, accumulates into a
// caller-owned gradient struct of the same shape as the parameters, and
// returns the gradient w.r.t. the input.

#include "dtld/tensor.hpp"

#include <random>
#include <string>

namespace dtld {

using Rng = std::mt19937_64;

struct Linear {
  Tensor weight;  // out x in
  Tensor bias;    // 1 x out

  Linear() = default;
  Linear(int in, int out);

  [[nodiscard]] int in_features() const { return static_cast<int>(weight.data.cols()); }
  [[nodiscard]] int out_features() const { return static_cast<int>(weight.data.rows()); }

  void init_uniform(Rng& rng, double gain = 1.0);  // Xavier-uniform weights, zero bias
  void visit(const std::string& prefix, ParamGroup group, const ParamVisitor& f);

  [[nodiscard]] Matrix forward(const Matrix& x) const;
  /// Accumulates into `grad` and returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& d_out, Linear& grad) const;
};

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNorm {
  Tensor gain;  // 1 x C
  Tensor bias;  // 1 x C

  LayerNorm() = default;
  explicit LayerNorm(int dim);

  void visit(const std::string& prefix, ParamGroup group, const ParamVisitor& f);

  struct Cache {
    Matrix normalized;
    Eigen::VectorXd inv_std;
  };
  [[nodiscard]] Matrix forward(const Matrix& x, Cache& cache) const;
  Matrix backward(const Cache& cache, const Matrix& d_out, LayerNorm& grad) const;
};

[[nodiscard]] Matrix relu(const Matrix& x);
/// Masks d_out by (pre_activation > 0).
[[nodiscard]] Matrix relu_backward(const Matrix& pre_activation, const Matrix& d_out);

/// Row-wise softmax applied independently to consecutive groups of `group`
/// columns.
[[nodiscard]] Matrix grouped_softmax(const Matrix& logits, Eigen::Index group);
[[nodiscard]] Matrix grouped_softmax_backward(const Matrix& probs, const Matrix& d_probs, Eigen::Index group);

/// Feature map in HWC layout: (height*width) x channels.
struct FeatureMap {
  int height = 0;
  int width = 0;
  Matrix data;

  [[nodiscard]] int channels() const { return static_cast<int>(data.cols()); }
};

/// 3x3 convolution with padding 1 and configurable stride.
struct Conv3x3 {
  Tensor weight;  // out x (in*9), logical out x in x 3 x 3
  Tensor bias;    // 1 x out
  int stride = 1;

  Conv3x3() = default;
  Conv3x3(int in, int out, int stride);

  [[nodiscard]] int in_channels() const { return static_cast<int>(weight.shape[1]); }
  [[nodiscard]] int out_channels() const { return static_cast<int>(weight.shape[0]); }

  void init_he(Rng& rng);
  void visit(const std::string& prefix, ParamGroup group, const ParamVisitor& f);

  struct Cache {
    Matrix columns;  // (out_h*out_w) x (in*9)
    int in_height = 0;
    int in_width = 0;
  };
  [[nodiscard]] FeatureMap forward(const FeatureMap& x, Cache& cache) const;
  FeatureMap backward(const Cache& cache, const FeatureMap& d_out, Conv3x3& grad) const;
};

}  // namespace dtld
