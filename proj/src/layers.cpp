#include "dtld/layers.hpp"

#include <cmath>

namespace dtld {

Linear::Linear(int in, int out) : weight({out, in}, out, in), bias({out}, 1, out) {}

void Linear::init_uniform(Rng& rng, double gain) {
  const double limit = gain * std::sqrt(6.0 / (in_features() + out_features()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < weight.data.size(); ++i) weight.data.data()[i] = dist(rng);
  bias.data.setZero();
}

void Linear::visit(const std::string& prefix, ParamGroup group, const ParamVisitor& f) {
  f(prefix + ".weight", weight, group);
  f(prefix + ".bias", bias, group);
}

Matrix Linear::forward(const Matrix& x) const {
  if (x.cols() != weight.data.cols()) throw ValidationError("linear: input width does not match weight");
  Matrix y = x * weight.data.transpose();
  y.rowwise() += bias.data.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& d_out, Linear& grad) const {
  grad.weight.data.noalias() += d_out.transpose() * x;
  grad.bias.data.row(0) += d_out.colwise().sum();
  return d_out * weight.data;
}

LayerNorm::LayerNorm(int dim) : gain({dim}, 1, dim), bias({dim}, 1, dim) { gain.data.setOnes(); }

void LayerNorm::visit(const std::string& prefix, ParamGroup group, const ParamVisitor& f) {
  f(prefix + ".gain", gain, group);
  f(prefix + ".bias", bias, group);
}

Matrix LayerNorm::forward(const Matrix& x, Cache& cache) const {
  const Eigen::Index n = x.rows();
  const double c = static_cast<double>(x.cols());
  cache.normalized.resize(n, x.cols());
  cache.inv_std.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.row(r).mean();
    const RowVector centered = x.row(r).array() - mean;
    const double var = centered.squaredNorm() / c;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std(r) = inv;
    cache.normalized.row(r) = centered * inv;
  }
  Matrix y = cache.normalized.array().rowwise() * gain.data.row(0).array();
  y.rowwise() += bias.data.row(0);
  return y;
}

Matrix LayerNorm::backward(const Cache& cache, const Matrix& d_out, LayerNorm& grad) const {
  grad.gain.data.row(0) += (d_out.array() * cache.normalized.array()).colwise().sum().matrix();
  grad.bias.data.row(0) += d_out.colwise().sum();
  const Matrix d_norm = d_out.array().rowwise() * gain.data.row(0).array();
  Matrix dx(d_out.rows(), d_out.cols());
  for (Eigen::Index r = 0; r < d_out.rows(); ++r) {
    const double mean_d = d_norm.row(r).mean();
    const double mean_dx = d_norm.row(r).dot(cache.normalized.row(r)) / static_cast<double>(d_out.cols());
    dx.row(r) = cache.inv_std(r) *
                (d_norm.row(r).array() - mean_d - cache.normalized.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_backward(const Matrix& pre_activation, const Matrix& d_out) {
  return (pre_activation.array() > 0.0).select(d_out, 0.0);
}

Matrix grouped_softmax(const Matrix& logits, Eigen::Index group) {
  if (group < 1 || logits.cols() % group != 0)
    throw ValidationError("grouped_softmax: " + std::to_string(logits.cols()) + " columns do not split into groups of " +
                          std::to_string(group));
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    for (Eigen::Index g = 0; g < logits.cols(); g += group) {
      auto in = logits.row(r).segment(g, group);
      const double mx = in.maxCoeff();
      auto o = out.row(r).segment(g, group);
      o = (in.array() - mx).exp().matrix();
      o /= o.sum();
    }
  }
  return out;
}

Matrix grouped_softmax_backward(const Matrix& probs, const Matrix& d_probs, Eigen::Index group) {
  Matrix d_logits(probs.rows(), probs.cols());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    for (Eigen::Index g = 0; g < probs.cols(); g += group) {
      auto p = probs.row(r).segment(g, group);
      auto dp = d_probs.row(r).segment(g, group);
      const double dot = p.dot(dp);
      d_logits.row(r).segment(g, group) = (p.array() * (dp.array() - dot)).matrix();
    }
  }
  return d_logits;
}

Conv3x3::Conv3x3(int in, int out, int s)
    : weight({out, in, 3, 3}, out, Eigen::Index{in} * 9), bias({out}, 1, out), stride(s) {
  if (s < 1) throw ValidationError("conv stride must be >= 1");
}

void Conv3x3::init_he(Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (in_channels() * 9.0)));
  for (Eigen::Index i = 0; i < weight.data.size(); ++i) weight.data.data()[i] = dist(rng);
  bias.data.setZero();
}

void Conv3x3::visit(const std::string& prefix, ParamGroup group, const ParamVisitor& f) {
  f(prefix + ".weight", weight, group);
  f(prefix + ".bias", bias, group);
}

namespace {

int conv_out_size(int in, int stride) { return (in - 1) / stride + 1; }

}  // namespace

FeatureMap Conv3x3::forward(const FeatureMap& x, Cache& cache) const {
  const int cin = in_channels();
  if (x.channels() != cin) throw ValidationError("conv: channel mismatch");
  const int oh = conv_out_size(x.height, stride);
  const int ow = conv_out_size(x.width, stride);
  cache.in_height = x.height;
  cache.in_width = x.width;
  cache.columns = Matrix::Zero(Eigen::Index{oh} * ow, Eigen::Index{cin} * 9);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Eigen::Index row = Eigen::Index{oy} * ow + ox;
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride + ky - 1;
        if (iy < 0 || iy >= x.height) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * stride + kx - 1;
          if (ix < 0 || ix >= x.width) continue;
          const Eigen::Index src = Eigen::Index{iy} * x.width + ix;
          for (int c = 0; c < cin; ++c) cache.columns(row, c * 9 + ky * 3 + kx) = x.data(src, c);
        }
      }
    }
  }
  FeatureMap y;
  y.height = oh;
  y.width = ow;
  y.data = cache.columns * weight.data.transpose();
  y.data.rowwise() += bias.data.row(0);
  return y;
}

FeatureMap Conv3x3::backward(const Cache& cache, const FeatureMap& d_out, Conv3x3& grad) const {
  const int cin = in_channels();
  grad.weight.data.noalias() += d_out.data.transpose() * cache.columns;
  grad.bias.data.row(0) += d_out.data.colwise().sum();
  const Matrix d_cols = d_out.data * weight.data;
  FeatureMap dx;
  dx.height = cache.in_height;
  dx.width = cache.in_width;
  dx.data = Matrix::Zero(Eigen::Index{dx.height} * dx.width, cin);
  for (int oy = 0; oy < d_out.height; ++oy) {
    for (int ox = 0; ox < d_out.width; ++ox) {
      const Eigen::Index row = Eigen::Index{oy} * d_out.width + ox;
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride + ky - 1;
        if (iy < 0 || iy >= dx.height) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * stride + kx - 1;
          if (ix < 0 || ix >= dx.width) continue;
          const Eigen::Index dst = Eigen::Index{iy} * dx.width + ix;
          for (int c = 0; c < cin; ++c) dx.data(dst, c) += d_cols(row, c * 9 + ky * 3 + kx);
        }
      }
    }
  }
  return dx;
}

}  // namespace dtld
