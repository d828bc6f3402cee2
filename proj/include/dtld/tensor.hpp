#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dtld {

// All numerics run in double precision. Rows are samples/pixels/queries,
// columns are channels.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Bad input, shape mismatch, or invalid configuration. Maps to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or divergence at runtime. Maps to exit code 2.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A learnable tensor. `shape` is the logical shape (e.g. conv weights are
/// out x in x 3 x 3); `data` stores the same values row-major as a 2-D block.
struct Tensor {
  std::vector<int64_t> shape;
  Matrix data;

  Tensor() = default;
  Tensor(std::vector<int64_t> logical_shape, Eigen::Index rows, Eigen::Index cols);

  [[nodiscard]] int64_t numel() const { return static_cast<int64_t>(data.size()); }
  double* values() { return data.data(); }
  [[nodiscard]] const double* values() const { return data.data(); }
};

enum class ParamGroup { backbone, head };

/// Non-owning view of one named parameter, used for optimizer steps,
/// checkpointing and gradient checks.
struct ParamRef {
  std::string path;
  Tensor* tensor = nullptr;
  ParamGroup group = ParamGroup::head;
};

using ParamVisitor = std::function<void(const std::string& path, Tensor& tensor, ParamGroup group)>;

[[nodiscard]] bool all_finite(const Matrix& m);

}  // namespace dtld
