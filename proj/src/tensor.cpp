#include "dtld/tensor.hpp"

namespace dtld {

Tensor::Tensor(std::vector<int64_t> logical_shape, Eigen::Index rows, Eigen::Index cols)
    : shape(std::move(logical_shape)), data(Matrix::Zero(rows, cols)) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  if (n != rows * cols) throw ValidationError("tensor shape does not match storage size");
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace dtld
