#pragma once

#include <cstddef>
#include <vector>

namespace p2b {

/// Dense row-major matrix of doubles. Deliberately minimal: the model's
/// forward/backward math needs explicit loops, not an algebra library.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  double operator()(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  std::vector<double> row_vector(int r) const {
    return std::vector<double>(row(r), row(r) + cols);
  }
  const double* row(int r) const {
    return data.data() + static_cast<std::size_t>(r) * cols;
  }
};

/// C[m x n] (+)= A[m x k] * B[k x n]; row-major raw buffers.
void gemm_nn(const double* A, const double* B, double* C, int m, int k, int n,
             bool accumulate);

/// C[m x n] (+)= A^T * B with A stored [k x m], B stored [k x n].
void gemm_tn(const double* A, const double* B, double* C, int m, int k, int n,
             bool accumulate);

/// C[m x n] (+)= A * B^T with A stored [m x k], B stored [n x k].
void gemm_nt(const double* A, const double* B, double* C, int m, int k, int n,
             bool accumulate);

}  // namespace p2b
