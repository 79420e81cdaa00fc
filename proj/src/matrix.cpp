#include "p2b/matrix.hpp"

#include <cstring>

namespace p2b {

void gemm_nn(const double* A, const double* B, double* C, int m, int k, int n,
             bool accumulate) {
  if (!accumulate) {
    std::memset(C, 0, static_cast<std::size_t>(m) * n * sizeof(double));
  }
  for (int i = 0; i < m; ++i) {
    const double* a_row = A + static_cast<std::size_t>(i) * k;
    double* c_row = C + static_cast<std::size_t>(i) * n;
    for (int t = 0; t < k; ++t) {
      const double a = a_row[t];
      if (a == 0.0) continue;
      const double* b_row = B + static_cast<std::size_t>(t) * n;
      for (int j = 0; j < n; ++j) {
        c_row[j] += a * b_row[j];
      }
    }
  }
}

void gemm_tn(const double* A, const double* B, double* C, int m, int k, int n,
             bool accumulate) {
  if (!accumulate) {
    std::memset(C, 0, static_cast<std::size_t>(m) * n * sizeof(double));
  }
  for (int t = 0; t < k; ++t) {
    const double* a_row = A + static_cast<std::size_t>(t) * m;
    const double* b_row = B + static_cast<std::size_t>(t) * n;
    for (int i = 0; i < m; ++i) {
      const double a = a_row[i];
      if (a == 0.0) continue;
      double* c_row = C + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        c_row[j] += a * b_row[j];
      }
    }
  }
}

void gemm_nt(const double* A, const double* B, double* C, int m, int k, int n,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const double* a_row = A + static_cast<std::size_t>(i) * k;
    double* c_row = C + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* b_row = B + static_cast<std::size_t>(j) * k;
      double dot = 0.0;
      for (int t = 0; t < k; ++t) {
        dot += a_row[t] * b_row[t];
      }
      if (accumulate) {
        c_row[j] += dot;
      } else {
        c_row[j] = dot;
      }
    }
  }
}

}  // namespace p2b
