#include "m2t2/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <limits>
#include <vector>

namespace m2t2::kernels {

namespace {

inline void matmul_nn_row(const double* a, const double* b, double* c, int i,
                          int k, int n, bool accumulate) {
  double* crow = c + static_cast<std::size_t>(i) * n;
  if (!accumulate) std::fill(crow, crow + n, 0.0);
  const double* arow = a + static_cast<std::size_t>(i) * k;
  for (int l = 0; l < k; ++l) {
    double av = arow[l];
    if (av == 0.0) continue;
    const double* brow = b + static_cast<std::size_t>(l) * n;
    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void matmul_nt_row(const double* a, const double* b, double* c, int i,
                          int k, int n, bool accumulate) {
  double* crow = c + static_cast<std::size_t>(i) * n;
  const double* arow = a + static_cast<std::size_t>(i) * k;
  for (int j = 0; j < n; ++j) {
    const double* brow = b + static_cast<std::size_t>(j) * k;
    double sum = 0.0;
    for (int l = 0; l < k; ++l) sum += arow[l] * brow[l];
    crow[j] = accumulate ? crow[j] + sum : sum;
  }
}

inline void matmul_tn_row(const double* a, const double* b, double* c, int i,
                          int m, int k, int n, bool accumulate) {
  double* crow = c + static_cast<std::size_t>(i) * n;
  if (!accumulate) std::fill(crow, crow + n, 0.0);
  for (int l = 0; l < k; ++l) {
    double av = a[static_cast<std::size_t>(l) * m + i];
    if (av == 0.0) continue;
    const double* brow = b + static_cast<std::size_t>(l) * n;
    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

}  // namespace

void matmul_nn_serial(const double* a, const double* b, double* c, int m, int k,
                      int n, bool accumulate) {
  for (int i = 0; i < m; ++i) matmul_nn_row(a, b, c, i, k, n, accumulate);
}

void matmul_nn_omp(const double* a, const double* b, double* c, int m, int k,
                   int n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) matmul_nn_row(a, b, c, i, k, n, accumulate);
}

void matmul_nt_serial(const double* a, const double* b, double* c, int m, int k,
                      int n, bool accumulate) {
  for (int i = 0; i < m; ++i) matmul_nt_row(a, b, c, i, k, n, accumulate);
}

void matmul_nt_omp(const double* a, const double* b, double* c, int m, int k,
                   int n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) matmul_nt_row(a, b, c, i, k, n, accumulate);
}

void matmul_tn_serial(const double* a, const double* b, double* c, int m, int k,
                      int n, bool accumulate) {
  for (int i = 0; i < m; ++i) matmul_tn_row(a, b, c, i, m, k, n, accumulate);
}

void matmul_tn_omp(const double* a, const double* b, double* c, int m, int k,
                   int n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) matmul_tn_row(a, b, c, i, m, k, n, accumulate);
}

void fps_update_serial(const double* points, int n, const double* q, double* dist2) {
  for (int i = 0; i < n; ++i) {
    const double* p = points + static_cast<std::size_t>(i) * 3;
    double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
    double d = dx * dx + dy * dy + dz * dz;
    if (d < dist2[i]) dist2[i] = d;
  }
}

void fps_update_omp(const double* points, int n, const double* q, double* dist2) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const double* p = points + static_cast<std::size_t>(i) * 3;
    double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
    double d = dx * dx + dy * dy + dz * dz;
    if (d < dist2[i]) dist2[i] = d;
  }
}

int argmax_serial(const double* values, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

int argmax_omp(const double* values, int n) {
  int num_threads = 1;
#pragma omp parallel
  {
#pragma omp single
    num_threads = omp_get_num_threads();
  }
  std::vector<int> best_idx(num_threads, -1);
#pragma omp parallel num_threads(num_threads)
  {
    int t = omp_get_thread_num();
    // Contiguous static blocks; the merge below picks the global maximum
    // with the lowest index, which is independent of the block layout.
    std::int64_t lo = static_cast<std::int64_t>(n) * t / num_threads;
    std::int64_t hi = static_cast<std::int64_t>(n) * (t + 1) / num_threads;
    if (lo < hi) {
      int b = static_cast<int>(lo);
      for (int i = static_cast<int>(lo) + 1; i < hi; ++i) {
        if (values[i] > values[b]) b = i;
      }
      best_idx[t] = b;
    }
  }
  int best = -1;
  for (int t = 0; t < num_threads; ++t) {
    int b = best_idx[t];
    if (b < 0) continue;
    if (best < 0 || values[b] > values[best]) best = b;
  }
  return best;
}

}  // namespace m2t2::kernels
