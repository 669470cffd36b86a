#pragma once

#include <cstdint>

namespace m2t2::kernels {

// Dense double-precision kernels. Each kernel comes in a serial reference
// version and an OpenMP version that partitions independent output rows
// across threads; per-element arithmetic is identical, so the two produce
// bit-identical results and the OpenMP result does not depend on the thread
// count. Tests compare them exactly; tools/bench_kernels times them.

// c[m x n] = a[m x k] * b[k x n]   (+= when accumulate)
void matmul_nn_serial(const double* a, const double* b, double* c, int m, int k,
                      int n, bool accumulate = false);
void matmul_nn_omp(const double* a, const double* b, double* c, int m, int k,
                   int n, bool accumulate = false);

// c[m x n] = a[m x k] * b[n x k]^T
void matmul_nt_serial(const double* a, const double* b, double* c, int m, int k,
                      int n, bool accumulate = false);
void matmul_nt_omp(const double* a, const double* b, double* c, int m, int k,
                   int n, bool accumulate = false);

// c[m x n] = a[k x m]^T * b[k x n]
void matmul_tn_serial(const double* a, const double* b, double* c, int m, int k,
                      int n, bool accumulate = false);
void matmul_tn_omp(const double* a, const double* b, double* c, int m, int k,
                   int n, bool accumulate = false);

// dist2[i] = min(dist2[i], |points[i] - q|^2) over n xyz triplets.
void fps_update_serial(const double* points, int n, const double* q, double* dist2);
void fps_update_omp(const double* points, int n, const double* q, double* dist2);

// Index of the maximum entry, lowest index on ties. The OpenMP version merges
// per-block (max, first-index) partials, which is invariant to the partition.
int argmax_serial(const double* values, int n);
int argmax_omp(const double* values, int n);

// Default dispatch used by the rest of the project.
inline void matmul_nn(const double* a, const double* b, double* c, int m, int k,
                      int n, bool accumulate = false) {
  matmul_nn_omp(a, b, c, m, k, n, accumulate);
}
inline void matmul_nt(const double* a, const double* b, double* c, int m, int k,
                      int n, bool accumulate = false) {
  matmul_nt_omp(a, b, c, m, k, n, accumulate);
}
inline void matmul_tn(const double* a, const double* b, double* c, int m, int k,
                      int n, bool accumulate = false) {
  matmul_tn_omp(a, b, c, m, k, n, accumulate);
}

}  // namespace m2t2::kernels
