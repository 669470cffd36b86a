#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace m2t2 {

class Tape;

// Handle to a node on a tape. 2D row-major, double precision. Scalars are
// [1x1]. Cheap to copy; the tape owns all storage.
struct Tensor {
  Tape* tape = nullptr;
  int node = -1;

  int rows() const;
  int cols() const;
  std::int64_t size() const;
  const std::vector<double>& value() const;
  const std::vector<double>& grad() const;
  double scalar() const;  // value of a [1x1] tensor
  double at(int r, int c) const;
};

// Reverse-mode autodiff tape. Ops append nodes in topological order; backward
// replays the recorded closures in reverse, accumulating gradients in a fixed
// (hence bit-reproducible) order. A tape is single-threaded; individual op
// kernels may parallelize internally over independent output rows.
class Tape {
 public:
  struct Node {
    int rows = 0, cols = 0;
    bool requires_grad = false;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily when requires_grad
    std::function<void()> backward;
  };

  Tensor input(int rows, int cols, const double* data, bool requires_grad);
  Tensor input(int rows, int cols, const std::vector<double>& data,
               bool requires_grad) {
    check_size(rows, cols, data.size());
    return input(rows, cols, data.data(), requires_grad);
  }
  Tensor constant(int rows, int cols, const double* data) {
    return input(rows, cols, data, false);
  }
  Tensor constant(int rows, int cols, const std::vector<double>& data) {
    check_size(rows, cols, data.size());
    return input(rows, cols, data.data(), false);
  }
  Tensor full(int rows, int cols, double fill, bool requires_grad = false);

  // Low-level escape hatch (used by tests to install deliberately wrong
  // backward rules): elementwise forward with a caller-provided backward
  // d(input) given (d(output), input value, output value).
  Tensor custom_unary(
      Tensor x, const std::function<double(double)>& fwd,
      const std::function<double(double, double, double)>& bwd_elem);

  // Seeds d(loss)/d(loss)=1 and runs all recorded backward rules in reverse.
  void backward(Tensor loss);

  std::size_t num_nodes() const { return nodes_.size(); }

  Node& node(int i) { return nodes_[i]; }
  const Node& node(int i) const { return nodes_[i]; }

  // Appends a node and returns its handle; used by op implementations.
  Tensor make(int rows, int cols, bool requires_grad);
  // Registers a backward closure for `t` (runs only when requires_grad).
  void on_backward(Tensor t, std::function<void()> fn);
  // Debug-mode finiteness check of a node's value (hard error on NaN/Inf).
  void check_finite(Tensor t, const char* op) const;

 private:
  static void check_size(int rows, int cols, std::size_t n) {
    if (static_cast<std::int64_t>(rows) * cols != static_cast<std::int64_t>(n))
      throw std::invalid_argument("tensor data length does not match shape");
  }
  std::vector<Node> nodes_;
};

// --- Ops ---------------------------------------------------------------

Tensor matmul(Tensor a, Tensor b);     // [m x k] * [k x n]
Tensor matmul_nt(Tensor a, Tensor b);  // [m x k] * [n x k]^T
Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);  // elementwise
Tensor div(Tensor a, Tensor b);  // elementwise
Tensor scale(Tensor a, double s);
Tensor add_constant(Tensor a, double c);
Tensor add_rowwise(Tensor a, Tensor bias);  // bias [1 x n] added to every row
Tensor relu(Tensor a);
Tensor sigmoid(Tensor a);
Tensor softmax_rows(Tensor a);
Tensor layernorm(Tensor x, Tensor gain, Tensor bias);  // gain, bias [1 x d]
Tensor concat_rows(Tensor a, Tensor b);
Tensor concat_cols(Tensor a, Tensor b);
Tensor slice_rows(Tensor a, int r0, int r1);
Tensor slice_cols(Tensor a, int c0, int c1);
Tensor reduce_sum(Tensor a);
Tensor reduce_mean(Tensor a);
Tensor row_sums(Tensor a);  // [m x n] -> [m x 1]

// Row selection / scatter. Backward scatter-adds are serial for determinism.
Tensor gather_rows(Tensor a, const std::vector<int>& rows);
Tensor gather_pairs(Tensor a, const std::vector<int>& row_idx,
                    const std::vector<int>& col_idx);  // -> [k x 1]

// out[i] = sum_j weights[i*k+j] * a[indices[i*k+j]], over feature columns.
// Indices and weights are fixed (not differentiated).
Tensor weighted_gather(Tensor a, const std::vector<int>& indices,
                       const std::vector<double>& weights, int k);

// Max over each contiguous run of group_size rows; channelwise. Ties keep the
// first (lowest) row, which makes the backward routing deterministic.
Tensor group_maxpool(Tensor a, int group_size);

// Per-row 3-vector helpers (inputs [m x 3] unless noted).
Tensor rows_normalize(Tensor a);               // x / sqrt(sum x^2 + 1e-24)
Tensor rows_norm(Tensor a);                    // [m x 1], sqrt(sum x^2 + 1e-24)
Tensor rows_dot(Tensor a, Tensor b);           // [m x 1]
Tensor rows_cross(Tensor a, Tensor b);         // [m x 3]
Tensor rows_scale(Tensor a, Tensor s);         // a[i,:] * s[i,0], s [m x 1]

// Elementwise binary cross entropy of probabilities p against constant
// targets t in {0,1}; p clamped to [1e-7, 1 - 1e-7].
Tensor bce_elem(Tensor p, Tensor targets);

// softmax((q k^T)/sqrt(d) + A) v with additive A = 0 (allowed) / -1e9
// (masked); a mask row with no allowed key is replaced by all-allowed.
struct AttentionResult {
  Tensor out;      // [Q x d]
  Tensor weights;  // [Q x M]
};
AttentionResult masked_attention(Tensor q, Tensor k, Tensor v,
                                 const std::vector<std::uint8_t>& mask);

// --- Gradient checking ---------------------------------------------------

struct GradCheckInput {
  int rows = 0, cols = 0;
  std::vector<double> data;
};

// f builds a scalar loss on the given tape from the registered inputs (all
// requires_grad). Returns the max over all input entries of
// |analytic - numeric| / max(denom_floor, |analytic| + |numeric|), with
// numeric from central differences at the given step. For whole-model checks
// raise denom_floor above the finite-difference roundoff (~|loss| * 1e-16 /
// step) so parameters with exactly-zero gradient (e.g. dead relu channels)
// are compared at a meaningful scale.
double grad_check(
    const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
    const std::vector<GradCheckInput>& inputs, double step = 1e-5,
    double denom_floor = 1e-8);

}  // namespace m2t2
