#include "m2t2/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "m2t2/kernels.hpp"

namespace m2t2 {

int Tensor::rows() const { return tape->node(node).rows; }
int Tensor::cols() const { return tape->node(node).cols; }
std::int64_t Tensor::size() const {
  return static_cast<std::int64_t>(rows()) * cols();
}
const std::vector<double>& Tensor::value() const {
  return tape->node(node).value;
}
const std::vector<double>& Tensor::grad() const {
  const Tape::Node& n = tape->node(node);
  if (!n.requires_grad)
    throw std::logic_error("tensor does not track gradients");
  return n.grad;
}
double Tensor::scalar() const {
  if (rows() != 1 || cols() != 1)
    throw std::invalid_argument("scalar() on a non-[1x1] tensor");
  return value()[0];
}
double Tensor::at(int r, int c) const {
  return value()[static_cast<std::size_t>(r) * cols() + c];
}

Tensor Tape::make(int rows, int cols, bool requires_grad) {
  if (rows < 1 || cols < 1)
    throw std::invalid_argument("tensor dimensions must be positive");
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.requires_grad = requires_grad;
  n.value.resize(static_cast<std::size_t>(rows) * cols);
  if (requires_grad) n.grad.assign(n.value.size(), 0.0);
  nodes_.push_back(std::move(n));
  return Tensor{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::input(int rows, int cols, const double* data, bool requires_grad) {
  Tensor t = make(rows, cols, requires_grad);
  std::memcpy(nodes_[t.node].value.data(), data,
              nodes_[t.node].value.size() * sizeof(double));
  check_finite(t, "input");
  return t;
}

Tensor Tape::full(int rows, int cols, double fill, bool requires_grad) {
  Tensor t = make(rows, cols, requires_grad);
  std::fill(nodes_[t.node].value.begin(), nodes_[t.node].value.end(), fill);
  return t;
}

void Tape::on_backward(Tensor t, std::function<void()> fn) {
  if (nodes_[t.node].requires_grad) nodes_[t.node].backward = std::move(fn);
}

void Tape::check_finite([[maybe_unused]] Tensor t,
                        [[maybe_unused]] const char* op) const {
#ifndef NDEBUG
  for (double v : nodes_[t.node].value) {
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("non-finite value produced by ") +
                               op);
  }
#endif
}

Tensor Tape::custom_unary(
    Tensor x, const std::function<double(double)>& fwd,
    const std::function<double(double, double, double)>& bwd_elem) {
  Tensor out = make(x.rows(), x.cols(), nodes_[x.node].requires_grad);
  const std::vector<double>& xv = nodes_[x.node].value;
  std::vector<double>& ov = nodes_[out.node].value;
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
  on_backward(out, [this, xi = x.node, oi = out.node, bwd_elem]() {
    Node& xn = nodes_[xi];
    const Node& on = nodes_[oi];
    if (!xn.requires_grad) return;
    for (std::size_t i = 0; i < xn.value.size(); ++i)
      xn.grad[i] += bwd_elem(on.grad[i], xn.value[i], on.value[i]);
  });
  return out;
}

void Tape::backward(Tensor loss) {
  if (loss.tape != this) throw std::invalid_argument("loss from another tape");
  Node& ln = nodes_[loss.node];
  if (ln.rows != 1 || ln.cols != 1)
    throw std::invalid_argument("backward requires a scalar loss");
  if (!ln.requires_grad)
    throw std::invalid_argument("loss does not require gradients");
  ln.grad[0] += 1.0;
  for (int i = loss.node; i >= 0; --i) {
    if (nodes_[i].backward) nodes_[i].backward();
  }
}

namespace {

Tape* same_tape(Tensor a, Tensor b) {
  if (a.tape == nullptr || a.tape != b.tape)
    throw std::invalid_argument("operands must live on the same tape");
  return a.tape;
}

bool wants_grad(Tensor t) { return t.tape->node(t.node).requires_grad; }

void require_same_shape(Tensor a, Tensor b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Tensor matmul(Tensor a, Tensor b) {
  Tape* tape = same_tape(a, b);
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw std::invalid_argument("matmul: inner dim mismatch");
  Tensor out = tape->make(m, n, wants_grad(a) || wants_grad(b));
  kernels::matmul_nn(a.value().data(), b.value().data(),
                     tape->node(out.node).value.data(), m, k, n);
  tape->check_finite(out, "matmul");
  tape->on_backward(out, [tape, ai = a.node, bi = b.node, oi = out.node, m, k,
                          n]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    Tape::Node& bn = tape->node(bi);
    if (an.requires_grad)  // dA += dC * B^T
      kernels::matmul_nt(on.grad.data(), bn.value.data(), an.grad.data(), m, n,
                         k, true);
    if (bn.requires_grad)  // dB += A^T * dC
      kernels::matmul_tn(an.value.data(), on.grad.data(), bn.grad.data(), k, m,
                         n, true);
  });
  return out;
}

Tensor matmul_nt(Tensor a, Tensor b) {
  Tape* tape = same_tape(a, b);
  const int m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw std::invalid_argument("matmul_nt: inner dim mismatch");
  Tensor out = tape->make(m, n, wants_grad(a) || wants_grad(b));
  kernels::matmul_nt(a.value().data(), b.value().data(),
                     tape->node(out.node).value.data(), m, k, n);
  tape->check_finite(out, "matmul_nt");
  tape->on_backward(out, [tape, ai = a.node, bi = b.node, oi = out.node, m, k,
                          n]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    Tape::Node& bn = tape->node(bi);
    if (an.requires_grad)  // dA += dC * B
      kernels::matmul_nn(on.grad.data(), bn.value.data(), an.grad.data(), m, n,
                         k, true);
    if (bn.requires_grad)  // dB += dC^T * A
      kernels::matmul_tn(on.grad.data(), an.value.data(), bn.grad.data(), n, m,
                         k, true);
  });
  return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(Tensor a, Tensor b, const char* name, Fwd fwd,
                          Bwd bwd) {
  Tape* tape = same_tape(a, b);
  require_same_shape(a, b, name);
  Tensor out = tape->make(a.rows(), a.cols(), wants_grad(a) || wants_grad(b));
  const std::vector<double>& av = a.value();
  const std::vector<double>& bv = b.value();
  std::vector<double>& ov = tape->node(out.node).value;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
  tape->check_finite(out, name);
  tape->on_backward(out, [tape, ai = a.node, bi = b.node, oi = out.node,
                          bwd]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    Tape::Node& bn = tape->node(bi);
    for (std::size_t i = 0; i < on.value.size(); ++i) {
      auto [da, db] = bwd(on.grad[i], an.value[i], bn.value[i], on.value[i]);
      if (an.requires_grad) an.grad[i] += da;
      if (bn.requires_grad) bn.grad[i] += db;
    }
  });
  return out;
}

struct GradPair {
  double da, db;
};

}  // namespace

Tensor add(Tensor a, Tensor b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double, double) { return GradPair{g, g}; });
}

Tensor sub(Tensor a, Tensor b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double, double) { return GradPair{g, -g}; });
}

Tensor mul(Tensor a, Tensor b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double x, double y, double) { return GradPair{g * y, g * x}; });
}

Tensor div(Tensor a, Tensor b) {
  return binary_elementwise(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double g, double, double y, double out) {
        return GradPair{g / y, -g * out / y};
      });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(Tensor a, const char* name, Fwd fwd, Bwd bwd) {
  Tape* tape = a.tape;
  Tensor out = tape->make(a.rows(), a.cols(), wants_grad(a));
  const std::vector<double>& av = a.value();
  std::vector<double>& ov = tape->node(out.node).value;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);
  tape->check_finite(out, name);
  tape->on_backward(out, [tape, ai = a.node, oi = out.node, bwd]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    for (std::size_t i = 0; i < on.value.size(); ++i)
      an.grad[i] += bwd(on.grad[i], an.value[i], on.value[i]);
  });
  return out;
}

}  // namespace

Tensor scale(Tensor a, double s) {
  return unary_elementwise(
      a, "scale", [s](double x) { return s * x; },
      [s](double g, double, double) { return s * g; });
}

Tensor add_constant(Tensor a, double c) {
  return unary_elementwise(
      a, "add_constant", [c](double x) { return x + c; },
      [](double g, double, double) { return g; });
}

Tensor relu(Tensor a) {
  return unary_elementwise(
      a, "relu", [](double x) { return x > 0 ? x : 0.0; },
      [](double g, double x, double) { return x > 0 ? g : 0.0; });
}

Tensor sigmoid(Tensor a) {
  return unary_elementwise(
      a, "sigmoid",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double g, double, double s) { return g * s * (1.0 - s); });
}

Tensor add_rowwise(Tensor a, Tensor bias) {
  Tape* tape = same_tape(a, bias);
  if (bias.rows() != 1 || bias.cols() != a.cols())
    throw std::invalid_argument("add_rowwise: bias must be [1 x cols]");
  const int m = a.rows(), n = a.cols();
  Tensor out = tape->make(m, n, wants_grad(a) || wants_grad(bias));
  const double* av = a.value().data();
  const double* bv = bias.value().data();
  double* ov = tape->node(out.node).value.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) ov[i * n + j] = av[i * n + j] + bv[j];
  tape->check_finite(out, "add_rowwise");
  tape->on_backward(out, [tape, ai = a.node, bi = bias.node, oi = out.node, m,
                          n]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    Tape::Node& bn = tape->node(bi);
    if (an.requires_grad)
      for (std::size_t i = 0; i < on.grad.size(); ++i) an.grad[i] += on.grad[i];
    if (bn.requires_grad)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) bn.grad[j] += on.grad[i * n + j];
  });
  return out;
}

Tensor softmax_rows(Tensor a) {
  Tape* tape = a.tape;
  const int m = a.rows(), n = a.cols();
  Tensor out = tape->make(m, n, wants_grad(a));
  const double* av = a.value().data();
  double* ov = tape->node(out.node).value.data();
  for (int i = 0; i < m; ++i) {
    const double* x = av + static_cast<std::size_t>(i) * n;
    double* y = ov + static_cast<std::size_t>(i) * n;
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int j = 0; j < n; ++j) y[j] /= sum;
  }
  tape->check_finite(out, "softmax_rows");
  tape->on_backward(out, [tape, ai = a.node, oi = out.node, m, n]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    for (int i = 0; i < m; ++i) {
      const double* y = on.value.data() + static_cast<std::size_t>(i) * n;
      const double* dy = on.grad.data() + static_cast<std::size_t>(i) * n;
      double* dx = an.grad.data() + static_cast<std::size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
      for (int j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
    }
  });
  return out;
}

Tensor layernorm(Tensor x, Tensor gain, Tensor bias) {
  Tape* tape = same_tape(x, gain);
  same_tape(x, bias);
  const int m = x.rows(), d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 ||
      bias.cols() != d)
    throw std::invalid_argument("layernorm: gain/bias must be [1 x d]");
  constexpr double kEps = 1e-5;
  Tensor out = tape->make(
      m, d, wants_grad(x) || wants_grad(gain) || wants_grad(bias));
  // cache normalized rows and 1/sigma for the backward pass
  auto xhat = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(m) * d);
  auto inv_sigma = std::make_shared<std::vector<double>>(m);
  const double* xv = x.value().data();
  const double* gv = gain.value().data();
  const double* bv = bias.value().data();
  double* ov = tape->node(out.node).value.data();
  for (int i = 0; i < m; ++i) {
    const double* row = xv + static_cast<std::size_t>(i) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= d;
    double is = 1.0 / std::sqrt(var + kEps);
    (*inv_sigma)[i] = is;
    for (int j = 0; j < d; ++j) {
      double h = (row[j] - mean) * is;
      (*xhat)[static_cast<std::size_t>(i) * d + j] = h;
      ov[static_cast<std::size_t>(i) * d + j] = gv[j] * h + bv[j];
    }
  }
  tape->check_finite(out, "layernorm");
  tape->on_backward(out, [tape, xi = x.node, gi = gain.node, bi = bias.node,
                          oi = out.node, m, d, xhat, inv_sigma]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& xn = tape->node(xi);
    Tape::Node& gn = tape->node(gi);
    Tape::Node& bn = tape->node(bi);
    const double* gv = gn.value.data();
    for (int i = 0; i < m; ++i) {
      const double* dy = on.grad.data() + static_cast<std::size_t>(i) * d;
      const double* h = xhat->data() + static_cast<std::size_t>(i) * d;
      if (gn.requires_grad)
        for (int j = 0; j < d; ++j) gn.grad[j] += dy[j] * h[j];
      if (bn.requires_grad)
        for (int j = 0; j < d; ++j) bn.grad[j] += dy[j];
      if (xn.requires_grad) {
        double sum_dh = 0.0, sum_dh_h = 0.0;
        for (int j = 0; j < d; ++j) {
          double dh = dy[j] * gv[j];
          sum_dh += dh;
          sum_dh_h += dh * h[j];
        }
        double* dx = xn.grad.data() + static_cast<std::size_t>(i) * d;
        double is = (*inv_sigma)[i];
        for (int j = 0; j < d; ++j) {
          double dh = dy[j] * gv[j];
          dx[j] += is * (dh - sum_dh / d - h[j] * sum_dh_h / d);
        }
      }
    }
  });
  return out;
}

Tensor concat_rows(Tensor a, Tensor b) {
  Tape* tape = same_tape(a, b);
  if (a.cols() != b.cols())
    throw std::invalid_argument("concat_rows: column mismatch");
  const int ma = a.rows(), mb = b.rows(), n = a.cols();
  Tensor out = tape->make(ma + mb, n, wants_grad(a) || wants_grad(b));
  std::vector<double>& ov = tape->node(out.node).value;
  std::memcpy(ov.data(), a.value().data(), a.value().size() * sizeof(double));
  std::memcpy(ov.data() + a.value().size(), b.value().data(),
              b.value().size() * sizeof(double));
  tape->on_backward(out, [tape, ai = a.node, bi = b.node, oi = out.node, ma,
                          mb, n]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    Tape::Node& bn = tape->node(bi);
    const std::size_t na = static_cast<std::size_t>(ma) * n;
    if (an.requires_grad)
      for (std::size_t i = 0; i < na; ++i) an.grad[i] += on.grad[i];
    if (bn.requires_grad)
      for (std::size_t i = 0; i < static_cast<std::size_t>(mb) * n; ++i)
        bn.grad[i] += on.grad[na + i];
  });
  return out;
}

Tensor concat_cols(Tensor a, Tensor b) {
  Tape* tape = same_tape(a, b);
  if (a.rows() != b.rows())
    throw std::invalid_argument("concat_cols: row mismatch");
  const int m = a.rows(), na = a.cols(), nb = b.cols();
  Tensor out = tape->make(m, na + nb, wants_grad(a) || wants_grad(b));
  const double* av = a.value().data();
  const double* bv = b.value().data();
  double* ov = tape->node(out.node).value.data();
  for (int i = 0; i < m; ++i) {
    std::memcpy(ov + static_cast<std::size_t>(i) * (na + nb), av + static_cast<std::size_t>(i) * na,
                na * sizeof(double));
    std::memcpy(ov + static_cast<std::size_t>(i) * (na + nb) + na,
                bv + static_cast<std::size_t>(i) * nb, nb * sizeof(double));
  }
  tape->on_backward(out, [tape, ai = a.node, bi = b.node, oi = out.node, m, na,
                          nb]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    Tape::Node& bn = tape->node(bi);
    for (int i = 0; i < m; ++i) {
      const double* g = on.grad.data() + static_cast<std::size_t>(i) * (na + nb);
      if (an.requires_grad)
        for (int j = 0; j < na; ++j)
          an.grad[static_cast<std::size_t>(i) * na + j] += g[j];
      if (bn.requires_grad)
        for (int j = 0; j < nb; ++j)
          bn.grad[static_cast<std::size_t>(i) * nb + j] += g[na + j];
    }
  });
  return out;
}

Tensor slice_rows(Tensor a, int r0, int r1) {
  Tape* tape = a.tape;
  if (r0 < 0 || r1 > a.rows() || r0 >= r1)
    throw std::invalid_argument("slice_rows: bad range");
  const int n = a.cols();
  Tensor out = tape->make(r1 - r0, n, wants_grad(a));
  std::memcpy(tape->node(out.node).value.data(),
              a.value().data() + static_cast<std::size_t>(r0) * n,
              static_cast<std::size_t>(r1 - r0) * n * sizeof(double));
  tape->on_backward(out, [tape, ai = a.node, oi = out.node, r0, r1, n]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    for (std::size_t i = 0; i < static_cast<std::size_t>(r1 - r0) * n; ++i)
      an.grad[static_cast<std::size_t>(r0) * n + i] += on.grad[i];
  });
  return out;
}

Tensor slice_cols(Tensor a, int c0, int c1) {
  Tape* tape = a.tape;
  if (c0 < 0 || c1 > a.cols() || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range");
  const int m = a.rows(), n = a.cols(), w = c1 - c0;
  Tensor out = tape->make(m, w, wants_grad(a));
  const double* av = a.value().data();
  double* ov = tape->node(out.node).value.data();
  for (int i = 0; i < m; ++i)
    std::memcpy(ov + static_cast<std::size_t>(i) * w,
                av + static_cast<std::size_t>(i) * n + c0, w * sizeof(double));
  tape->on_backward(out, [tape, ai = a.node, oi = out.node, m, n, c0, w]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        an.grad[static_cast<std::size_t>(i) * n + c0 + j] +=
            on.grad[static_cast<std::size_t>(i) * w + j];
  });
  return out;
}

Tensor reduce_sum(Tensor a) {
  Tape* tape = a.tape;
  Tensor out = tape->make(1, 1, wants_grad(a));
  double s = 0.0;
  for (double v : a.value()) s += v;
  tape->node(out.node).value[0] = s;
  tape->check_finite(out, "reduce_sum");
  tape->on_backward(out, [tape, ai = a.node, oi = out.node]() {
    Tape::Node& an = tape->node(ai);
    const double g = tape->node(oi).grad[0];
    for (double& dg : an.grad) dg += g;
  });
  return out;
}

Tensor reduce_mean(Tensor a) {
  return scale(reduce_sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor row_sums(Tensor a) {
  Tape* tape = a.tape;
  const int m = a.rows(), n = a.cols();
  Tensor out = tape->make(m, 1, wants_grad(a));
  const double* av = a.value().data();
  double* ov = tape->node(out.node).value.data();
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += av[static_cast<std::size_t>(i) * n + j];
    ov[i] = s;
  }
  tape->check_finite(out, "row_sums");
  tape->on_backward(out, [tape, ai = a.node, oi = out.node, m, n]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        an.grad[static_cast<std::size_t>(i) * n + j] += on.grad[i];
  });
  return out;
}

Tensor gather_rows(Tensor a, const std::vector<int>& rows) {
  Tape* tape = a.tape;
  const int n = a.cols();
  if (rows.empty()) throw std::invalid_argument("gather_rows: empty index set");
  for (int r : rows)
    if (r < 0 || r >= a.rows())
      throw std::invalid_argument("gather_rows: index out of range");
  Tensor out = tape->make(static_cast<int>(rows.size()), n, wants_grad(a));
  const double* av = a.value().data();
  double* ov = tape->node(out.node).value.data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::memcpy(ov + i * n, av + static_cast<std::size_t>(rows[i]) * n,
                n * sizeof(double));
  tape->on_backward(out, [tape, ai = a.node, oi = out.node, rows, n]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    // serial scatter-add keeps accumulation order fixed
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (int j = 0; j < n; ++j)
        an.grad[static_cast<std::size_t>(rows[i]) * n + j] +=
            on.grad[i * n + j];
  });
  return out;
}

Tensor gather_pairs(Tensor a, const std::vector<int>& row_idx,
                    const std::vector<int>& col_idx) {
  Tape* tape = a.tape;
  if (row_idx.size() != col_idx.size() || row_idx.empty())
    throw std::invalid_argument("gather_pairs: bad index lists");
  const int n = a.cols();
  for (std::size_t i = 0; i < row_idx.size(); ++i)
    if (row_idx[i] < 0 || row_idx[i] >= a.rows() || col_idx[i] < 0 ||
        col_idx[i] >= n)
      throw std::invalid_argument("gather_pairs: index out of range");
  Tensor out = tape->make(static_cast<int>(row_idx.size()), 1, wants_grad(a));
  const double* av = a.value().data();
  double* ov = tape->node(out.node).value.data();
  for (std::size_t i = 0; i < row_idx.size(); ++i)
    ov[i] = av[static_cast<std::size_t>(row_idx[i]) * n + col_idx[i]];
  tape->on_backward(out, [tape, ai = a.node, oi = out.node, row_idx, col_idx,
                          n]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    for (std::size_t i = 0; i < row_idx.size(); ++i)
      an.grad[static_cast<std::size_t>(row_idx[i]) * n + col_idx[i]] +=
          on.grad[i];
  });
  return out;
}

Tensor weighted_gather(Tensor a, const std::vector<int>& indices,
                       const std::vector<double>& weights, int k) {
  Tape* tape = a.tape;
  if (k < 1 || indices.size() != weights.size() || indices.size() % k != 0)
    throw std::invalid_argument("weighted_gather: bad index/weight layout");
  const int m = static_cast<int>(indices.size()) / k;
  const int n = a.cols();
  for (int idx : indices)
    if (idx < 0 || idx >= a.rows())
      throw std::invalid_argument("weighted_gather: index out of range");
  Tensor out = tape->make(m, n, wants_grad(a));
  const double* av = a.value().data();
  double* ov = tape->node(out.node).value.data();
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* row = ov + static_cast<std::size_t>(i) * n;
    std::fill(row, row + n, 0.0);
    for (int j = 0; j < k; ++j) {
      const double w = weights[static_cast<std::size_t>(i) * k + j];
      if (w == 0.0) continue;
      const double* src =
          av + static_cast<std::size_t>(indices[static_cast<std::size_t>(i) * k + j]) * n;
      for (int c = 0; c < n; ++c) row[c] += w * src[c];
    }
  }
  tape->check_finite(out, "weighted_gather");
  tape->on_backward(out, [tape, ai = a.node, oi = out.node, indices, weights,
                          k, m, n]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    for (int i = 0; i < m; ++i) {
      const double* g = on.grad.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < k; ++j) {
        const double w = weights[static_cast<std::size_t>(i) * k + j];
        if (w == 0.0) continue;
        double* dst =
            an.grad.data() +
            static_cast<std::size_t>(indices[static_cast<std::size_t>(i) * k + j]) * n;
        for (int c = 0; c < n; ++c) dst[c] += w * g[c];
      }
    }
  });
  return out;
}

Tensor group_maxpool(Tensor a, int group_size) {
  Tape* tape = a.tape;
  const int m = a.rows(), n = a.cols();
  if (group_size < 1 || m % group_size != 0)
    throw std::invalid_argument("group_maxpool: rows not divisible by group");
  const int g = m / group_size;
  Tensor out = tape->make(g, n, wants_grad(a));
  auto argrow = std::make_shared<std::vector<int>>(
      static_cast<std::size_t>(g) * n);
  const double* av = a.value().data();
  double* ov = tape->node(out.node).value.data();
#pragma omp parallel for schedule(static)
  for (int gi = 0; gi < g; ++gi) {
    const int r0 = gi * group_size;
    for (int c = 0; c < n; ++c) {
      double best = av[static_cast<std::size_t>(r0) * n + c];
      int best_row = r0;
      for (int r = r0 + 1; r < r0 + group_size; ++r) {
        double v = av[static_cast<std::size_t>(r) * n + c];
        if (v > best) {
          best = v;
          best_row = r;
        }
      }
      ov[static_cast<std::size_t>(gi) * n + c] = best;
      (*argrow)[static_cast<std::size_t>(gi) * n + c] = best_row;
    }
  }
  tape->on_backward(out, [tape, ai = a.node, oi = out.node, argrow, g, n]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    for (int gi = 0; gi < g; ++gi)
      for (int c = 0; c < n; ++c)
        an.grad[static_cast<std::size_t>((*argrow)[static_cast<std::size_t>(gi) * n + c]) * n +
                c] += on.grad[static_cast<std::size_t>(gi) * n + c];
  });
  return out;
}

namespace {

void require_three_cols(Tensor a, const char* op) {
  if (a.cols() != 3)
    throw std::invalid_argument(std::string(op) + ": expects [m x 3]");
}

}  // namespace

Tensor rows_norm(Tensor a) {
  require_three_cols(a, "rows_norm");
  Tape* tape = a.tape;
  const int m = a.rows();
  Tensor out = tape->make(m, 1, wants_grad(a));
  const double* av = a.value().data();
  double* ov = tape->node(out.node).value.data();
  for (int i = 0; i < m; ++i) {
    const double* x = av + 3 * static_cast<std::size_t>(i);
    ov[i] = std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + 1e-24);
  }
  tape->on_backward(out, [tape, ai = a.node, oi = out.node, m]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    for (int i = 0; i < m; ++i) {
      const double* x = an.value.data() + 3 * static_cast<std::size_t>(i);
      const double inv = on.grad[i] / on.value[i];
      for (int c = 0; c < 3; ++c)
        an.grad[3 * static_cast<std::size_t>(i) + c] += inv * x[c];
    }
  });
  return out;
}

Tensor rows_normalize(Tensor a) {
  require_three_cols(a, "rows_normalize");
  Tape* tape = a.tape;
  const int m = a.rows();
  Tensor out = tape->make(m, 3, wants_grad(a));
  auto norms = std::make_shared<std::vector<double>>(m);
  const double* av = a.value().data();
  double* ov = tape->node(out.node).value.data();
  for (int i = 0; i < m; ++i) {
    const double* x = av + 3 * static_cast<std::size_t>(i);
    double nrm = std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + 1e-24);
    (*norms)[i] = nrm;
    const double inv = 1.0 / nrm;
    for (int c = 0; c < 3; ++c) ov[3 * static_cast<std::size_t>(i) + c] = x[c] * inv;
  }
  tape->on_backward(out, [tape, ai = a.node, oi = out.node, norms, m]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    for (int i = 0; i < m; ++i) {
      const double* x = an.value.data() + 3 * static_cast<std::size_t>(i);
      const double* dy = on.grad.data() + 3 * static_cast<std::size_t>(i);
      const double nrm = (*norms)[i];
      double dot = dy[0] * x[0] + dy[1] * x[1] + dy[2] * x[2];
      for (int c = 0; c < 3; ++c)
        an.grad[3 * static_cast<std::size_t>(i) + c] +=
            dy[c] / nrm - x[c] * dot / (nrm * nrm * nrm);
    }
  });
  return out;
}

Tensor rows_dot(Tensor a, Tensor b) {
  require_three_cols(a, "rows_dot");
  require_same_shape(a, b, "rows_dot");
  Tape* tape = same_tape(a, b);
  const int m = a.rows();
  Tensor out = tape->make(m, 1, wants_grad(a) || wants_grad(b));
  const double* av = a.value().data();
  const double* bv = b.value().data();
  double* ov = tape->node(out.node).value.data();
  for (int i = 0; i < m; ++i) {
    const std::size_t o = 3 * static_cast<std::size_t>(i);
    ov[i] = av[o] * bv[o] + av[o + 1] * bv[o + 1] + av[o + 2] * bv[o + 2];
  }
  tape->on_backward(out, [tape, ai = a.node, bi = b.node, oi = out.node, m]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    Tape::Node& bn = tape->node(bi);
    for (int i = 0; i < m; ++i) {
      const std::size_t o = 3 * static_cast<std::size_t>(i);
      for (int c = 0; c < 3; ++c) {
        if (an.requires_grad) an.grad[o + c] += on.grad[i] * bn.value[o + c];
        if (bn.requires_grad) bn.grad[o + c] += on.grad[i] * an.value[o + c];
      }
    }
  });
  return out;
}

Tensor rows_cross(Tensor a, Tensor b) {
  require_three_cols(a, "rows_cross");
  require_same_shape(a, b, "rows_cross");
  Tape* tape = same_tape(a, b);
  const int m = a.rows();
  Tensor out = tape->make(m, 3, wants_grad(a) || wants_grad(b));
  const double* av = a.value().data();
  const double* bv = b.value().data();
  double* ov = tape->node(out.node).value.data();
  for (int i = 0; i < m; ++i) {
    const std::size_t o = 3 * static_cast<std::size_t>(i);
    ov[o] = av[o + 1] * bv[o + 2] - av[o + 2] * bv[o + 1];
    ov[o + 1] = av[o + 2] * bv[o] - av[o] * bv[o + 2];
    ov[o + 2] = av[o] * bv[o + 1] - av[o + 1] * bv[o];
  }
  tape->on_backward(out, [tape, ai = a.node, bi = b.node, oi = out.node, m]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    Tape::Node& bn = tape->node(bi);
    for (int i = 0; i < m; ++i) {
      const std::size_t o = 3 * static_cast<std::size_t>(i);
      const double* g = on.grad.data() + o;
      // c = a x b: da = b x g, db = g x a
      if (an.requires_grad) {
        an.grad[o] += bn.value[o + 1] * g[2] - bn.value[o + 2] * g[1];
        an.grad[o + 1] += bn.value[o + 2] * g[0] - bn.value[o] * g[2];
        an.grad[o + 2] += bn.value[o] * g[1] - bn.value[o + 1] * g[0];
      }
      if (bn.requires_grad) {
        bn.grad[o] += g[1] * an.value[o + 2] - g[2] * an.value[o + 1];
        bn.grad[o + 1] += g[2] * an.value[o] - g[0] * an.value[o + 2];
        bn.grad[o + 2] += g[0] * an.value[o + 1] - g[1] * an.value[o];
      }
    }
  });
  return out;
}

Tensor rows_scale(Tensor a, Tensor s) {
  Tape* tape = same_tape(a, s);
  if (s.rows() != a.rows() || s.cols() != 1)
    throw std::invalid_argument("rows_scale: scale must be [m x 1]");
  const int m = a.rows(), n = a.cols();
  Tensor out = tape->make(m, n, wants_grad(a) || wants_grad(s));
  const double* av = a.value().data();
  const double* sv = s.value().data();
  double* ov = tape->node(out.node).value.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      ov[static_cast<std::size_t>(i) * n + j] =
          av[static_cast<std::size_t>(i) * n + j] * sv[i];
  tape->check_finite(out, "rows_scale");
  tape->on_backward(out, [tape, ai = a.node, si = s.node, oi = out.node, m,
                          n]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& an = tape->node(ai);
    Tape::Node& sn = tape->node(si);
    for (int i = 0; i < m; ++i) {
      const double* g = on.grad.data() + static_cast<std::size_t>(i) * n;
      if (an.requires_grad)
        for (int j = 0; j < n; ++j)
          an.grad[static_cast<std::size_t>(i) * n + j] += g[j] * sn.value[i];
      if (sn.requires_grad) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j)
          acc += g[j] * an.value[static_cast<std::size_t>(i) * n + j];
        sn.grad[i] += acc;
      }
    }
  });
  return out;
}

Tensor bce_elem(Tensor p, Tensor targets) {
  require_same_shape(p, targets, "bce_elem");
  Tape* tape = same_tape(p, targets);
  constexpr double kLo = 1e-7, kHi = 1.0 - 1e-7;
  const int m = p.rows(), n = p.cols();
  Tensor out = tape->make(m, n, wants_grad(p));
  const double* pv = p.value().data();
  const double* tv = targets.value().data();
  double* ov = tape->node(out.node).value.data();
  for (std::size_t i = 0; i < static_cast<std::size_t>(m) * n; ++i) {
    double ph = std::clamp(pv[i], kLo, kHi);
    ov[i] = -(tv[i] * std::log(ph) + (1.0 - tv[i]) * std::log(1.0 - ph));
  }
  tape->check_finite(out, "bce_elem");
  tape->on_backward(out, [tape, pi = p.node, ti = targets.node,
                          oi = out.node]() {
    const Tape::Node& on = tape->node(oi);
    Tape::Node& pn = tape->node(pi);
    const Tape::Node& tn = tape->node(ti);
    for (std::size_t i = 0; i < on.value.size(); ++i) {
      double pr = pn.value[i];
      if (pr <= kLo || pr >= kHi) continue;  // clamped region: zero slope
      pn.grad[i] += on.grad[i] * (pr - tn.value[i]) / (pr * (1.0 - pr));
    }
  });
  return out;
}

AttentionResult masked_attention(Tensor q, Tensor k, Tensor v,
                                 const std::vector<std::uint8_t>& mask) {
  Tape* tape = same_tape(q, k);
  same_tape(k, v);
  const int Q = q.rows(), d = q.cols(), M = k.rows();
  if (k.cols() != d || v.rows() != M || v.cols() != d)
    throw std::invalid_argument("masked_attention: shape mismatch");
  if (mask.size() != static_cast<std::size_t>(Q) * M)
    throw std::invalid_argument("masked_attention: mask shape mismatch");

  std::vector<double> additive(mask.size(), 0.0);
  for (int i = 0; i < Q; ++i) {
    bool any = false;
    for (int j = 0; j < M; ++j) any = any || mask[static_cast<std::size_t>(i) * M + j];
    if (!any) continue;  // all-false row falls back to all-allowed (zeros)
    for (int j = 0; j < M; ++j)
      if (!mask[static_cast<std::size_t>(i) * M + j])
        additive[static_cast<std::size_t>(i) * M + j] = -1e9;
  }
  Tensor bias = tape->constant(Q, M, additive);
  Tensor logits = add(scale(matmul_nt(q, k), 1.0 / std::sqrt(double(d))), bias);
  Tensor weights = softmax_rows(logits);
  return AttentionResult{matmul(weights, v), weights};
}

double grad_check(
    const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
    const std::vector<GradCheckInput>& inputs, double step, double denom_floor) {
  // analytic pass
  std::vector<double> analytic;
  {
    Tape tape;
    std::vector<Tensor> ts;
    for (const GradCheckInput& in : inputs)
      ts.push_back(tape.input(in.rows, in.cols, in.data, true));
    Tensor loss = f(tape, ts);
    tape.backward(loss);
    for (const Tensor& t : ts)
      analytic.insert(analytic.end(), t.grad().begin(), t.grad().end());
  }

  auto eval = [&](const std::vector<GradCheckInput>& shifted) {
    Tape tape;
    std::vector<Tensor> ts;
    for (const GradCheckInput& in : shifted)
      ts.push_back(tape.input(in.rows, in.cols, in.data, false));
    return f(tape, ts).scalar();
  };

  double worst = 0.0;
  std::size_t flat = 0;
  std::vector<GradCheckInput> work = inputs;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].data.size(); ++i, ++flat) {
      const double saved = work[t].data[i];
      work[t].data[i] = saved + step;
      const double up = eval(work);
      work[t].data[i] = saved - step;
      const double down = eval(work);
      work[t].data[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[flat];
      const double err = std::abs(a - numeric) /
                         std::max(denom_floor, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace m2t2
