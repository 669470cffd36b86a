#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <vector>

#include "m2t2/rng.hpp"
#include "m2t2/tensor.hpp"

using namespace m2t2;

namespace {

GradCheckInput random_input(Pcg32& rng, int rows, int cols, double scale = 1.0) {
  GradCheckInput in;
  in.rows = rows;
  in.cols = cols;
  in.data.resize(static_cast<std::size_t>(rows) * cols);
  for (double& v : in.data) v = scale * rng.normal();
  return in;
}

// Weighted sum with fixed coefficients so that gradient errors cannot hide
// behind symmetric reductions (e.g. sum of softmax rows is constant). Seeded
// so repeated evaluations of the same loss function agree exactly.
Tensor weighted_sum(Tape& tape, Tensor t, std::uint64_t seed) {
  Pcg32 rng(seed, 1);
  std::vector<double> w(static_cast<std::size_t>(t.rows()) * t.cols());
  for (double& v : w) v = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1 : 1);
  return reduce_sum(mul(t, tape.constant(t.rows(), t.cols(), w)));
}

int rand_dim(Pcg32& rng) { return 1 + static_cast<int>(rng.uniform_index(5)); }

}  // namespace

TEST_CASE("matmul forward examples") {
  Tape tape;
  std::vector<double> eye = {1, 0, 0, 1};
  std::vector<double> x = {3, -1, 2, 5};
  Tensor xt = tape.constant(2, 2, x);
  Tensor prod = matmul(tape.constant(2, 2, eye), xt);
  CHECK(std::memcmp(prod.value().data(), x.data(), 4 * 8) == 0);

  Tensor a = tape.constant(2, 2, std::vector<double>{1, 2, 3, 4});
  Tensor ones = tape.constant(2, 1, std::vector<double>{1, 1});
  Tensor b = matmul(a, ones);
  CHECK(b.value() == std::vector<double>{3, 7});

  CHECK_THROWS_AS(matmul(a, tape.constant(3, 1, std::vector<double>{1, 1, 1})),
                  std::invalid_argument);
}

TEST_CASE("backward basics: sum and sum of squares") {
  Tape tape;
  std::vector<double> xv = {0.5, -1.25, 2.0, 0.0, 3.5, -0.75};
  Tensor x = tape.input(2, 3, xv, true);
  tape.backward(reduce_sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  Tape tape2;
  Tensor y = tape2.input(2, 3, xv, true);
  tape2.backward(reduce_sum(mul(y, y)));
  for (int i = 0; i < 6; ++i) CHECK(y.grad()[i] == 2.0 * xv[i]);
}

TEST_CASE("sigmoid, softmax and layernorm forward anchors") {
  Tape tape;
  Tensor zero = tape.full(1, 1, 0.0);
  CHECK(sigmoid(zero).scalar() == 0.5);

  Tensor uniform_logits = tape.full(2, 4, 1.7);
  for (double w : softmax_rows(uniform_logits).value())
    CHECK(w == doctest::Approx(0.25).epsilon(1e-15));

  // constant row normalizes to zeros, leaving only the bias
  Tensor constant_row = tape.full(1, 3, 5.0);
  Tensor gain = tape.full(1, 3, 2.0);
  Tensor bias = tape.constant(1, 3, std::vector<double>{0.1, 0.2, 0.3});
  Tensor ln = layernorm(constant_row, gain, bias);
  CHECK(ln.value()[0] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(ln.value()[2] == doctest::Approx(0.3).epsilon(1e-12));

  // (-1, 1) is already normalized up to the epsilon inside the variance
  Tensor pm = tape.constant(1, 2, std::vector<double>{-1.0, 1.0});
  Tensor g1 = tape.full(1, 2, 1.0);
  Tensor b0 = tape.full(1, 2, 0.0);
  Tensor out = layernorm(pm, g1, b0);
  CHECK(out.value()[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(out.value()[1] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("finite differences: dense and elementwise ops") {
  Pcg32 rng(101, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = rand_dim(rng), k = rand_dim(rng), n = rand_dim(rng);
    const std::uint64_t wseed = 200 + trial;

    auto fd = [&](auto&& f, std::vector<GradCheckInput> ins) {
      double err = grad_check(f, ins);
      CHECK(err < 1e-4);
    };

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, matmul(in[0], in[1]), wseed);
       },
       {random_input(rng, m, k), random_input(rng, k, n)});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, matmul_nt(in[0], in[1]), wseed);
       },
       {random_input(rng, m, k), random_input(rng, n, k)});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, add(in[0], in[1]), wseed);
       },
       {random_input(rng, m, n), random_input(rng, m, n)});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, sub(in[0], in[1]), wseed);
       },
       {random_input(rng, m, n), random_input(rng, m, n)});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, mul(in[0], in[1]), wseed);
       },
       {random_input(rng, m, n), random_input(rng, m, n)});

    // keep denominators away from zero
    GradCheckInput denom = random_input(rng, m, n);
    for (double& v : denom.data) v = (v < 0 ? -1.0 : 1.0) * (0.5 + std::abs(v));
    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, div(in[0], in[1]), wseed);
       },
       {random_input(rng, m, n), denom});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, scale(in[0], -1.7), wseed);
       },
       {random_input(rng, m, n)});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, add_constant(in[0], 0.37), wseed);
       },
       {random_input(rng, m, n)});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, add_rowwise(in[0], in[1]), wseed);
       },
       {random_input(rng, m, n), random_input(rng, 1, n)});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, sigmoid(in[0]), wseed);
       },
       {random_input(rng, m, n)});

    // relu: push values away from the kink
    GradCheckInput r = random_input(rng, m, n);
    for (double& v : r.data) v += (v >= 0 ? 0.01 : -0.01);
    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, relu(in[0]), wseed);
       },
       {r});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, softmax_rows(in[0]), wseed);
       },
       {random_input(rng, m, n)});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, layernorm(in[0], in[1], in[2]), wseed);
       },
       {random_input(rng, m, n + 1), random_input(rng, 1, n + 1),
        random_input(rng, 1, n + 1)});
  }
}

TEST_CASE("finite differences: shape, gather and pooling ops") {
  Pcg32 rng(303, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 2 + static_cast<int>(rng.uniform_index(4));
    const int n = 2 + static_cast<int>(rng.uniform_index(4));
    const std::uint64_t wseed = 400 + trial;

    auto fd = [&](auto&& f, std::vector<GradCheckInput> ins) {
      double err = grad_check(f, ins);
      CHECK(err < 1e-4);
    };

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, concat_rows(in[0], in[1]), wseed);
       },
       {random_input(rng, m, n), random_input(rng, m + 1, n)});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, concat_cols(in[0], in[1]), wseed);
       },
       {random_input(rng, m, n), random_input(rng, m, n + 2)});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, slice_rows(in[0], 1, m), wseed);
       },
       {random_input(rng, m, n)});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, slice_cols(in[0], 1, n), wseed);
       },
       {random_input(rng, m, n)});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return scale(reduce_mean(in[0]), 3.0);
       },
       {random_input(rng, m, n)});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, row_sums(in[0]), wseed);
       },
       {random_input(rng, m, n)});

    // repeated indices exercise scatter-add accumulation
    std::vector<int> ridx = {0, m - 1, 0, 1};
    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, gather_rows(in[0], ridx), wseed);
       },
       {random_input(rng, m, n)});

    std::vector<int> prow = {0, m - 1, 0}, pcol = {0, n - 1, 0};
    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, gather_pairs(in[0], prow, pcol), wseed);
       },
       {random_input(rng, m, n)});

    const int k = 2;
    std::vector<int> widx;
    std::vector<double> wts;
    for (int i = 0; i < 3 * k; ++i) {
      widx.push_back(static_cast<int>(rng.uniform_index(m)));
      wts.push_back(i % 5 == 0 ? 0.0 : rng.uniform(0.1, 1.0));
    }
    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, weighted_gather(in[0], widx, wts, k), wseed);
       },
       {random_input(rng, m, n)});

    const int groups = 3, gsz = 4;
    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, group_maxpool(in[0], gsz), wseed);
       },
       {random_input(rng, groups * gsz, n)});
  }
}

TEST_CASE("finite differences: row-vector geometry ops") {
  Pcg32 rng(505, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + static_cast<int>(rng.uniform_index(5));
    const std::uint64_t wseed = 600 + trial;

    auto fd = [&](auto&& f, std::vector<GradCheckInput> ins) {
      double err = grad_check(f, ins);
      CHECK(err < 1e-4);
    };

    // keep rows away from the origin so normalization is smooth
    auto away = [&](GradCheckInput in) {
      for (int i = 0; i < in.rows; ++i) {
        double* r = in.data.data() + 3 * i;
        double nrm = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
        if (nrm < 0.3)
          for (int c = 0; c < 3; ++c) r[c] += (r[c] >= 0 ? 0.5 : -0.5);
      }
      return in;
    };

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, rows_normalize(in[0]), wseed);
       },
       {away(random_input(rng, m, 3))});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, rows_norm(in[0]), wseed);
       },
       {away(random_input(rng, m, 3))});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, rows_dot(in[0], in[1]), wseed);
       },
       {random_input(rng, m, 3), random_input(rng, m, 3)});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, rows_cross(in[0], in[1]), wseed);
       },
       {random_input(rng, m, 3), random_input(rng, m, 3)});

    fd([&](Tape& t, const std::vector<Tensor>& in) {
         return weighted_sum(t, rows_scale(in[0], in[1]), wseed);
       },
       {random_input(rng, m, 4), random_input(rng, m, 1)});
  }
}

TEST_CASE("finite differences: bce against binary targets") {
  Pcg32 rng(707, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = rand_dim(rng), n = rand_dim(rng);
    std::vector<double> targets(static_cast<std::size_t>(m) * n);
    for (double& t : targets) t = rng.uniform() < 0.5 ? 0.0 : 1.0;
    GradCheckInput probs;
    probs.rows = m;
    probs.cols = n;
    for (std::size_t i = 0; i < targets.size(); ++i)
      probs.data.push_back(rng.uniform(0.05, 0.95));
    const std::uint64_t wseed = 800 + trial;
    double err = grad_check(
        [&](Tape& t, const std::vector<Tensor>& in) {
          Tensor tgt = t.constant(m, n, targets);
          return weighted_sum(t, bce_elem(in[0], tgt), wseed);
        },
        {probs});
    CHECK(err < 1e-4);
  }
  // clamped probabilities have zero slope and finite value
  Tape tape;
  Tensor p = tape.input(1, 2, std::vector<double>{1e-9, 1.0 - 1e-9}, true);
  Tensor t01 = tape.constant(1, 2, std::vector<double>{1.0, 0.0});
  Tensor loss = reduce_sum(bce_elem(p, t01));
  CHECK(std::isfinite(loss.scalar()));
  tape.backward(loss);
  CHECK(p.grad()[0] == 0.0);
  CHECK(p.grad()[1] == 0.0);
}

TEST_CASE("masked attention: identities and fallback") {
  Pcg32 rng(909, 0);
  const int Q = 4, M = 5, d = 3;
  std::vector<double> qv(Q * d), kv(M * d), vv(M * d);
  for (double& x : qv) x = rng.normal();
  for (double& x : kv) x = rng.normal();
  for (double& x : vv) x = rng.normal();

  Tape tape;
  Tensor q = tape.constant(Q, d, qv);
  Tensor k = tape.constant(M, d, kv);
  Tensor v = tape.constant(M, d, vv);

  // all-true mask equals plain scaled dot-product attention
  std::vector<std::uint8_t> all_true(Q * M, 1);
  AttentionResult plain = masked_attention(q, k, v, all_true);
  Tensor ref = matmul(
      softmax_rows(scale(matmul_nt(q, k), 1.0 / std::sqrt(double(d)))), v);
  for (int i = 0; i < Q * d; ++i)
    CHECK(plain.out.value()[i] == doctest::Approx(ref.value()[i]).epsilon(1e-12));

  // single allowed key: output equals that key's value row
  std::vector<std::uint8_t> single(Q * M, 0);
  for (int i = 0; i < Q; ++i) single[i * M + (i % M)] = 1;
  AttentionResult one = masked_attention(q, k, v, single);
  for (int i = 0; i < Q; ++i)
    for (int c = 0; c < d; ++c)
      CHECK(one.out.at(i, c) ==
            doctest::Approx(vv[(i % M) * d + c]).epsilon(1e-9));

  // masked-out keys receive vanishing weight; rows stay convex combinations
  for (int i = 0; i < Q; ++i) {
    double sum = 0.0;
    for (int j = 0; j < M; ++j) {
      double w = one.weights.at(i, j);
      CHECK(w >= 0.0);
      sum += w;
      if (!single[i * M + j]) CHECK(w <= 1e-30);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }

  // an all-false row behaves exactly like an all-true row
  std::vector<std::uint8_t> with_empty = all_true;
  for (int j = 0; j < M; ++j) with_empty[2 * M + j] = 0;
  AttentionResult fb = masked_attention(q, k, v, with_empty);
  for (int c = 0; c < d; ++c) CHECK(fb.out.at(2, c) == plain.out.at(2, c));

  // gradients through q, k, v
  const std::uint64_t wseed = 1000;
  std::vector<std::uint8_t> mixed(Q * M, 0);
  for (std::size_t i = 0; i < mixed.size(); ++i)
    mixed[i] = rng.uniform() < 0.6 ? 1 : 0;
  GradCheckInput qi{Q, d, qv}, ki{M, d, kv}, vi{M, d, vv};
  double err = grad_check(
      [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(
            t, masked_attention(in[0], in[1], in[2], mixed).out, wseed);
      },
      {qi, ki, vi});
  CHECK(err < 1e-4);
}

TEST_CASE("grad_check is exact for linear maps and catches corrupt backwards") {
  Pcg32 rng(1111, 0);
  GradCheckInput x = random_input(rng, 3, 4);
  std::vector<double> w(12);
  for (double& v : w) v = rng.normal();

  double linear_err = grad_check(
      [&](Tape& t, const std::vector<Tensor>& in) {
        return reduce_sum(mul(in[0], t.constant(3, 4, w)));
      },
      {x});
  CHECK(linear_err < 1e-9);

  // deliberately wrong backward rule: reported gradient is 1.1x the true one
  double corrupt_err = grad_check(
      [&](Tape& t, const std::vector<Tensor>& in) {
        Tensor bad = t.custom_unary(
            in[0], [](double v) { return v * v; },
            [](double g, double v, double) { return g * 2.2 * v; });
        return reduce_sum(bad);
      },
      {x});
  CHECK(corrupt_err > 1e-2);
}

TEST_CASE("backward is bit-deterministic across runs") {
  Pcg32 rng(1212, 0);
  std::vector<double> xv(20 * 6), wv(6 * 6);
  for (double& v : xv) v = rng.normal();
  for (double& v : wv) v = rng.normal();
  std::vector<int> idx = {3, 1, 3, 7, 19, 0, 1, 1};

  auto run = [&](std::vector<double>& gx, std::vector<double>& gw) {
    Tape tape;
    Tensor x = tape.input(20, 6, xv, true);
    Tensor w = tape.input(6, 6, wv, true);
    Tensor h = relu(matmul(x, w));
    Tensor g = gather_rows(h, idx);
    Tensor s = softmax_rows(g);
    tape.backward(reduce_sum(mul(s, sigmoid(g))));
    gx = x.grad();
    gw = w.grad();
  };
  std::vector<double> gx1, gw1, gx2, gw2;
  run(gx1, gw1);
  run(gx2, gw2);
  CHECK(std::memcmp(gx1.data(), gx2.data(), gx1.size() * 8) == 0);
  CHECK(std::memcmp(gw1.data(), gw2.data(), gw1.size() * 8) == 0);
}

TEST_CASE("backward rejects non-scalar losses") {
  Tape tape;
  Tensor x = tape.input(2, 2, std::vector<double>{1, 2, 3, 4}, true);
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}
