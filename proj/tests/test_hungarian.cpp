#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "m2t2/hungarian.hpp"
#include "m2t2/rng.hpp"

using namespace m2t2;

namespace {

// Exhaustive oracle: tries every injective column -> row map. Returns the
// minimum total (summed in column order) and the lexicographically smallest
// assignment vector among the minima.
struct Oracle {
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> best_vec;
};

void oracle_rec(const std::vector<double>& cost, int rows, int cols, int c,
                double acc, std::vector<int>& pick, std::vector<char>& used,
                Oracle& out) {
  if (c == cols) {
    if (acc < out.best ||
        (acc == out.best && (out.best_vec.empty() || pick < out.best_vec))) {
      out.best = acc;
      out.best_vec = pick;
    }
    return;
  }
  for (int r = 0; r < rows; ++r) {
    if (used[r]) continue;
    used[r] = 1;
    pick[c] = r;
    oracle_rec(cost, rows, cols, c + 1, acc + cost[r * cols + c], pick, used, out);
    used[r] = 0;
  }
}

Oracle brute_force(const std::vector<double>& cost, int rows, int cols) {
  Oracle out;
  std::vector<int> pick(cols, -1);
  std::vector<char> used(rows, 0);
  oracle_rec(cost, rows, cols, 0, 0.0, pick, used, out);
  return out;
}

}  // namespace

TEST_CASE("two-by-two example") {
  std::vector<double> cost = {1, 3, 2, 1};
  MatchResult m = hungarian_match(cost, 2, 2);
  REQUIRE(m.assignment.size() == 2);
  CHECK(m.assignment[0] == std::pair<int, int>(0, 0));
  CHECK(m.assignment[1] == std::pair<int, int>(1, 1));
  CHECK(m.total_cost == 2.0);
}

TEST_CASE("diagonal dominance with distinct column minima") {
  Pcg32 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    int cols = rng.uniform_int(1, 6);
    int rows = cols + rng.uniform_int(0, 4);
    std::vector<double> cost(rows * cols);
    for (double& v : cost) v = rng.uniform(1.0, 2.0);
    for (int j = 0; j < cols; ++j) cost[j * cols + j] = rng.uniform(0.0, 0.05);
    MatchResult m = hungarian_match(cost, rows, cols);
    for (int j = 0; j < cols; ++j) {
      CHECK(m.assignment[j].first == j);
      CHECK(m.assignment[j].second == j);
    }
  }
}

TEST_CASE("matches exhaustive minimum exactly on 1000 random instances") {
  Pcg32 rng(12345);
  for (int trial = 0; trial < 1000; ++trial) {
    int rows = rng.uniform_int(1, 7);
    int cols = rng.uniform_int(1, rows);
    std::vector<double> cost(rows * cols);
    for (double& v : cost) v = rng.uniform(-5.0, 5.0);
    MatchResult m = hungarian_match(cost, rows, cols);
    Oracle o = brute_force(cost, rows, cols);
    CHECK(m.total_cost == o.best);  // exact, same column-order summation

    // structural invariants
    REQUIRE(static_cast<int>(m.assignment.size()) == cols);
    std::vector<char> row_seen(rows, 0);
    double recomputed = 0.0;
    for (int j = 0; j < cols; ++j) {
      auto [r, c] = m.assignment[j];
      CHECK(c == j);
      REQUIRE(r >= 0);
      REQUIRE(r < rows);
      CHECK(!row_seen[r]);
      row_seen[r] = 1;
      recomputed += cost[r * cols + c];
    }
    CHECK(recomputed == m.total_cost);
  }
}

TEST_CASE("lexicographic tie-breaking") {
  SUBCASE("all-equal costs pick the identity") {
    std::vector<double> cost(4 * 3, 1.0);
    MatchResult m = hungarian_match(cost, 4, 3);
    for (int j = 0; j < 3; ++j) CHECK(m.assignment[j].first == j);
  }
  SUBCASE("prefers lexicographically smaller row vector among equal optima") {
    // both {(0,0),(1,1)} and {(1,0),(0,1)} cost 0; vector (0,1) < (1,0)
    std::vector<double> cost = {0, 0, 0, 0, 5, 5};
    MatchResult m = hungarian_match(cost, 3, 2);
    CHECK(m.assignment[0].first == 0);
    CHECK(m.assignment[1].first == 1);
  }
  SUBCASE("random quantized instances match the lexicographic oracle") {
    Pcg32 rng(999);
    for (int trial = 0; trial < 300; ++trial) {
      int rows = rng.uniform_int(1, 6);
      int cols = rng.uniform_int(1, rows);
      std::vector<double> cost(rows * cols);
      for (double& v : cost) v = static_cast<double>(rng.uniform_int(0, 2));
      MatchResult m = hungarian_match(cost, rows, cols);
      Oracle o = brute_force(cost, rows, cols);
      REQUIRE(m.total_cost == o.best);
      for (int j = 0; j < cols; ++j) CHECK(m.assignment[j].first == o.best_vec[j]);
    }
  }
}

TEST_CASE("input validation") {
  CHECK_THROWS_AS(hungarian_match({1, 2, 3, 4, 5, 6}, 2, 3), std::invalid_argument);
  CHECK_THROWS_AS(hungarian_match({1, 2, 3}, 2, 2), std::invalid_argument);
  std::vector<double> nan_cost = {1, std::numeric_limits<double>::quiet_NaN(), 2, 3};
  CHECK_THROWS_AS(hungarian_match(nan_cost, 2, 2), std::invalid_argument);
  std::vector<double> inf_cost = {1, std::numeric_limits<double>::infinity(), 2, 3};
  CHECK_THROWS_AS(hungarian_match(inf_cost, 2, 2), std::invalid_argument);
  std::vector<double> wide(17 * 17, 1.0);
  CHECK_THROWS_AS(hungarian_match(wide, 17, 17), std::invalid_argument);
  std::vector<double> tall(300 * 2, 1.0);
  CHECK_THROWS_AS(hungarian_match(tall, 300, 2), std::invalid_argument);
}
