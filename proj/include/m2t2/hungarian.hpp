#pragma once

#include <utility>
#include <vector>

namespace m2t2 {

struct MatchResult {
  // (prediction row, ground-truth column) pairs, one per column, ordered by
  // column. Injective in both coordinates.
  std::vector<std::pair<int, int>> assignment;
  double total_cost = 0.0;
};

// Exact minimum-cost injective assignment of every column to a distinct row
// (rows >= cols). Among equal-cost optima the lexicographically smallest
// assignment vector (m_0, m_1, ...) wins. Subset dynamic program over
// columns; cols is capped at 16, which covers the supported scene sizes.
MatchResult hungarian_match(const std::vector<double>& cost, int rows, int cols);

}  // namespace m2t2
