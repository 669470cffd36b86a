#include "m2t2/hungarian.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <stdexcept>

namespace m2t2 {

// Suffix DP over (row index, set of still-unassigned columns). Each state
// stores the best achievable cost using rows i.. for the columns in the set,
// together with the assignment vector itself (row per column, 0xFF = unset)
// so that cost ties resolve to the lexicographically smallest vector. The
// tie comparison is valid because two candidates at the same state differ
// only in columns of the set, and appending a common prefix preserves
// lexicographic order.
MatchResult hungarian_match(const std::vector<double>& cost, int rows,
                            int cols) {
  if (rows < 1 || cols < 1 || rows < cols)
    throw std::invalid_argument("hungarian_match: need rows >= cols >= 1");
  if (cols > 16)
    throw std::invalid_argument("hungarian_match: more than 16 targets");
  if (rows > 255)
    throw std::invalid_argument("hungarian_match: more than 255 predictions");
  if (cost.size() != static_cast<std::size_t>(rows) * cols)
    throw std::invalid_argument("hungarian_match: cost size mismatch");
  for (double c : cost)
    if (!std::isfinite(c))
      throw std::invalid_argument("hungarian_match: non-finite cost");

  const int n_sets = 1 << cols;
  const double inf = std::numeric_limits<double>::infinity();

  std::vector<double> cost_next(n_sets, inf), cost_cur(n_sets);
  std::vector<std::uint8_t> vec_next(static_cast<std::size_t>(n_sets) * cols,
                                     0xFF);
  std::vector<std::uint8_t> vec_cur(vec_next.size());
  cost_next[0] = 0.0;

  for (int i = rows - 1; i >= 0; --i) {
    for (int set = 0; set < n_sets; ++set) {
      // start from skipping row i, then try assigning it to each column
      double best = cost_next[set];
      std::uint8_t best_vec[16];
      std::memcpy(best_vec, vec_next.data() + static_cast<std::size_t>(set) * cols,
                  cols);
      for (int c = 0; c < cols; ++c) {
        if (!(set & (1 << c))) continue;
        const int rest = set & ~(1 << c);
        if (cost_next[rest] == inf) continue;
        const double cand = cost[static_cast<std::size_t>(i) * cols + c] +
                            cost_next[rest];
        if (cand > best) continue;
        const std::uint8_t* cand_vec =
            vec_next.data() + static_cast<std::size_t>(rest) * cols;
        if (cand == best) {
          // candidate vector with m_c = i vs current best, column by column
          bool smaller = false;
          for (int j = 0; j < cols; ++j) {
            std::uint8_t a = (j == c) ? static_cast<std::uint8_t>(i)
                                      : cand_vec[j];
            if (a != best_vec[j]) {
              smaller = a < best_vec[j];
              break;
            }
          }
          if (!smaller) continue;
        }
        best = cand;
        std::memcpy(best_vec, cand_vec, cols);
        best_vec[c] = static_cast<std::uint8_t>(i);
      }
      cost_cur[set] = best;
      std::memcpy(vec_cur.data() + static_cast<std::size_t>(set) * cols, best_vec,
                  cols);
    }
    std::swap(cost_cur, cost_next);
    std::swap(vec_cur, vec_next);
  }

  const int full = n_sets - 1;
  if (cost_next[full] == inf)
    throw std::logic_error("hungarian_match: no feasible assignment");

  MatchResult result;
  const std::uint8_t* vec =
      vec_next.data() + static_cast<std::size_t>(full) * cols;
  // recompute the total in column order so it matches a direct evaluation
  result.total_cost = 0.0;
  for (int c = 0; c < cols; ++c) {
    const int row = vec[c];
    result.assignment.push_back({row, c});
    result.total_cost += cost[static_cast<std::size_t>(row) * cols + c];
  }
  return result;
}

}  // namespace m2t2
