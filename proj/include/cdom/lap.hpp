#pragma once

#include <Eigen/Dense>

#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cdom/core.hpp"

namespace cdom {

/// profit(i, j) = gain of assigning row i to column j; solve_lap maximizes.
using ProfitMatrix = Matrix;

struct LapSolution {
  Permutation assignment;  // assignment(i) = column given to row i
  double value;            // sum_i profit(i, assignment(i))
};

/// Exact linear assignment by shortest augmenting paths with dual potentials
/// (Jonker-Volgenant / Hungarian family), run as min-cost on negated profits.
/// O(n^3). Rows are augmented in ascending order and columns scanned in
/// ascending order, which fixes the outcome among tied optima.
inline LapSolution solve_lap(const ProfitMatrix& profit) {
  if (profit.rows() != profit.cols())
    throw std::invalid_argument("solve_lap: profit matrix must be square");
  if (profit.rows() < 1) throw std::invalid_argument("solve_lap: empty matrix");
  if (!profit.allFinite()) throw std::invalid_argument("solve_lap: entries must be finite");

  const int n = static_cast<int>(profit.rows());
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // 1-based with column 0 as the virtual start of each augmenting path.
  // match[j] = row currently assigned to column j, 0 if free.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1, 0);

  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -profit(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j) row_to_col[match[j] - 1] = j - 1;
  Permutation assignment(std::move(row_to_col));

  // Recompute the value by direct summation in row order; the duals carry
  // rounding from the path updates and are not used for reporting.
  double value = 0.0;
  for (int i = 0; i < n; ++i) value += profit(i, assignment(i));
  return {std::move(assignment), value};
}

}  // namespace cdom
