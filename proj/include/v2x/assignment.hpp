#pragma once

#include <Eigen/Core>

#include <vector>

namespace v2x {

struct Assignment {
  std::vector<int> row_to_col;  ///< -1 when the row stays unassigned
  std::vector<int> col_to_row;
  double total_cost = 0.0;
  int matched = 0;
};

/// Gated linear assignment. Entries with cost > gate (or non-finite) are
/// forbidden. Among all one-to-one assignments using allowed entries, returns
/// one with the most matches and, among those, the least total cost.
/// Hungarian algorithm, O(n^3) in the larger dimension.
Assignment solve_assignment(const Eigen::MatrixXd& cost, double gate);

}  // namespace v2x
