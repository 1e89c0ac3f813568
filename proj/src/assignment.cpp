#include "v2x/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace v2x {

namespace {

// Jonker-Volgenant flavoured Hungarian on a square matrix; returns the
// column assigned to each row.
std::vector<int> hungarian_square(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
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
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

}  // namespace

Assignment solve_assignment(const Eigen::MatrixXd& cost, double gate) {
  const int rows = static_cast<int>(cost.rows());
  const int cols = static_cast<int>(cost.cols());
  Assignment out;
  out.row_to_col.assign(rows, -1);
  out.col_to_row.assign(cols, -1);
  if (rows == 0 || cols == 0) return out;

  auto allowed = [&](int r, int c) {
    const double x = cost(r, c);
    return std::isfinite(x) && x <= gate;
  };
  const int n = std::max(rows, cols);
  // every disallowed or padding entry costs more than any full set of allowed
  // entries, so fewer forbidden picks always wins
  double allowed_max = 0.0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (allowed(r, c)) allowed_max = std::max(allowed_max, std::abs(cost(r, c)));
  const double big = (allowed_max + 1.0) * (n + 1);

  Eigen::MatrixXd square = Eigen::MatrixXd::Constant(n, n, big);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (allowed(r, c)) square(r, c) = cost(r, c);

  const std::vector<int> assigned = hungarian_square(square);
  for (int r = 0; r < rows; ++r) {
    const int c = assigned[r];
    if (c >= 0 && c < cols && allowed(r, c)) {
      out.row_to_col[r] = c;
      out.col_to_row[c] = r;
      out.total_cost += cost(r, c);
      ++out.matched;
    }
  }
  return out;
}

}  // namespace v2x
