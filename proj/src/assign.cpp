#include "permflow/assign.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace permflow::assign {

namespace {

void validate_matrix(const std::vector<double>& cost, int n) {
  if (n <= 0) throw std::invalid_argument("assignment: n must be positive");
  if (static_cast<size_t>(n) * static_cast<size_t>(n) != cost.size())
    throw std::invalid_argument("assignment: cost matrix is not n x n");
  for (double c : cost) {
    if (!std::isfinite(c)) throw std::invalid_argument("assignment: non-finite cost entry");
  }
}

double permutation_cost(const std::vector<double>& cost, int n, const std::vector<int>& perm) {
  double total = 0.0;
  for (int r = 0; r < n; ++r) total += cost[static_cast<size_t>(r) * n + perm[static_cast<size_t>(r)]];
  return total;
}

}  // namespace

AssignmentResult hungarian(const std::vector<double>& cost, int n) {
  validate_matrix(cost, n);
  const double inf = std::numeric_limits<double>::infinity();

  // Shortest augmenting path with potentials, 1-indexed internally.
  std::vector<double> u(static_cast<size_t>(n + 1), 0.0), v(static_cast<size_t>(n + 1), 0.0);
  std::vector<int> match(static_cast<size_t>(n + 1), 0);  // match[col] = row
  std::vector<int> way(static_cast<size_t>(n + 1), 0);

  auto c = [&](int row, int col) -> double {
    return cost[static_cast<size_t>(row - 1) * n + (col - 1)];
  };

  for (int row = 1; row <= n; ++row) {
    match[0] = row;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n + 1), inf);
    std::vector<char> used(static_cast<size_t>(n + 1), 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      int i0 = match[static_cast<size_t>(j0)], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        double cur = c(i0, j) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(match[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<size_t>(j0)] != 0);
    do {
      int j1 = way[static_cast<size_t>(j0)];
      match[static_cast<size_t>(j0)] = match[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }

  AssignmentResult res;
  res.permutation.assign(static_cast<size_t>(n), -1);
  for (int j = 1; j <= n; ++j) res.permutation[static_cast<size_t>(match[static_cast<size_t>(j)] - 1)] = j - 1;
  res.cost = permutation_cost(cost, n, res.permutation);
  return res;
}

AssignmentResult brute_force_assignment(const std::vector<double>& cost, int n) {
  validate_matrix(cost, n);
  if (n > 8) throw std::invalid_argument("brute_force_assignment: n must be <= 8");
  std::vector<int> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  AssignmentResult best;
  best.permutation = perm;
  best.cost = permutation_cost(cost, n, perm);
  // next_permutation enumerates in lexicographic order, so a strict
  // improvement rule keeps the lexicographically smallest optimum.
  while (std::next_permutation(perm.begin(), perm.end())) {
    double c = permutation_cost(cost, n, perm);
    if (c < best.cost) {
      best.cost = c;
      best.permutation = perm;
    }
  }
  return best;
}

std::vector<int> ot_pair_minibatch(const Tensor& source, const Tensor& target) {
  if (source.ndim() != 2 || target.ndim() != 2)
    throw std::invalid_argument("ot_pair_minibatch: expected 2-D batches");
  if (!source.same_shape(target))
    throw std::invalid_argument("ot_pair_minibatch: batch shapes differ");
  int b = static_cast<int>(source.dim(0));
  int d = static_cast<int>(source.dim(1));
  std::vector<double> cost(static_cast<size_t>(b) * static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) {
    const double* s = source.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < b; ++j) {
      const double* t = target.data() + static_cast<size_t>(j) * d;
      double acc = 0.0;
      for (int e = 0; e < d; ++e) {
        double diff = s[e] - t[e];
        acc += diff * diff;
      }
      cost[static_cast<size_t>(i) * b + j] = acc;
    }
  }
  return hungarian(cost, b).permutation;
}

}  // namespace permflow::assign
