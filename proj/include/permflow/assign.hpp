#pragma once

#include <vector>

#include "permflow/tensor.hpp"

namespace permflow::assign {

struct AssignmentResult {
  std::vector<int> permutation;  // permutation[row] = assigned column
  double cost = 0.0;
};

// Minimum-cost perfect matching of a square cost matrix (row-major),
// O(n^3) shortest augmenting path. Ties between equal-cost matchings
// are broken in an unspecified but deterministic way; compare costs,
// not permutations.
AssignmentResult hungarian(const std::vector<double>& cost, int n);

// Exhaustive minimum over all n! permutations, n <= 8. Ties resolved
// to the lexicographically smallest permutation.
AssignmentResult brute_force_assignment(const std::vector<double>& cost, int n);

// Pairs rows of `source` with rows of `target` (both B x D) minimizing
// the total squared Euclidean distance. Row j of the source couples
// with row result[j] of the target.
std::vector<int> ot_pair_minibatch(const Tensor& source, const Tensor& target);

}  // namespace permflow::assign
