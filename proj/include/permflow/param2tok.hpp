#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "permflow/tensor.hpp"

namespace permflow::p2t {

// Learned projection between a flat parameter vector and transformer
// tokens. Z holds per-parameter input embeddings, Zp the output
// embeddings tied to the same assignment matrix A (n tokens from k
// parameters); h is a row-wise feed-forward network.
struct Param2TokParams {
  Tensor Z;    // k x d
  Tensor Zp;   // k x d
  Tensor A;    // n x k
  Tensor W1;   // d x d
  Tensor b1;   // d
  Tensor W2;   // d x d
  Tensor b2;   // d
  enum class Act { Gelu, Relu } act = Act::Gelu;

  int k() const { return static_cast<int>(Z.dim(0)); }
  int n() const { return static_cast<int>(A.dim(0)); }
  int d() const { return static_cast<int>(Z.dim(1)); }
};

// Near-invariant initialization: assignment entries cluster tightly
// around (nk)^(-1/2) and all parameter embeddings cluster around one
// shared draw m, so at the start of training the projection is almost
// blind to which parameter is which. Zp starts as an exact copy of Z.
Param2TokParams p2t_init(int k, int n, int d, uint64_t seed);

inline constexpr double kAssignStd = 1e-2;  // sigma_A^2 = 1e-4
inline constexpr double kEmbedStd = 1e-2;   // sigma_Z^2 = 1e-4

// tokens = A h(diag(x) Z), row-wise h.
Tensor p2t_forward(const std::vector<double>& x, const Param2TokParams& p);

// x~_i = sum_d Zp[i,:] * (A^T X)[i,:].
std::vector<double> p2t_inverse(const Tensor& tokens, const Param2TokParams& p);

// 0.01 * sum |a_ij|; added to the training loss of Param2Tok models.
double l1_penalty(const Tensor& a);
inline constexpr double kL1Weight = 0.01;

// Executable construction showing that the projection plus one
// transformer FFN can realize a symmetry that is active only when a
// routing entry of the parameter vector is 1 and broken when it is 0.
struct FixtureReport {
  double equal_branch_max_abs_diff = 0.0;  // c = 1, must be exactly 0
  double unequal_branch_max_abs_diff = 0.0;  // c = 0, must be > 0
  double stabilizer_max_abs_diff = 0.0;      // a = b with c = 1
  bool passed = false;
};
FixtureReport conditional_symmetry_fixture();

// Writes assignment.csv (rows sorted lexicographically, largest bin
// values first) and cosine self-similarity matrices of Z and Zp.
void export_p2t_csv(const Param2TokParams& p, const std::string& out_dir);

}  // namespace permflow::p2t
