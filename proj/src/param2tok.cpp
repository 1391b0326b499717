#include "permflow/param2tok.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "permflow/autograd.hpp"
#include "permflow/rng.hpp"

namespace permflow::p2t {

Param2TokParams p2t_init(int k, int n, int d, uint64_t seed) {
  if (k < 1 || n < 1 || d < 1) throw std::invalid_argument("p2t_init: sizes must be >= 1");
  Rng rng(seed);
  Param2TokParams p;
  p.A = Tensor({n, k});
  double a_mean = 1.0 / std::sqrt(static_cast<double>(n) * static_cast<double>(k));
  for (int64_t i = 0; i < p.A.size(); ++i) p.A[i] = rng.gaussian(a_mean, kAssignStd);

  // Shared center m with per-entry variance d^(-1/2), then tight
  // per-parameter clusters around it.
  double m_std = std::pow(static_cast<double>(d), -0.25);
  std::vector<double> m(static_cast<size_t>(d));
  for (int j = 0; j < d; ++j) m[static_cast<size_t>(j)] = rng.gaussian(0.0, m_std);
  p.Z = Tensor({k, d});
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < d; ++j)
      p.Z.at2(i, j) = rng.gaussian(m[static_cast<size_t>(j)], kEmbedStd);
  p.Zp = p.Z;

  double bound = 1.0 / std::sqrt(static_cast<double>(d));
  p.W1 = Tensor({d, d});
  p.W2 = Tensor({d, d});
  for (int64_t i = 0; i < p.W1.size(); ++i) p.W1[i] = bound * rng.uniform_pm1();
  for (int64_t i = 0; i < p.W2.size(); ++i) p.W2[i] = bound * rng.uniform_pm1();
  p.b1 = Tensor::zeros({d});
  p.b2 = Tensor::zeros({d});
  p.act = Param2TokParams::Act::Gelu;
  return p;
}

namespace {

using nn::Var;

Var h_apply(const Param2TokParams& p, const Var& rows) {
  Var h = nn::linear(rows, Var::constant(p.W1), Var::constant(p.b1));
  h = p.act == Param2TokParams::Act::Relu ? nn::relu(h) : nn::gelu(h);
  return nn::linear(h, Var::constant(p.W2), Var::constant(p.b2));
}

}  // namespace

Tensor p2t_forward(const std::vector<double>& x, const Param2TokParams& p) {
  if (static_cast<int>(x.size()) != p.k())
    throw std::invalid_argument("p2t_forward: expected k parameters");
  nn::NoGradGuard ng;
  Var xv = Var::constant(Tensor({1, p.k()}, std::vector<double>(x)));
  Var scaled = nn::row_scale_embed(Var::constant(p.Z), xv);  // [1,k,d]
  Var tokens = nn::tokens_project(Var::constant(p.A), h_apply(p, scaled));
  return tokens.val().reshaped({p.n(), p.d()});
}

std::vector<double> p2t_inverse(const Tensor& tokens, const Param2TokParams& p) {
  if (tokens.ndim() != 2 || tokens.dim(0) != p.n() || tokens.dim(1) != p.d())
    throw std::invalid_argument("p2t_inverse: token shape mismatch");
  nn::NoGradGuard ng;
  Var x = Var::constant(tokens.reshaped({1, p.n(), p.d()}));
  Var out = nn::p2t_inverse_op(Var::constant(p.Zp), Var::constant(p.A), x);
  return out.val().vec();
}

double l1_penalty(const Tensor& a) {
  double acc = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) acc += std::abs(a[i]);
  return kL1Weight * acc;
}

FixtureReport conditional_symmetry_fixture() {
  // Three parameters [a, b, c]; two tokens. The embeddings give the
  // first two parameters a shared component u and distinct components
  // v1 != v2; the third parameter routes into every token.
  const double u = 0.9, v1 = 0.2, v2 = 0.6;
  const double a = 0.3, b = 0.7;

  Param2TokParams p;
  p.Z = Tensor({3, 3}, {u, v1, 0.0,  //
                        u, v2, 0.0,  //
                        0.0, 0.0, 1.0});
  p.Zp = p.Z;
  p.A = Tensor({2, 3}, {1.0, 0.0, 1.0,  //
                        0.0, 1.0, 1.0});
  // h is the identity on non-negative inputs: identity weights, zero
  // bias, ReLU activation.
  p.W1 = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  p.W2 = p.W1;
  p.b1 = Tensor::zeros({3});
  p.b2 = Tensor::zeros({3});
  p.act = Param2TokParams::Act::Relu;

  // Transformer FFN acting on tokens: relu(y W_in) W_out. The middle
  // column subtracts the routing channel, so the distinct components
  // are erased exactly when c = 1.
  Tensor w_in({3, 3}, {1, 0, 0,  //
                       0, 1, 0,  //
                       0, -1, 0});
  Tensor w_out({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto ffn = [&](const Tensor& tokens) {
    nn::NoGradGuard ng;
    Var t = Var::constant(tokens);
    Var h = nn::relu(nn::linear(t, Var::constant(w_in), Var()));
    return nn::linear(h, Var::constant(w_out), Var()).val();
  };
  auto swap_rows = [](Tensor t) {
    for (int64_t j = 0; j < t.dim(1); ++j) std::swap(t.at2(0, j), t.at2(1, j));
    return t;
  };
  auto max_abs_diff = [](const Tensor& x, const Tensor& y) {
    double m = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
    return m;
  };

  auto run = [&](double av, double bv, double c) {
    Tensor lhs = ffn(p2t_forward({bv, av, c}, p));             // permuted input
    Tensor rhs = swap_rows(ffn(p2t_forward({av, bv, c}, p)));  // permuted output
    return max_abs_diff(lhs, rhs);
  };

  FixtureReport r;
  r.equal_branch_max_abs_diff = run(a, b, 1.0);
  r.unequal_branch_max_abs_diff = run(a, b, 0.0);
  r.stabilizer_max_abs_diff = run(a, a, 1.0);
  r.passed = r.equal_branch_max_abs_diff == 0.0 && r.unequal_branch_max_abs_diff > 0.0 &&
             r.stabilizer_max_abs_diff == 0.0;
  return r;
}

namespace {

void write_matrix_csv(const std::string& path, const Tensor& m) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("export_p2t_csv: cannot write " + path);
  f.precision(12);
  for (int64_t i = 0; i < m.dim(0); ++i) {
    for (int64_t j = 0; j < m.dim(1); ++j) {
      if (j) f << ",";
      f << m.at2(i, j);
    }
    f << "\n";
  }
}

Tensor cosine_self_similarity(const Tensor& m) {
  int64_t k = m.dim(0), d = m.dim(1);
  Tensor sim({k, k});
  std::vector<double> norms(static_cast<size_t>(k));
  for (int64_t i = 0; i < k; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < d; ++j) acc += m.at2(i, j) * m.at2(i, j);
    norms[static_cast<size_t>(i)] = std::sqrt(acc);
  }
  for (int64_t i = 0; i < k; ++i)
    for (int64_t j = 0; j < k; ++j) {
      double denom = norms[static_cast<size_t>(i)] * norms[static_cast<size_t>(j)];
      double dot = 0.0;
      for (int64_t e = 0; e < d; ++e) dot += m.at2(i, e) * m.at2(j, e);
      sim.at2(i, j) = denom > 0.0 ? dot / denom : 0.0;
    }
  return sim;
}

}  // namespace

void export_p2t_csv(const Param2TokParams& p, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  // Sort assignment rows lexicographically with larger values first so
  // structurally similar tokens end up adjacent.
  int n = p.n(), k = p.k();
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int r1, int r2) {
    for (int j = 0; j < k; ++j) {
      double a = p.A.at2(r1, j), b = p.A.at2(r2, j);
      if (a != b) return a > b;
    }
    return false;
  });
  Tensor sorted({n, k});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) sorted.at2(i, j) = p.A.at2(order[static_cast<size_t>(i)], j);

  fs::path dir(out_dir);
  write_matrix_csv((dir / "assignment.csv").string(), sorted);
  write_matrix_csv((dir / "embed_in_similarity.csv").string(), cosine_self_similarity(p.Z));
  write_matrix_csv((dir / "embed_out_similarity.csv").string(), cosine_self_similarity(p.Zp));
}

}  // namespace permflow::p2t
