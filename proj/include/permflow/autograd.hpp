#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "permflow/tensor.hpp"

namespace permflow::nn {

struct Node {
  Tensor val;
  Tensor grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::string name;  // parameters only
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backfn;

  Tensor& ensure_grad() {
    if (!has_grad) {
      grad = Tensor::zeros(val.shape());
      has_grad = true;
    }
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

// Handle to a node in the computation graph. Copying is cheap.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  static Var param(Tensor value, std::string name);
  static Var constant(Tensor value) { return Var(std::move(value), false); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& val() const { return node_->val; }
  Tensor& val_mut() { return node_->val; }
  Tensor& grad() { return node_->ensure_grad(); }
  bool has_grad() const { return node_->has_grad; }
  void clear_grad() { node_->has_grad = false; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

// While a guard is alive no graph edges are recorded; forward values
// are still computed.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Seeds the root gradient with ones and propagates.
void backward(const Var& root);

// ---- elementwise and shape ops ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var square(const Var& a);
Var gelu(const Var& a);
Var relu(const Var& a);
Var softmax_lastdim(const Var& a);
Var layer_norm(const Var& a, double eps = 1e-5);
Var reshape(const Var& a, std::vector<int64_t> shape);
Var permute(const Var& a, const std::vector<int>& axes);
Var transpose_last2(const Var& a);
Var slice_lastdim(const Var& a, int64_t start, int64_t len);
Var concat_lastdim(const std::vector<Var>& parts);
Var sum_all(const Var& a);
Var mean_all(const Var& a);

// ---- dense algebra ----
Var matmul(const Var& a, const Var& b);                       // [m,k] x [k,n]
Var linear(const Var& x, const Var& w, const Var& b);         // [..,in] -> [..,out]
Var bmm(const Var& a, const Var& b);                          // [N,m,k] x [N,k,n]
Var conv1d(const Var& x, const Var& w, const Var& b, int stride, int pad);  // [B,C,L]

// ---- conditioning and token ops ----
// y[b,t,:] = x[b,t,:] * s[b,:] + sh[b,:]; x may be [B,D] (T = 1).
Var modulate(const Var& x, const Var& s, const Var& sh);
Var gate(const Var& x, const Var& g);
// Batch row shuffle: y[j,:] = x[idx[j],:].
Var row_gather(const Var& x, const std::vector<int>& idx);
// Conditioning dropout: rows with mask != 0 are replaced by `vec`.
Var select_rows_or_vector(const Var& a, const Var& vec, const std::vector<uint8_t>& mask);
// [B,3k] <-> [B,k,3] with the (w_i, a_i, g_i) = (i, k+i, 2k+i) layout.
Var osc_tokens(const Var& x, int k);
Var osc_untokens(const Var& tokens, int k);
// y[b,i,:] = x[b,i] * z[i,:].
Var row_scale_embed(const Var& z, const Var& x);
// y[b] = a @ h[b] for a [n,k], h [B,k,d].
Var tokens_project(const Var& a, const Var& h);
// out[b,i] = sum_d zp[i,d] * (a^T x[b])[i,d].
Var p2t_inverse_op(const Var& zp, const Var& a, const Var& x);

// ---- losses ----
Var mse_loss(const Var& pred, const Tensor& target);
// Bidirectional Chamfer over oscillator triples, averaged over the batch.
Var chamfer_loss(const Var& pred, const Tensor& target, int k);
// sum |a_ij| with subgradient 0 at 0.
Var l1_sum(const Var& a);

}  // namespace permflow::nn
