#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "permflow/autograd.hpp"
#include "permflow/rng.hpp"

namespace permflow::nn {

// Weights are uniform on +-(fan_in)^(-1/2), biases start at zero.
class Dense {
 public:
  Dense() = default;
  Dense(int in, int out, Rng& rng, const std::string& name, std::vector<Var>& params);
  Var apply(const Var& x) const { return linear(x, w_, b_); }
  Var& weight() { return w_; }
  Var& bias() { return b_; }

 private:
  Var w_, b_;
};

class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(int in_ch, int out_ch, int kernel, int stride, Rng& rng, const std::string& name,
         std::vector<Var>& params);
  Var apply(const Var& x) const { return conv1d(x, w_, b_, stride_, kernel_ / 2); }

 private:
  Var w_, b_;
  int kernel_ = 0;
  int stride_ = 1;
};

// Layer norm with learned affine parameters.
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(int dim, const std::string& name, std::vector<Var>& params);
  Var apply(const Var& x) const;

 private:
  Var gamma_, beta_;
};

// Two dense layers with a GELU in between.
class Mlp {
 public:
  Mlp() = default;
  Mlp(int in, int hidden, int out, Rng& rng, const std::string& name, std::vector<Var>& params);
  Var apply(const Var& x) const { return fc2_.apply(gelu(fc1_.apply(x))); }
  Dense& fc2() { return fc2_; }

 private:
  Dense fc1_, fc2_;
};

// Residual block: x + fc2(gelu(fc1(layernorm(x)))).
class ResidualMlpBlock {
 public:
  ResidualMlpBlock() = default;
  ResidualMlpBlock(int dim, int hidden, Rng& rng, const std::string& name,
                   std::vector<Var>& params);
  Var apply(const Var& x) const { return add(x, body_.apply(ln_.apply(x))); }
  Mlp& body() { return body_; }

 private:
  LayerNorm ln_;
  Mlp body_;
};

// Pre-norm multi-head self-attention over [B,T,D] tokens. No positional
// encoding anywhere, so the block is permutation equivariant.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(int dim, int heads, Rng& rng, const std::string& name,
                     std::vector<Var>& params);
  Var apply(const Var& x) const;

 private:
  Dense qkv_, proj_;
  int dim_ = 0, heads_ = 0;
};

struct AdaLnChunks {
  Var shift_attn, scale_attn, gate_attn;
  Var shift_ffn, scale_ffn, gate_ffn;
};

// One transformer layer with adaptive layer norm conditioning: both
// residual blocks get shift/scale after their layer norm and a gate on
// the non-residual path, all produced per layer from the conditioning
// vector.
class DitLayer {
 public:
  DitLayer() = default;
  DitLayer(int dim, int heads, int ffn_hidden, int cond_dim, Rng& rng, const std::string& name,
           std::vector<Var>& params);
  Var apply(const Var& tokens, const Var& cond) const;

 private:
  MultiHeadAttention attn_;
  Mlp ffn_;
  Mlp cond_mlp_;  // cond_dim -> 6 * dim
  int dim_ = 0;
};

struct DitConfig {
  int dim = 128;
  int heads = 4;
  int ffn_hidden = 256;
  int layers = 5;
  int cond_in = 129;       // conditioning vector length (encoder output + time)
  int cond_shared = 128;   // width after the shared conditioning MLP
};

// Stack of DitLayers plus the shared conditioning MLP applied before
// the per-layer ones. Token-permutation equivariant by construction.
class DitStack {
 public:
  DitStack() = default;
  DitStack(const DitConfig& cfg, Rng& rng, const std::string& name, std::vector<Var>& params);
  Var apply(const Var& tokens, const Var& cond_raw) const;
  const DitConfig& config() const { return cfg_; }

 private:
  DitConfig cfg_;
  Mlp shared_cond_;
  std::vector<DitLayer> layers_;
};

// Residual FFN layer with the same Ada-LN conditioning but no attention.
class CondMlpLayer {
 public:
  CondMlpLayer() = default;
  CondMlpLayer(int dim, int ffn_hidden, int cond_dim, Rng& rng, const std::string& name,
               std::vector<Var>& params);
  Var apply(const Var& x, const Var& cond) const;

 private:
  Mlp ffn_;
  Mlp cond_mlp_;  // cond_dim -> 3 * dim
  int dim_ = 0;
};

struct MlpStackConfig {
  int dim = 192;
  int ffn_hidden = 384;
  int layers = 7;
  int cond_in = 129;
  int cond_shared = 128;
};

// Conditioned residual MLP operating on whole vectors (no tokens, no
// intrinsic permutation equivariance).
class MlpStack {
 public:
  MlpStack() = default;
  MlpStack(const MlpStackConfig& cfg, Rng& rng, const std::string& name,
           std::vector<Var>& params);
  Var apply(const Var& x, const Var& cond_raw) const;

 private:
  MlpStackConfig cfg_;
  Mlp shared_cond_;
  std::vector<CondMlpLayer> layers_;
};

struct EncoderConfig {
  int in_bins = 1025;      // one-sided spectrum length
  int base_channels = 24;  // width of the first residual block
  int n_blocks = 4;        // residual blocks; channels double between them
  int kernel = 5;
  int out_dim = 128;
};

// Frequency-domain CNN: magnitude spectrum in, 128-d representation out.
// Stride-3 convolutions downsample between residual blocks while the
// channel count doubles.
class CnnEncoder {
 public:
  CnnEncoder() = default;
  CnnEncoder(const EncoderConfig& cfg, Rng& rng, const std::string& name,
             std::vector<Var>& params);
  // spectra: [B, in_bins]
  Var apply(const Var& spectra) const;
  const EncoderConfig& config() const { return cfg_; }

 private:
  struct ResConvBlock {
    Conv1d c1, c2;
    Var apply(const Var& x) const { return add(x, c2.apply(gelu(c1.apply(x)))); }
  };
  EncoderConfig cfg_;
  Conv1d stem_;
  std::vector<ResConvBlock> blocks_;
  std::vector<Conv1d> downs_;
  Dense flatten_fc_;
  ResidualMlpBlock out_block_;
  int flat_dim_ = 0;
};

// Unconditioned residual MLP head used by the regression models.
class ResidualMlpHead {
 public:
  ResidualMlpHead() = default;
  ResidualMlpHead(int in, int width, int layers, int out, Rng& rng, const std::string& name,
                  std::vector<Var>& params);
  Var apply(const Var& x) const;

 private:
  Dense in_proj_, out_proj_;
  std::vector<ResidualMlpBlock> blocks_;
};

// ---------------- optimizer ----------------

class Adam {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  // Applies one update using the gradients currently stored on the
  // parameters. Throws if any gradient is non-finite, naming the
  // parameter.
  void step(std::vector<Var>& params, double lr);

  int64_t steps() const { return t_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  void set_steps(int64_t t) { t_ = t; }

 private:
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Scales all gradients so the global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_grad_norm(std::vector<Var>& params, double max_norm);

void zero_grads(std::vector<Var>& params);

// ---------------- gradient verification ----------------

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  bool passed(double tol) const { return worst <= tol; }
};

// Compares analytic gradients of build_loss() against central finite
// differences with h = h_scale * max(1, |w|) per element.
GradCheckReport grad_check(const std::function<Var()>& build_loss, std::vector<Var> params,
                           double h_scale = 1e-5);

}  // namespace permflow::nn
