#include "permflow/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace permflow::nn {

namespace {

Tensor uniform_init(std::vector<int64_t> shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = bound * rng.uniform_pm1();
  return t;
}

}  // namespace

Dense::Dense(int in, int out, Rng& rng, const std::string& name, std::vector<Var>& params) {
  double bound = 1.0 / std::sqrt(static_cast<double>(in));
  w_ = Var::param(uniform_init({in, out}, bound, rng), name + ".w");
  b_ = Var::param(Tensor::zeros({out}), name + ".b");
  params.push_back(w_);
  params.push_back(b_);
}

Conv1d::Conv1d(int in_ch, int out_ch, int kernel, int stride, Rng& rng, const std::string& name,
               std::vector<Var>& params)
    : kernel_(kernel), stride_(stride) {
  double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * kernel));
  w_ = Var::param(uniform_init({out_ch, in_ch, kernel}, bound, rng), name + ".w");
  b_ = Var::param(Tensor::zeros({out_ch}), name + ".b");
  params.push_back(w_);
  params.push_back(b_);
}

LayerNorm::LayerNorm(int dim, const std::string& name, std::vector<Var>& params) {
  gamma_ = Var::param(Tensor::full({dim}, 1.0), name + ".gamma");
  beta_ = Var::param(Tensor::zeros({dim}), name + ".beta");
  params.push_back(gamma_);
  params.push_back(beta_);
}

Var LayerNorm::apply(const Var& x) const { return add(mul(layer_norm(x), gamma_), beta_); }

Mlp::Mlp(int in, int hidden, int out, Rng& rng, const std::string& name,
         std::vector<Var>& params) {
  fc1_ = Dense(in, hidden, rng, name + ".fc1", params);
  fc2_ = Dense(hidden, out, rng, name + ".fc2", params);
}

ResidualMlpBlock::ResidualMlpBlock(int dim, int hidden, Rng& rng, const std::string& name,
                                   std::vector<Var>& params) {
  ln_ = LayerNorm(dim, name + ".ln", params);
  body_ = Mlp(dim, hidden, dim, rng, name + ".mlp", params);
}

MultiHeadAttention::MultiHeadAttention(int dim, int heads, Rng& rng, const std::string& name,
                                       std::vector<Var>& params)
    : dim_(dim), heads_(heads) {
  if (dim % heads != 0) throw std::invalid_argument("attention: dim must divide by heads");
  qkv_ = Dense(dim, 3 * dim, rng, name + ".qkv", params);
  proj_ = Dense(dim, dim, rng, name + ".proj", params);
}

Var MultiHeadAttention::apply(const Var& x) const {
  const Tensor& xv = x.val();
  if (xv.ndim() != 3 || xv.dim(2) != dim_)
    throw std::invalid_argument("attention: expected [B,T,dim]");
  int64_t b = xv.dim(0), t = xv.dim(1);
  int dh = dim_ / heads_;
  Var qkv = qkv_.apply(x);  // [B,T,3D]
  Var q = slice_lastdim(qkv, 0, dim_);
  Var k = slice_lastdim(qkv, dim_, dim_);
  Var v = slice_lastdim(qkv, 2 * dim_, dim_);
  auto to_heads = [&](const Var& z) {
    Var r = reshape(z, {b, t, heads_, dh});
    r = permute(r, {0, 2, 1, 3});  // [B,H,T,dh]
    return reshape(r, {b * heads_, t, dh});
  };
  Var qh = to_heads(q), kh = to_heads(k), vh = to_heads(v);
  Var scores = scale(bmm(qh, transpose_last2(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
  Var attn = softmax_lastdim(scores);
  Var out = bmm(attn, vh);  // [B*H,T,dh]
  out = reshape(out, {b, static_cast<int64_t>(heads_), t, static_cast<int64_t>(dh)});
  out = permute(out, {0, 2, 1, 3});
  out = reshape(out, {b, t, static_cast<int64_t>(dim_)});
  return proj_.apply(out);
}

DitLayer::DitLayer(int dim, int heads, int ffn_hidden, int cond_dim, Rng& rng,
                   const std::string& name, std::vector<Var>& params)
    : dim_(dim) {
  attn_ = MultiHeadAttention(dim, heads, rng, name + ".attn", params);
  ffn_ = Mlp(dim, ffn_hidden, dim, rng, name + ".ffn", params);
  cond_mlp_ = Mlp(cond_dim, cond_dim, 6 * dim, rng, name + ".cond", params);
}

Var DitLayer::apply(const Var& tokens, const Var& cond) const {
  Var c = cond_mlp_.apply(cond);  // [B, 6*dim]
  AdaLnChunks ch;
  ch.shift_attn = slice_lastdim(c, 0, dim_);
  ch.scale_attn = slice_lastdim(c, dim_, dim_);
  ch.gate_attn = slice_lastdim(c, 2 * dim_, dim_);
  ch.shift_ffn = slice_lastdim(c, 3 * dim_, dim_);
  ch.scale_ffn = slice_lastdim(c, 4 * dim_, dim_);
  ch.gate_ffn = slice_lastdim(c, 5 * dim_, dim_);

  Var h = add(tokens, gate(attn_.apply(modulate(layer_norm(tokens), ch.scale_attn, ch.shift_attn)),
                           ch.gate_attn));
  return add(h, gate(ffn_.apply(modulate(layer_norm(h), ch.scale_ffn, ch.shift_ffn)), ch.gate_ffn));
}

DitStack::DitStack(const DitConfig& cfg, Rng& rng, const std::string& name,
                   std::vector<Var>& params)
    : cfg_(cfg) {
  shared_cond_ = Mlp(cfg.cond_in, cfg.cond_shared, cfg.cond_shared, rng, name + ".cond_shared",
                     params);
  layers_.reserve(static_cast<size_t>(cfg.layers));
  for (int i = 0; i < cfg.layers; ++i)
    layers_.emplace_back(cfg.dim, cfg.heads, cfg.ffn_hidden, cfg.cond_shared, rng,
                         name + ".layer" + std::to_string(i), params);
}

Var DitStack::apply(const Var& tokens, const Var& cond_raw) const {
  Var c = shared_cond_.apply(cond_raw);
  Var h = tokens;
  for (const DitLayer& l : layers_) h = l.apply(h, c);
  return h;
}

CondMlpLayer::CondMlpLayer(int dim, int ffn_hidden, int cond_dim, Rng& rng,
                           const std::string& name, std::vector<Var>& params)
    : dim_(dim) {
  ffn_ = Mlp(dim, ffn_hidden, dim, rng, name + ".ffn", params);
  cond_mlp_ = Mlp(cond_dim, cond_dim, 3 * dim, rng, name + ".cond", params);
}

Var CondMlpLayer::apply(const Var& x, const Var& cond) const {
  Var c = cond_mlp_.apply(cond);
  Var sh = slice_lastdim(c, 0, dim_);
  Var sc = slice_lastdim(c, dim_, dim_);
  Var gt = slice_lastdim(c, 2 * dim_, dim_);
  return add(x, gate(ffn_.apply(modulate(layer_norm(x), sc, sh)), gt));
}

MlpStack::MlpStack(const MlpStackConfig& cfg, Rng& rng, const std::string& name,
                   std::vector<Var>& params)
    : cfg_(cfg) {
  shared_cond_ = Mlp(cfg.cond_in, cfg.cond_shared, cfg.cond_shared, rng, name + ".cond_shared",
                     params);
  layers_.reserve(static_cast<size_t>(cfg.layers));
  for (int i = 0; i < cfg.layers; ++i)
    layers_.emplace_back(cfg.dim, cfg.ffn_hidden, cfg.cond_shared, rng,
                         name + ".layer" + std::to_string(i), params);
}

Var MlpStack::apply(const Var& x, const Var& cond_raw) const {
  Var c = shared_cond_.apply(cond_raw);
  Var h = x;
  for (const CondMlpLayer& l : layers_) h = l.apply(h, c);
  return h;
}

CnnEncoder::CnnEncoder(const EncoderConfig& cfg, Rng& rng, const std::string& name,
                       std::vector<Var>& params)
    : cfg_(cfg) {
  auto down_len = [](int l) { return (l + 2) / 3; };  // stride 3, same padding
  int ch = cfg.base_channels;
  int len = down_len(cfg.in_bins);
  stem_ = Conv1d(1, ch, cfg.kernel, 3, rng, name + ".stem", params);
  for (int i = 0; i < cfg.n_blocks; ++i) {
    ResConvBlock blk;
    blk.c1 = Conv1d(ch, ch, cfg.kernel, 1, rng, name + ".block" + std::to_string(i) + ".c1", params);
    blk.c2 = Conv1d(ch, ch, cfg.kernel, 1, rng, name + ".block" + std::to_string(i) + ".c2", params);
    blocks_.push_back(std::move(blk));
    if (i + 1 < cfg.n_blocks) {
      downs_.emplace_back(ch, 2 * ch, cfg.kernel, 3, rng, name + ".down" + std::to_string(i),
                          params);
      ch *= 2;
      len = down_len(len);
    }
  }
  flat_dim_ = ch * len;
  flatten_fc_ = Dense(flat_dim_, cfg.out_dim, rng, name + ".flatten", params);
  out_block_ = ResidualMlpBlock(cfg.out_dim, cfg.out_dim, rng, name + ".out_block", params);
}

Var CnnEncoder::apply(const Var& spectra) const {
  const Tensor& sv = spectra.val();
  if (sv.ndim() != 2 || sv.dim(1) != cfg_.in_bins)
    throw std::invalid_argument("encoder: expected [B," + std::to_string(cfg_.in_bins) + "]");
  int64_t b = sv.dim(0);
  Var h = reshape(spectra, {b, 1, cfg_.in_bins});
  h = stem_.apply(h);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    h = blocks_[i].apply(h);
    if (i < downs_.size()) h = downs_[i].apply(h);
  }
  h = reshape(h, {b, static_cast<int64_t>(flat_dim_)});
  h = flatten_fc_.apply(h);
  return out_block_.apply(h);
}

ResidualMlpHead::ResidualMlpHead(int in, int width, int layers, int out, Rng& rng,
                                 const std::string& name, std::vector<Var>& params) {
  in_proj_ = Dense(in, width, rng, name + ".in", params);
  for (int i = 0; i < layers; ++i)
    blocks_.emplace_back(width, width, rng, name + ".block" + std::to_string(i), params);
  out_proj_ = Dense(width, out, rng, name + ".out", params);
}

Var ResidualMlpHead::apply(const Var& x) const {
  Var h = in_proj_.apply(x);
  for (const auto& blk : blocks_) h = blk.apply(h);
  return out_proj_.apply(h);
}

void Adam::step(std::vector<Var>& params, double lr) {
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (Var& p : params) {
      m_.push_back(Tensor::zeros(p.val().shape()));
      v_.push_back(Tensor::zeros(p.val().shape()));
    }
  }
  if (m_.size() != params.size()) throw std::logic_error("Adam: parameter count changed");
  ++t_;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Var& p = params[i];
    const Tensor& g = p.grad();
    for (int64_t j = 0; j < g.size(); ++j) {
      if (!std::isfinite(g[j]))
        throw std::runtime_error("non-finite gradient in parameter " + p.name());
      double m = m_[i][j] = beta1 * m_[i][j] + (1.0 - beta1) * g[j];
      double v = v_[i][j] = beta2 * v_[i][j] + (1.0 - beta2) * g[j] * g[j];
      double mh = m / bc1;
      double vh = v / bc2;
      p.val_mut()[j] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

double clip_grad_norm(std::vector<Var>& params, double max_norm) {
  double acc = 0.0;
  for (Var& p : params) {
    if (!p.has_grad()) continue;
    const Tensor& g = p.grad();
    for (int64_t j = 0; j < g.size(); ++j) acc += g[j] * g[j];
  }
  double norm = std::sqrt(acc);
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (Var& p : params) {
      if (!p.has_grad()) continue;
      Tensor& g = p.grad();
      for (int64_t j = 0; j < g.size(); ++j) g[j] *= s;
    }
  }
  return norm;
}

void zero_grads(std::vector<Var>& params) {
  for (Var& p : params) p.clear_grad();
}

GradCheckReport grad_check(const std::function<Var()>& build_loss, std::vector<Var> params,
                           double h_scale) {
  zero_grads(params);
  Var loss = build_loss();
  backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Var& p : params) analytic.push_back(p.has_grad() ? p.grad() : Tensor::zeros(p.val().shape()));

  GradCheckReport report;
  NoGradGuard ng;
  for (size_t i = 0; i < params.size(); ++i) {
    Var& p = params[i];
    GradCheckEntry entry;
    entry.name = p.name();
    for (int64_t j = 0; j < p.val().size(); ++j) {
      double w = p.val()[j];
      double h = h_scale * std::max(1.0, std::abs(w));
      p.val_mut()[j] = w + h;
      double lp = build_loss().val().item();
      p.val_mut()[j] = w - h;
      double lm = build_loss().val().item();
      p.val_mut()[j] = w;
      double numeric = (lp - lm) / (2.0 * h);
      double an = analytic[i][j];
      double denom = std::max({std::abs(an), std::abs(numeric), 1e-6});
      double rel = std::abs(an - numeric) / denom;
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    report.worst = std::max(report.worst, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  zero_grads(params);
  return report;
}

}  // namespace permflow::nn
