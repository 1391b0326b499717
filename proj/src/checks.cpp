#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "permflow/harness.hpp"
#include "permflow/oracles.hpp"
#include "permflow/param2tok.hpp"
#include "permflow/rng.hpp"

namespace permflow::harness {

namespace fs = std::filesystem;

namespace {

std::string fmt3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

ArchConfig toy_arch(ModelVariant v, kosc::TaskVariant task = kosc::TaskVariant::Symmetric) {
  ArchConfig a;
  a.variant = v;
  a.k = 2;
  a.task = task;
  a.n_samples = 64;
  a.init_seed = 7;
  a.encoder = {33, 4, 2, 5, 16};
  a.dit = {8, 2, 16, 2, 17, 16};
  a.mlp = {16, 32, 2, 17, 16};
  a.head_width = 16;
  a.head_layers = 2;
  return a;
}

// Small batch of rendered spectra and their parameters.
struct ToyBatch {
  Tensor spectra;  // [B, 33]
  Tensor params;   // [B, 6]
};

ToyBatch toy_batch(int b, uint64_t seed) {
  ToyBatch out;
  int n = 64, bins = 33, k = 2;
  out.spectra = Tensor({b, bins});
  out.params = Tensor({b, 3 * k});
  for (int r = 0; r < b; ++r) {
    std::vector<double> x = kosc::sample_params(k, kosc::TaskVariant::Symmetric,
                                                hash_seed(seed, static_cast<uint64_t>(r)));
    AudioSignal y = kosc::render(x, k, kosc::TaskVariant::Symmetric, n);
    dsp::MagnitudeSpectrum s = dsp::dft_mag(y);
    for (int j = 0; j < bins; ++j) out.spectra[r * bins + j] = s.bins[static_cast<size_t>(j)] * 2.0 / n;
    for (int j = 0; j < 3 * k; ++j) out.params[r * 3 * k + j] = x[static_cast<size_t>(j)];
  }
  return out;
}

CheckResult grad_entry(const std::string& name, const std::function<nn::Var()>& loss,
                       std::vector<nn::Var> params, double tol) {
  nn::GradCheckReport rep = nn::grad_check(loss, std::move(params));
  return CheckResult{name + " (tol " + fmt3(tol) + ")", rep.worst <= tol,
                     "max rel err " + fmt3(rep.worst)};
}

std::vector<int> random_permutation(int n, Rng& rng) {
  std::vector<int> p(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i)
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(rng.uniform_index(static_cast<uint64_t>(i + 1)))]);
  return p;
}

std::vector<double> permute_triples(const std::vector<double>& x, int k,
                                    const std::vector<int>& perm) {
  std::vector<double> out = x;
  for (int f = 0; f < 3; ++f)
    for (int i = 0; i < k; ++i)
      out[static_cast<size_t>(f * k + i)] = x[static_cast<size_t>(f * k + perm[static_cast<size_t>(i)])];
  return out;
}

}  // namespace

std::vector<CheckResult> check_grad_suite() {
  std::vector<CheckResult> out;
  Rng rng(424242);

  // Individual differentiable blocks.
  {
    std::vector<nn::Var> params;
    nn::Dense dense(5, 4, rng, "dense", params);
    Tensor x({3, 5}), tgt({3, 4});
    for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform_pm1();
    for (int64_t i = 0; i < tgt.size(); ++i) tgt[i] = rng.uniform_pm1();
    out.push_back(grad_entry("dense layer",
                             [&] { return nn::mse_loss(dense.apply(nn::Var::constant(x)), tgt); },
                             params, 1e-6));
  }
  {
    std::vector<nn::Var> params;
    nn::Conv1d conv(3, 4, 5, 3, rng, "conv", params);
    Tensor x({2, 3, 17});
    for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform_pm1();
    out.push_back(grad_entry("strided conv1d",
                             [&] {
                               nn::Var y = conv.apply(nn::Var::constant(x));
                               return nn::mean_all(nn::mul(y, y));
                             },
                             params, 1e-6));
  }
  {
    std::vector<nn::Var> params;
    nn::ResidualMlpBlock blk(6, 12, rng, "blk", params);
    Tensor x({4, 6});
    for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform_pm1();
    out.push_back(grad_entry("residual mlp block (layer norm + gelu)",
                             [&] {
                               nn::Var y = blk.apply(nn::Var::constant(x));
                               return nn::mean_all(nn::mul(y, y));
                             },
                             params, 1e-4));
  }
  {
    std::vector<nn::Var> params;
    nn::MultiHeadAttention attn(8, 2, rng, "attn", params);
    Tensor x({2, 3, 8});
    for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform_pm1();
    out.push_back(grad_entry("softmax attention block",
                             [&] {
                               nn::Var y = attn.apply(nn::Var::constant(x));
                               return nn::mean_all(nn::mul(y, y));
                             },
                             params, 1e-4));
  }
  {
    std::vector<nn::Var> params;
    nn::DitConfig cfg{8, 2, 16, 2, 17, 16};
    nn::DitStack stack(cfg, rng, "dit", params);
    Tensor x({2, 2, 8}), c({2, 17});
    for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform_pm1();
    for (int64_t i = 0; i < c.size(); ++i) c[i] = rng.uniform_pm1();
    out.push_back(grad_entry("conditioned transformer stack",
                             [&] {
                               nn::Var y = stack.apply(nn::Var::constant(x), nn::Var::constant(c));
                               return nn::mean_all(nn::mul(y, y));
                             },
                             params, 1e-4));
  }
  {
    // Learned projection forward + weight-tied inverse.
    p2t::Param2TokParams p = p2t::p2t_init(6, 2, 8, 99);
    std::vector<nn::Var> params;
    nn::Var z = nn::Var::param(p.Z, "z"), zp = nn::Var::param(p.Zp, "zp"),
            a = nn::Var::param(p.A, "a"), w1 = nn::Var::param(p.W1, "w1"),
            b1 = nn::Var::param(p.b1, "b1"), w2 = nn::Var::param(p.W2, "w2"),
            b2 = nn::Var::param(p.b2, "b2");
    for (auto& v : {z, zp, a, w1, b1, w2, b2}) params.push_back(v);
    Tensor x({3, 6});
    for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform_pm1();
    out.push_back(grad_entry(
        "parameter-token projection and inverse",
        [&] {
          nn::Var rows = nn::row_scale_embed(z, nn::Var::constant(x));
          nn::Var h = nn::linear(nn::gelu(nn::linear(rows, w1, b1)), w2, b2);
          nn::Var tok = nn::tokens_project(a, h);
          nn::Var back = nn::p2t_inverse_op(zp, a, tok);
          return nn::add(nn::mean_all(nn::mul(back, back)), nn::scale(nn::l1_sum(a), 0.01));
        },
        params, 1e-4));
  }

  // Full training losses on toy configs.
  ToyBatch tb = toy_batch(4, 31337);
  auto full_loss = [&](ModelVariant v, const std::string& label) {
    auto model = build_model(toy_arch(v));
    auto loss = [&, m = model.get()]() -> nn::Var {
      nn::Var cond = m->encode(nn::Var::constant(tb.spectra));
      switch (v) {
        case ModelVariant::FfnMse:
          return nn::mse_loss(m->predict(cond), tb.params);
        case ModelVariant::FfnSort: {
          Tensor tgt = tb.params;
          for (int64_t r = 0; r < tgt.dim(0); ++r) {
            std::vector<double> row(tgt.data() + r * 6, tgt.data() + (r + 1) * 6);
            auto s = sort_canonicalize(row, 2);
            std::copy(s.begin(), s.end(), tgt.data() + r * 6);
          }
          return nn::mse_loss(m->predict(cond), tgt);
        }
        case ModelVariant::FfnChamfer:
          return nn::chamfer_loss(m->predict(cond), tb.params, 2);
        default:
          return flow::cfm_loss(*m, tb.params, cond, 1234);
      }
    };
    out.push_back(grad_entry(label, loss, model->params(), 1e-4));
  };
  full_loss(ModelVariant::FfnMse, "full regression loss (mse)");
  full_loss(ModelVariant::FfnSort, "full regression loss (frequency-sorted mse)");
  full_loss(ModelVariant::FfnChamfer, "full regression loss (chamfer)");
  full_loss(ModelVariant::CnfEquivariant, "full flow-matching loss (equivariant field)");
  full_loss(ModelVariant::CnfParam2Tok, "full flow-matching loss (learned projection + L1)");
  full_loss(ModelVariant::CnfMlp, "full flow-matching loss (mlp field)");
  return out;
}

std::vector<CheckResult> check_equivariance_suite() {
  std::vector<CheckResult> out;

  // (a) token-permutation equivariance of the conditioned transformer.
  {
    Rng rng(5150);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      int heads = 1 << rng.uniform_index(3);        // 1, 2, 4
      int dh = 2 << rng.uniform_index(3);           // 2, 4, 8
      int dim = heads * dh;
      int layers = 1 + static_cast<int>(rng.uniform_index(3));
      int tokens = 2 + static_cast<int>(rng.uniform_index(5));
      int cond_in = 3 + static_cast<int>(rng.uniform_index(14));
      std::vector<nn::Var> params;
      Rng init(hash_seed(5151, static_cast<uint64_t>(trial)));
      nn::DitStack stack({dim, heads, 2 * dim, layers, cond_in, dim}, init, "dit", params);
      Tensor x({1, tokens, dim}), c({1, cond_in});
      for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform_pm1();
      for (int64_t i = 0; i < c.size(); ++i) c[i] = rng.uniform_pm1();
      std::vector<int> perm = random_permutation(tokens, rng);
      Tensor xp({1, tokens, dim});
      for (int t = 0; t < tokens; ++t)
        for (int j = 0; j < dim; ++j)
          xp[static_cast<int64_t>(t) * dim + j] =
              x[static_cast<int64_t>(perm[static_cast<size_t>(t)]) * dim + j];
      nn::NoGradGuard ng;
      Tensor y = stack.apply(nn::Var::constant(x), nn::Var::constant(c)).val();
      Tensor yp = stack.apply(nn::Var::constant(xp), nn::Var::constant(c)).val();
      for (int t = 0; t < tokens; ++t)
        for (int j = 0; j < dim; ++j)
          worst = std::max(worst, std::abs(yp[static_cast<int64_t>(t) * dim + j] -
                                           y[static_cast<int64_t>(perm[static_cast<size_t>(t)]) * dim + j]));
    }
    out.push_back({"transformer field equivariance over 100 random configs (<= 1e-6)",
                   worst <= 1e-6, "max abs deviation " + fmt3(worst)});
  }

  // (b) sampler equivariance: integrating from permuted noise gives the
  // permuted sample.
  {
    ArchConfig a = toy_arch(ModelVariant::CnfEquivariant);
    a.k = 3;
    auto model = build_model(a);
    Rng rng(777);
    Tensor cond({1, a.encoder.out_dim});
    for (int64_t i = 0; i < cond.size(); ++i) cond[i] = rng.uniform_pm1();
    flow::BatchField f = [&](const Tensor& x, double t, bool conditional) {
      return model->field_value(x, t, cond, conditional);
    };
    int d = 9;
    Tensor x0({1, d});
    for (int64_t i = 0; i < x0.size(); ++i) x0[i] = rng.gaussian();
    std::vector<int> perm = {2, 0, 1};
    std::vector<double> x0v(x0.data(), x0.data() + d);
    std::vector<double> x0p = permute_triples(x0v, 3, perm);
    Tensor x0pt({1, d});
    for (int j = 0; j < d; ++j) x0pt[j] = x0p[static_cast<size_t>(j)];
    Tensor s1 = flow::sample_rk4_from(f, x0, 100, 2.0);
    Tensor s2 = flow::sample_rk4_from(f, x0pt, 100, 2.0);
    std::vector<double> s1v(s1.data(), s1.data() + d);
    std::vector<double> s1p = permute_triples(s1v, 3, perm);
    double worst = 0.0;
    for (int j = 0; j < d; ++j) worst = std::max(worst, std::abs(s1p[static_cast<size_t>(j)] - s2[j]));
    out.push_back({"sampler equivariance: permuted noise gives permuted sample (<= 1e-5)",
                   worst <= 1e-5, "max abs deviation " + fmt3(worst)});
  }

  // (c) render permutation invariance.
  {
    Rng rng(31415);
    double worst_sym = 0.0, worst_gate = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      int k = 2 + static_cast<int>(rng.uniform_index(5));
      std::vector<double> x = kosc::sample_params(k, kosc::TaskVariant::Symmetric,
                                                  hash_seed(999, static_cast<uint64_t>(trial)));
      std::vector<int> perm = random_permutation(k, rng);
      AudioSignal y1 = kosc::render(x, k, kosc::TaskVariant::Symmetric, 512);
      AudioSignal y2 = kosc::render(permute_triples(x, k, perm), k, kosc::TaskVariant::Symmetric, 512);
      for (size_t i = 0; i < y1.samples.size(); ++i)
        worst_sym = std::max(worst_sym, std::abs(y1.samples[i] - y2.samples[i]));

      std::vector<double> xg = x;
      xg.push_back(1.0);  // gate open: symmetric behaviour
      std::vector<double> xgp = permute_triples(x, k, perm);
      xgp.push_back(1.0);
      AudioSignal g1 = kosc::render(xg, k, kosc::TaskVariant::Gated, 512);
      AudioSignal g2 = kosc::render(xgp, k, kosc::TaskVariant::Gated, 512);
      for (size_t i = 0; i < g1.samples.size(); ++i)
        worst_gate = std::max(worst_gate, std::abs(g1.samples[i] - g2.samples[i]));
    }
    out.push_back({"render permutation invariance, symmetric task (<= 1e-9)", worst_sym <= 1e-9,
                   "max abs deviation " + fmt3(worst_sym)});
    out.push_back({"render permutation invariance, gated task with gate open (<= 1e-9)",
                   worst_gate <= 1e-9, "max abs deviation " + fmt3(worst_gate)});
  }
  return out;
}

std::vector<CheckResult> check_metric_identities() {
  std::vector<CheckResult> out;
  Rng rng(606060);

  {
    bool ok = true;
    for (int trial = 0; trial < 200; ++trial) {
      int k = 1 + static_cast<int>(rng.uniform_index(6));
      std::vector<double> x(static_cast<size_t>(3 * k)), xh(static_cast<size_t>(3 * k));
      for (auto& v : x) v = rng.uniform_pm1();
      for (auto& v : xh) v = rng.uniform_pm1();
      std::vector<int> perm = random_permutation(k, rng);
      if (metrics::lac(x, permute_triples(xh, k, perm), k) != metrics::lac(x, xh, k)) ok = false;
    }
    out.push_back({"lac invariant under target permutation (exact)", ok, ok ? "all equal" : "mismatch"});
  }
  {
    bool ok = true;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> x(3), xh(3);
      for (auto& v : x) v = rng.uniform_pm1();
      for (auto& v : xh) v = rng.uniform_pm1();
      if (metrics::lac(x, xh, 1) != metrics::mse(x, xh)) ok = false;
    }
    out.push_back({"lac equals mse at k=1 (exact)", ok, ok ? "all equal" : "mismatch"});
  }
  {
    std::vector<double> xa = kosc::sample_params(4, kosc::TaskVariant::Symmetric, 11);
    std::vector<double> xb = kosc::sample_params(4, kosc::TaskVariant::Symmetric, 12);
    AudioSignal a = kosc::render(xa, 4, kosc::TaskVariant::Symmetric, 2048);
    AudioSignal b = kosc::render(xb, 4, kosc::TaskVariant::Symmetric, 2048);
    double sr = a.sample_rate;
    double z1 = metrics::lsd(a, a), z2 = metrics::mss(a, a, sr), z3 = metrics::wmfcc(a, a, sr),
           z4 = metrics::sot(a, a, sr);
    bool zero_ok = z1 == 0.0 && z2 == 0.0 && z3 == 0.0 && z4 == 0.0;
    bool sym_ok = metrics::lsd(a, b) == metrics::lsd(b, a) &&
                  metrics::mss(a, b, sr) == metrics::mss(b, a, sr) &&
                  metrics::wmfcc(a, b, sr) == metrics::wmfcc(b, a, sr) &&
                  metrics::sot(a, b, sr) == metrics::sot(b, a, sr);
    out.push_back({"audio metrics zero on identical signals", zero_ok,
                   zero_ok ? "all zero" : "nonzero self-distance"});
    out.push_back({"audio metrics symmetric in their arguments", sym_ok,
                   sym_ok ? "all symmetric" : "asymmetry found"});
  }
  {
    std::vector<double> x = kosc::sample_params(4, kosc::TaskVariant::Symmetric, 21);
    AudioSignal a = kosc::render(x, 4, kosc::TaskVariant::Symmetric, 2048);
    AudioSignal scaled = a;
    for (double& v : scaled.samples) v *= 0.37;
    double c = metrics::rms_cosine(a, scaled);
    bool ok = std::abs(c - 1.0) <= 1e-12;
    out.push_back({"rms cosine invariant to amplitude scaling", ok, "value " + fmt3(c)});
  }
  return out;
}

namespace {

std::string read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<CheckResult> check_determinism(const std::string& work_dir) {
  std::vector<CheckResult> out;
  fs::create_directories(work_dir);
  fs::path wd(work_dir);

  kosc::DatasetConfig dc;
  dc.k = 2;
  dc.variant = kosc::TaskVariant::Symmetric;
  dc.count = 48;
  dc.seed = 5;
  dc.n_samples = 256;
  kosc::generate_dataset(dc, (wd / "ds_a").string());
  kosc::generate_dataset(dc, (wd / "ds_b").string());
  bool ds_ok = read_bytes(wd / "ds_a" / "params.f32") == read_bytes(wd / "ds_b" / "params.f32") &&
               read_bytes(wd / "ds_a" / "audio.f32") == read_bytes(wd / "ds_b" / "audio.f32") &&
               read_bytes(wd / "ds_a" / "meta.json") == read_bytes(wd / "ds_b" / "meta.json");
  out.push_back({"dataset regeneration is byte-identical", ds_ok, ds_ok ? "files equal" : "files differ"});

  ExperimentConfig tc;
  tc.model = ModelVariant::FfnMse;
  tc.k = 2;
  tc.task = kosc::TaskVariant::Symmetric;
  tc.steps = 20;
  tc.batch = 8;
  tc.seed = 9;
  tc.train_data = (wd / "ds_a").string();
  tc.val_every = 0;
  train(tc, (wd / "ffn_a.ckpt").string(), nullptr);
  train(tc, (wd / "ffn_b.ckpt").string(), nullptr);
  bool ffn_ok = read_bytes(wd / "ffn_a.ckpt") == read_bytes(wd / "ffn_b.ckpt");
  out.push_back({"regression training reproduces bit-identical checkpoints", ffn_ok,
                 ffn_ok ? "checkpoints equal" : "checkpoints differ"});

  ExperimentConfig cc = tc;
  cc.model = ModelVariant::CnfEquivariant;
  cc.steps = 6;
  cc.sampler_steps = 20;
  train(cc, (wd / "cnf_a.ckpt").string(), nullptr);
  train(cc, (wd / "cnf_b.ckpt").string(), nullptr);
  bool cnf_ok = read_bytes(wd / "cnf_a.ckpt") == read_bytes(wd / "cnf_b.ckpt");
  out.push_back({"flow training reproduces bit-identical checkpoints", cnf_ok,
                 cnf_ok ? "checkpoints equal" : "checkpoints differ"});

  EvalOptions eo;
  eo.max_items = 8;
  evaluate((wd / "cnf_a.ckpt").string(), (wd / "ds_a").string(), (wd / "eval_a.csv").string(), eo);
  evaluate((wd / "cnf_b.ckpt").string(), (wd / "ds_a").string(), (wd / "eval_b.csv").string(), eo);
  bool ev_ok = read_bytes(wd / "eval_a.csv") == read_bytes(wd / "eval_b.csv");
  out.push_back({"evaluation CSV identical across runs", ev_ok, ev_ok ? "equal" : "differ"});
  return out;
}

}  // namespace permflow::harness
