#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "permflow/harness.hpp"
#include "permflow/param2tok.hpp"
#include "permflow/rng.hpp"

namespace permflow::harness {

const char* variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::FfnMse: return "ffn-mse";
    case ModelVariant::FfnSort: return "ffn-sort";
    case ModelVariant::FfnChamfer: return "ffn-chamfer";
    case ModelVariant::CnfEquivariant: return "cnf-equivariant";
    case ModelVariant::CnfParam2Tok: return "cnf-param2tok";
    case ModelVariant::CnfMlp: return "cnf-mlp";
    case ModelVariant::Random: return "random";
  }
  return "?";
}

ModelVariant model_variant_from_name(const std::string& name) {
  for (ModelVariant v :
       {ModelVariant::FfnMse, ModelVariant::FfnSort, ModelVariant::FfnChamfer,
        ModelVariant::CnfEquivariant, ModelVariant::CnfParam2Tok, ModelVariant::CnfMlp,
        ModelVariant::Random}) {
    if (name == variant_name(v)) return v;
  }
  throw std::invalid_argument("unknown model variant: " + name);
}

bool is_flow_variant(ModelVariant v) {
  return v == ModelVariant::CnfEquivariant || v == ModelVariant::CnfParam2Tok ||
         v == ModelVariant::CnfMlp;
}

nlohmann::json ArchConfig::to_json() const {
  nlohmann::json j;
  j["variant"] = variant_name(variant);
  j["k"] = k;
  j["task"] = kosc::variant_name(task);
  j["n_samples"] = n_samples;
  j["init_seed"] = init_seed;
  j["encoder"] = {{"in_bins", encoder.in_bins},
                  {"base_channels", encoder.base_channels},
                  {"n_blocks", encoder.n_blocks},
                  {"kernel", encoder.kernel},
                  {"out_dim", encoder.out_dim}};
  j["dit"] = {{"dim", dit.dim},         {"heads", dit.heads},
              {"ffn_hidden", dit.ffn_hidden}, {"layers", dit.layers},
              {"cond_in", dit.cond_in}, {"cond_shared", dit.cond_shared}};
  j["mlp"] = {{"dim", mlp.dim},         {"ffn_hidden", mlp.ffn_hidden},
              {"layers", mlp.layers},   {"cond_in", mlp.cond_in},
              {"cond_shared", mlp.cond_shared}};
  j["head_width"] = head_width;
  j["head_layers"] = head_layers;
  return j;
}

ArchConfig ArchConfig::from_json(const nlohmann::json& j) {
  ArchConfig c;
  c.variant = model_variant_from_name(j.at("variant").get<std::string>());
  c.k = j.at("k").get<int>();
  c.task = kosc::variant_from_name(j.at("task").get<std::string>());
  c.n_samples = j.at("n_samples").get<int>();
  c.init_seed = j.at("init_seed").get<uint64_t>();
  const auto& e = j.at("encoder");
  c.encoder = {e.at("in_bins").get<int>(), e.at("base_channels").get<int>(),
               e.at("n_blocks").get<int>(), e.at("kernel").get<int>(), e.at("out_dim").get<int>()};
  const auto& d = j.at("dit");
  c.dit = {d.at("dim").get<int>(),    d.at("heads").get<int>(),
           d.at("ffn_hidden").get<int>(), d.at("layers").get<int>(),
           d.at("cond_in").get<int>(), d.at("cond_shared").get<int>()};
  const auto& m = j.at("mlp");
  c.mlp = {m.at("dim").get<int>(), m.at("ffn_hidden").get<int>(), m.at("layers").get<int>(),
           m.at("cond_in").get<int>(), m.at("cond_shared").get<int>()};
  c.head_width = j.at("head_width").get<int>();
  c.head_layers = j.at("head_layers").get<int>();
  return c;
}

KoscModel::KoscModel(const ArchConfig& cfg) : cfg_(cfg) {
  if (cfg_.variant == ModelVariant::Random) return;  // parameter-free baseline
  if (cfg_.variant == ModelVariant::FfnSort && cfg_.task == kosc::TaskVariant::Asymmetric)
    throw std::invalid_argument(
        "ffn-sort is not defined on the asymmetric task (targets are already ordered)");
  if (cfg_.variant == ModelVariant::CnfEquivariant && cfg_.task == kosc::TaskVariant::Gated)
    throw std::invalid_argument(
        "cnf-equivariant has no token slot for the gate parameter; use cnf-param2tok or cnf-mlp");

  cfg_.encoder.in_bins = cfg_.n_samples / 2 + 1;
  int d_param = cfg_.param_dim();
  Rng rng(cfg_.init_seed);
  encoder_ = nn::CnnEncoder(cfg_.encoder, rng, "enc", params_);
  int cond_dim = cfg_.encoder.out_dim + 1;

  switch (cfg_.variant) {
    case ModelVariant::FfnMse:
    case ModelVariant::FfnSort:
    case ModelVariant::FfnChamfer:
      head_.emplace(cfg_.encoder.out_dim, cfg_.head_width, cfg_.head_layers, d_param, rng,
                    "head", params_);
      break;
    case ModelVariant::CnfEquivariant: {
      cfg_.dit.cond_in = cond_dim;
      token_in_ = nn::Dense(3, cfg_.dit.dim, rng, "field.token_in", params_);
      dit_.emplace(cfg_.dit, rng, "field.dit", params_);
      token_out_ = nn::Dense(cfg_.dit.dim, 3, rng, "field.token_out", params_);
      break;
    }
    case ModelVariant::CnfParam2Tok: {
      cfg_.dit.cond_in = cond_dim;
      // Tokens = k; embeddings live in the DiT token dimension.
      p2t::Param2TokParams p =
          p2t::p2t_init(d_param, cfg_.k, cfg_.dit.dim, hash_seed(cfg_.init_seed, 0x9270));
      p2t_z_ = nn::Var::param(p.Z, "p2t.z");
      p2t_zp_ = nn::Var::param(p.Zp, "p2t.zp");
      p2t_a_ = nn::Var::param(p.A, "p2t.a");
      p2t_w1_ = nn::Var::param(p.W1, "p2t.h.w1");
      p2t_b1_ = nn::Var::param(p.b1, "p2t.h.b1");
      p2t_w2_ = nn::Var::param(p.W2, "p2t.h.w2");
      p2t_b2_ = nn::Var::param(p.b2, "p2t.h.b2");
      for (const nn::Var& v : {p2t_z_, p2t_zp_, p2t_a_, p2t_w1_, p2t_b1_, p2t_w2_, p2t_b2_})
        params_.push_back(v);
      dit_.emplace(cfg_.dit, rng, "field.dit", params_);
      break;
    }
    case ModelVariant::CnfMlp: {
      cfg_.mlp.cond_in = cond_dim;
      mlp_in_ = nn::Dense(d_param, cfg_.mlp.dim, rng, "field.in", params_);
      mlp_stack_.emplace(cfg_.mlp, rng, "field.mlp", params_);
      mlp_out_ = nn::Dense(cfg_.mlp.dim, d_param, rng, "field.out", params_);
      break;
    }
    default:
      break;
  }
  if (is_flow()) {
    Tensor dv({cfg_.encoder.out_dim});
    double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.encoder.out_dim));
    for (int64_t i = 0; i < dv.size(); ++i) dv[i] = bound * rng.uniform_pm1();
    dropout_vec_ = nn::Var::param(dv, "field.dropout_vec");
    params_.push_back(dropout_vec_);
  }
}

int64_t KoscModel::param_count() const {
  int64_t n = 0;
  for (const nn::Var& p : params_) n += p.val().size();
  return n;
}

nn::Var KoscModel::encode(const nn::Var& spectra) const { return encoder_.apply(spectra); }

nn::Var KoscModel::predict(const nn::Var& cond) const {
  if (!head_) throw std::logic_error("predict: not a regression model");
  return head_->apply(cond);
}

nn::Var KoscModel::tokens_from_params(const nn::Var& x_t) const {
  if (cfg_.variant == ModelVariant::CnfEquivariant)
    return token_in_.apply(nn::osc_tokens(x_t, cfg_.k));
  // Param2Tok: A h(diag(x) Z) with h applied row-wise.
  nn::Var rows = nn::row_scale_embed(p2t_z_, x_t);
  nn::Var h = nn::linear(rows, p2t_w1_, p2t_b1_);
  h = nn::gelu(h);
  h = nn::linear(h, p2t_w2_, p2t_b2_);
  return nn::tokens_project(p2t_a_, h);
}

nn::Var KoscModel::field_core(const nn::Var& x_t, const nn::Var& cond129) const {
  switch (cfg_.variant) {
    case ModelVariant::CnfEquivariant: {
      nn::Var tokens = tokens_from_params(x_t);
      nn::Var out = dit_->apply(tokens, cond129);
      return nn::osc_untokens(token_out_.apply(out), cfg_.k);
    }
    case ModelVariant::CnfParam2Tok: {
      nn::Var tokens = tokens_from_params(x_t);
      nn::Var out = dit_->apply(tokens, cond129);
      return nn::p2t_inverse_op(p2t_zp_, p2t_a_, out);
    }
    case ModelVariant::CnfMlp: {
      nn::Var h = mlp_in_.apply(x_t);
      h = mlp_stack_->apply(h, cond129);
      return mlp_out_.apply(h);
    }
    default:
      throw std::logic_error("field: not a flow model");
  }
}

nn::Var KoscModel::field(const nn::Var& x_t, const std::vector<double>& t, const nn::Var& cond,
                         const std::vector<uint8_t>& drop_mask) {
  int64_t b = x_t.val().dim(0);
  if (static_cast<int64_t>(t.size()) != b || static_cast<int64_t>(drop_mask.size()) != b)
    throw std::invalid_argument("field: batch size mismatch");
  nn::Var cond_sel = nn::select_rows_or_vector(cond, dropout_vec_, drop_mask);
  Tensor t_col({b, 1});
  for (int64_t r = 0; r < b; ++r) t_col[r] = t[static_cast<size_t>(r)];
  nn::Var cond129 = nn::concat_lastdim({cond_sel, nn::Var::constant(t_col)});
  return field_core(x_t, cond129);
}

nn::Var KoscModel::regularizer() {
  if (cfg_.variant != ModelVariant::CnfParam2Tok) return nn::Var();
  return nn::scale(nn::l1_sum(p2t_a_), p2t::kL1Weight);
}

Tensor KoscModel::field_value(const Tensor& x, double t, const Tensor& cond, bool conditional) {
  nn::NoGradGuard ng;
  int64_t b = x.dim(0);
  std::vector<double> times(static_cast<size_t>(b), t);
  std::vector<uint8_t> mask(static_cast<size_t>(b), conditional ? 0 : 1);
  return field(nn::Var::constant(x), times, nn::Var::constant(cond), mask).val();
}

void KoscModel::tensors_to(std::vector<std::pair<std::string, Tensor>>& out) const {
  for (const nn::Var& p : params_) out.emplace_back("param." + p.name(), p.val());
}

void KoscModel::load_tensors(const ckpt::Checkpoint& c) {
  for (nn::Var& p : params_) {
    const Tensor* t = c.find("param." + p.name());
    if (t == nullptr) throw std::runtime_error("checkpoint missing tensor " + p.name());
    if (!t->same_shape(p.val()))
      throw std::runtime_error("checkpoint tensor shape mismatch for " + p.name());
    p.val_mut() = *t;
  }
}

std::unique_ptr<KoscModel> build_model(const ArchConfig& cfg) {
  return std::make_unique<KoscModel>(cfg);
}

std::vector<double> sort_canonicalize(const std::vector<double>& x, int k) {
  if (static_cast<int>(x.size()) < 3 * k)
    throw std::invalid_argument("sort_canonicalize: vector shorter than 3k");
  std::vector<int> order(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) order[static_cast<size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return x[static_cast<size_t>(a)] < x[static_cast<size_t>(b)]; });
  std::vector<double> out = x;  // keeps any trailing gate entry
  for (int f = 0; f < 3; ++f)
    for (int i = 0; i < k; ++i)
      out[static_cast<size_t>(f * k + i)] = x[static_cast<size_t>(f * k + order[static_cast<size_t>(i)])];
  return out;
}

}  // namespace permflow::harness
