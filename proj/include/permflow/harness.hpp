#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "permflow/checkpoint.hpp"
#include "permflow/dataset.hpp"
#include "permflow/flow.hpp"
#include "permflow/kosc.hpp"
#include "permflow/metrics.hpp"
#include "permflow/nn.hpp"

namespace permflow::harness {

enum class ModelVariant {
  FfnMse,
  FfnSort,
  FfnChamfer,
  CnfEquivariant,
  CnfParam2Tok,
  CnfMlp,
  Random,
};

const char* variant_name(ModelVariant v);
ModelVariant model_variant_from_name(const std::string& name);
bool is_flow_variant(ModelVariant v);

// Everything needed to rebuild a model's parameter tensors.
struct ArchConfig {
  ModelVariant variant = ModelVariant::FfnMse;
  int k = 4;
  kosc::TaskVariant task = kosc::TaskVariant::Symmetric;
  int n_samples = kDefaultSignalLength;
  uint64_t init_seed = 0;

  nn::EncoderConfig encoder;
  nn::DitConfig dit;       // CnfEquivariant / CnfParam2Tok
  nn::MlpStackConfig mlp;  // CnfMlp
  int head_width = 384;    // regression head
  int head_layers = 4;

  int param_dim() const { return kosc::param_count(k, task); }
  nlohmann::json to_json() const;
  static ArchConfig from_json(const nlohmann::json& j);
};

// One model instance: shared CNN encoder plus a variant-specific head
// or vector field. Parameter construction order is fixed, so identical
// configs and seeds always produce identical tensors.
class KoscModel : public flow::FlowFieldModel {
 public:
  explicit KoscModel(const ArchConfig& cfg);

  const ArchConfig& config() const { return cfg_; }
  std::vector<nn::Var>& params() { return params_; }
  bool is_flow() const { return is_flow_variant(cfg_.variant); }
  int64_t param_count() const;

  // [B, n_bins] normalized magnitude spectra -> [B, enc.out_dim]
  nn::Var encode(const nn::Var& spectra) const;

  // Regression variants: conditioning -> parameter estimate.
  nn::Var predict(const nn::Var& cond) const;

  // Flow variants: conditional vector field.
  nn::Var field(const nn::Var& x_t, const std::vector<double>& t, const nn::Var& cond,
                const std::vector<uint8_t>& drop_mask) override;
  nn::Var regularizer() override;

  // Field evaluation for sampling (no dropout mask; `conditional`
  // false swaps in the learned dropout vector).
  Tensor field_value(const Tensor& x, double t, const Tensor& cond, bool conditional);

  // Checkpoint plumbing.
  void tensors_to(std::vector<std::pair<std::string, Tensor>>& out) const;
  void load_tensors(const ckpt::Checkpoint& c);

  nn::Var p2t_assignment() const { return p2t_a_; }
  nn::Var p2t_embed_in() const { return p2t_z_; }
  nn::Var p2t_embed_out() const { return p2t_zp_; }

 private:
  nn::Var tokens_from_params(const nn::Var& x_t) const;
  nn::Var field_core(const nn::Var& x_t, const nn::Var& cond129) const;

  ArchConfig cfg_;
  std::vector<nn::Var> params_;
  nn::CnnEncoder encoder_;
  std::optional<nn::DitStack> dit_;
  std::optional<nn::MlpStack> mlp_stack_;
  nn::Dense token_in_, token_out_;  // CnfEquivariant
  nn::Dense mlp_in_, mlp_out_;      // CnfMlp
  nn::Var p2t_z_, p2t_zp_, p2t_a_, p2t_w1_, p2t_b1_, p2t_w2_, p2t_b2_;
  nn::Var dropout_vec_;
  std::optional<nn::ResidualMlpHead> head_;
};

std::unique_ptr<KoscModel> build_model(const ArchConfig& cfg);

// Orders oscillator triples by ascending raw frequency, carrying each
// oscillator's amplitude and shape along. Stable, idempotent.
std::vector<double> sort_canonicalize(const std::vector<double>& x, int k);

struct ExperimentConfig {
  ModelVariant model = ModelVariant::FfnMse;
  int k = 4;
  kosc::TaskVariant task = kosc::TaskVariant::Symmetric;
  int64_t steps = 20000;
  int batch = 128;
  double lr = 1e-4;
  uint64_t seed = 0;
  int sampler_steps = 100;
  double guidance = 2.0;
  double clip_norm = 1.0;
  double cond_dropout = 0.1;
  double target_loss = 0.0;  // > 0: stop once the training loss drops below
  std::string train_data;
  std::string test_data;
  int log_every = 200;
  int val_every = 1000;
  int val_items = 256;

  nlohmann::json to_json() const;
};

// Key/value config file ("key = value" or "key value" per line, '#'
// comments). Unknown keys are an error.
ExperimentConfig parse_config_file(const std::string& path);
void apply_config_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value);

struct TrainResult {
  int64_t steps_run = 0;
  double final_loss = 0.0;
  std::string checkpoint_path;
};

// Trains per config and writes the checkpoint. Deterministic for a
// given config and seed. Non-finite loss aborts with the step number.
TrainResult train(const ExperimentConfig& cfg, const std::string& out_ckpt, std::ostream* log);

struct EvalOptions {
  uint64_t eval_seed = 0;
  int64_t max_items = 0;  // 0 = whole dataset
  int sampler_steps = 0;  // 0 = value stored in the checkpoint
  double guidance = -1.0; // < 0 = value stored in the checkpoint
  int chunk = 128;
};

// Runs inference over the test set, re-renders the inferred parameters,
// and reports LSD plus the task's parameter metric (LAC on the
// symmetric task, MSE otherwise). Writes per-example CSV when out_csv
// is non-empty.
metrics::MetricReport evaluate(const std::string& ckpt_path, const std::string& data_dir,
                               const std::string& out_csv, const EvalOptions& opt = {});

// Predictor used by tests: maps (ground truth params, record index) to
// an estimate.
using Predictor = std::function<std::vector<double>(const std::vector<double>&, int64_t)>;
metrics::MetricReport evaluate_with_predictor(const Predictor& predict, const data::Dataset& ds,
                                              const std::string& out_csv, int64_t max_items);

void save_model_checkpoint(const std::string& path, const KoscModel& model, const nn::Adam& adam,
                           const ExperimentConfig& cfg, int64_t step);

// ---- verification suites (shared by the CLI and the acceptance runner) ----

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<CheckResult> check_oracle_assignment(int instances = 1000);
std::vector<CheckResult> check_oracle_dtw(int instances = 200);
std::vector<CheckResult> check_oracle_sot(int instances = 200);
std::vector<CheckResult> check_grad_suite();
std::vector<CheckResult> check_equivariance_suite();
std::vector<CheckResult> check_fixture();
std::vector<CheckResult> check_metric_identities();
std::vector<CheckResult> check_determinism(const std::string& work_dir);

std::vector<CheckResult> run_check_suite(const std::string& suite, const std::string& work_dir);

}  // namespace permflow::harness
