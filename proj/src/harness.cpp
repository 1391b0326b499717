#include "permflow/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "permflow/assign.hpp"
#include "permflow/blas.hpp"
#include "permflow/oracles.hpp"
#include "permflow/param2tok.hpp"
#include "permflow/rng.hpp"

namespace permflow::harness {

namespace fs = std::filesystem;

// ---------------- experiment config ----------------

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["model"] = variant_name(model);
  j["k"] = k;
  j["task"] = kosc::variant_name(task);
  j["steps"] = steps;
  j["batch"] = batch;
  j["lr"] = lr;
  j["seed"] = seed;
  j["sampler_steps"] = sampler_steps;
  j["guidance"] = guidance;
  j["clip_norm"] = clip_norm;
  j["cond_dropout"] = cond_dropout;
  j["target_loss"] = target_loss;
  j["train_data"] = train_data;
  j["test_data"] = test_data;
  j["log_every"] = log_every;
  j["val_every"] = val_every;
  j["val_items"] = val_items;
  return j;
}

void apply_config_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  auto as_i64 = [&] { return static_cast<int64_t>(std::stoll(value)); };
  auto as_int = [&] { return std::stoi(value); };
  auto as_f = [&] { return std::stod(value); };
  if (key == "model") cfg.model = model_variant_from_name(value);
  else if (key == "k") cfg.k = as_int();
  else if (key == "task") cfg.task = kosc::variant_from_name(value);
  else if (key == "steps") cfg.steps = as_i64();
  else if (key == "batch") cfg.batch = as_int();
  else if (key == "lr") cfg.lr = as_f();
  else if (key == "seed") cfg.seed = static_cast<uint64_t>(std::stoull(value));
  else if (key == "sampler_steps") cfg.sampler_steps = as_int();
  else if (key == "guidance") cfg.guidance = as_f();
  else if (key == "clip_norm") cfg.clip_norm = as_f();
  else if (key == "cond_dropout") cfg.cond_dropout = as_f();
  else if (key == "target_loss") cfg.target_loss = as_f();
  else if (key == "train_data") cfg.train_data = value;
  else if (key == "test_data") cfg.test_data = value;
  else if (key == "log_every") cfg.log_every = as_int();
  else if (key == "val_every") cfg.val_every = as_int();
  else if (key == "val_items") cfg.val_items = as_int();
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  ExperimentConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::string key, value;
    std::istringstream ss(line);
    if (!(ss >> key)) continue;  // blank
    if (!key.empty() && key.back() == '=') key.pop_back();
    std::getline(ss, value);
    // strip '=' and whitespace
    size_t start = value.find_first_not_of(" \t=");
    value = start == std::string::npos ? "" : value.substr(start);
    size_t end = value.find_last_not_of(" \t\r");
    value = end == std::string::npos ? "" : value.substr(0, end + 1);
    if (value.empty())
      throw std::runtime_error("config: missing value at line " + std::to_string(lineno));
    apply_config_kv(cfg, key, value);
  }
  return cfg;
}

// ---------------- checkpoints ----------------

void save_model_checkpoint(const std::string& path, const KoscModel& model, const nn::Adam& adam,
                           const ExperimentConfig& cfg, int64_t step) {
  ckpt::Checkpoint c;
  c.meta["format_version"] = 1;
  c.meta["arch"] = model.config().to_json();
  c.meta["experiment"] = cfg.to_json();
  c.meta["step"] = step;
  c.meta["adam_step"] = const_cast<nn::Adam&>(adam).steps();
  c.meta["train_seed"] = cfg.seed;
  model.tensors_to(c.tensors);
  nn::Adam& a = const_cast<nn::Adam&>(adam);
  auto& params = const_cast<KoscModel&>(model).params();
  if (!a.first_moments().empty()) {
    for (size_t i = 0; i < params.size(); ++i) {
      c.tensors.emplace_back("adam_m." + params[i].name(), a.first_moments()[i]);
      c.tensors.emplace_back("adam_v." + params[i].name(), a.second_moments()[i]);
    }
  }
  ckpt::write_checkpoint(path, c);
}

namespace {

struct LoadedModel {
  std::unique_ptr<KoscModel> model;
  ExperimentConfig experiment;
  int64_t step = 0;
};

LoadedModel load_model_checkpoint(const std::string& path) {
  ckpt::Checkpoint c = ckpt::read_checkpoint(path);
  LoadedModel out;
  ArchConfig arch = ArchConfig::from_json(c.meta.at("arch"));
  out.model = build_model(arch);
  out.model->load_tensors(c);
  out.step = c.meta.value("step", int64_t{0});
  const auto& e = c.meta.at("experiment");
  for (auto it = e.begin(); it != e.end(); ++it) {
    std::ostringstream ss;
    if (it.value().is_string())
      apply_config_kv(out.experiment, it.key(), it.value().get<std::string>());
    else {
      ss << it.value();
      apply_config_kv(out.experiment, it.key(), ss.str());
    }
  }
  return out;
}

}  // namespace

// ---------------- training ----------------

TrainResult train(const ExperimentConfig& cfg, const std::string& out_ckpt, std::ostream* log) {
  data::Dataset ds = data::load_dataset(cfg.train_data, /*keep_audio=*/false);
  if (ds.meta.k != cfg.k || ds.meta.variant != cfg.task)
    throw std::invalid_argument("train: dataset (k, task) does not match config");
  if (cfg.batch < 1 || cfg.steps < 0) throw std::invalid_argument("train: bad steps/batch");
  if (ds.meta.count < 1) throw std::invalid_argument("train: empty dataset");

  ArchConfig arch;
  arch.variant = cfg.model;
  arch.k = cfg.k;
  arch.task = cfg.task;
  arch.n_samples = ds.meta.n_samples;
  arch.init_seed = cfg.seed;
  std::unique_ptr<KoscModel> model = build_model(arch);
  nn::Adam adam;

  TrainResult result;
  result.checkpoint_path = out_ckpt;
  if (cfg.model == ModelVariant::Random) {
    save_model_checkpoint(out_ckpt, *model, adam, cfg, 0);
    return result;
  }

  if (log)
    (*log) << "model=" << variant_name(cfg.model) << " params=" << model->param_count()
           << " train_count=" << ds.meta.count << "\n";

  // Fixed validation batch.
  std::vector<int64_t> val_idx;
  {
    Rng vr(hash_seed(cfg.seed, 0x7a11de));
    int64_t n = std::min<int64_t>(cfg.val_items, ds.meta.count);
    for (int64_t i = 0; i < n; ++i)
      val_idx.push_back(static_cast<int64_t>(vr.uniform_index(static_cast<uint64_t>(ds.meta.count))));
  }

  auto batch_loss = [&](const std::vector<int64_t>& idx, uint64_t step_seed) -> nn::Var {
    Tensor spectra = ds.spectra_batch(idx);
    Tensor targets = ds.params_batch(idx);
    nn::Var cond = model->encode(nn::Var::constant(spectra));
    switch (cfg.model) {
      case ModelVariant::FfnMse:
        return nn::mse_loss(model->predict(cond), targets);
      case ModelVariant::FfnSort: {
        for (size_t r = 0; r < idx.size(); ++r) {
          std::vector<double> row(targets.data() + static_cast<int64_t>(r) * ds.param_dim,
                                  targets.data() + static_cast<int64_t>(r + 1) * ds.param_dim);
          std::vector<double> sorted = sort_canonicalize(row, cfg.k);
          std::copy(sorted.begin(), sorted.end(),
                    targets.data() + static_cast<int64_t>(r) * ds.param_dim);
        }
        return nn::mse_loss(model->predict(cond), targets);
      }
      case ModelVariant::FfnChamfer:
        if (cfg.task == kosc::TaskVariant::Gated)
          throw std::invalid_argument("train: chamfer loss undefined with a gate parameter");
        return nn::chamfer_loss(model->predict(cond), targets, cfg.k);
      default:
        return flow::cfm_loss(*model, targets, cond, step_seed, flow::Coupling::OptimalTransport,
                              cfg.cond_dropout);
    }
  };

  double last_loss = 0.0;
  int64_t steps_run = 0;
  for (int64_t step = 0; step < cfg.steps; ++step) {
    Rng br(hash_seed(cfg.seed ^ 0xba7c5ull, static_cast<uint64_t>(step)));
    std::vector<int64_t> idx(static_cast<size_t>(cfg.batch));
    for (auto& i : idx) i = static_cast<int64_t>(br.uniform_index(static_cast<uint64_t>(ds.meta.count)));

    nn::Var loss = batch_loss(idx, hash_seed(cfg.seed ^ 0xcf3ull, static_cast<uint64_t>(step)));
    last_loss = loss.val().item();
    if (!std::isfinite(last_loss))
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
    nn::backward(loss);
    double gnorm = nn::clip_grad_norm(model->params(), cfg.clip_norm);
    adam.step(model->params(), cfg.lr);
    nn::zero_grads(model->params());

    if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      (*log) << "step=" << step << " loss=" << last_loss << " grad_norm=" << gnorm << "\n";
      log->flush();
    }
    if (log && cfg.val_every > 0 && !val_idx.empty() &&
        (step % cfg.val_every == 0 || step + 1 == cfg.steps)) {
      nn::NoGradGuard ng;
      double vl = batch_loss(val_idx, hash_seed(cfg.seed ^ 0x7a1ull, 0)).val().item();
      (*log) << "step=" << step << " val_loss=" << vl << "\n";
      log->flush();
    }
    steps_run = step + 1;
    if (cfg.target_loss > 0.0 && last_loss < cfg.target_loss) {
      if (log) (*log) << "target loss reached at step " << step << "\n";
      break;
    }
  }

  result.steps_run = steps_run;
  result.final_loss = last_loss;
  save_model_checkpoint(out_ckpt, *model, adam, cfg, steps_run);
  return result;
}

// ---------------- evaluation ----------------

namespace {

std::vector<double> clip_unit(std::vector<double> x) {
  for (double& v : x) v = std::clamp(v, -1.0, 1.0);
  return x;
}

metrics::MetricReport make_report(const data::Dataset& ds,
                                  const std::vector<std::vector<double>>& predictions,
                                  const std::string& out_csv) {
  bool use_lac = ds.meta.variant == kosc::TaskVariant::Symmetric;
  metrics::MetricReport report;
  report.columns = {"lsd", use_lac ? "lac" : "mse"};
  int64_t n = static_cast<int64_t>(predictions.size());
  report.rows.assign(static_cast<size_t>(n), {});
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < n; ++i) {
    std::vector<double> x = ds.params_row(i);
    const std::vector<double>& x_hat = predictions[static_cast<size_t>(i)];
    AudioSignal y;
    y.samples = ds.audio_row(i);
    y.sample_rate = ds.meta.sample_rate;
    AudioSignal y_hat = kosc::render(x_hat, ds.meta.k, ds.meta.variant, ds.meta.n_samples, true,
                                     ds.meta.sample_rate);
    double lsd = metrics::lsd(y, y_hat);
    double pm = use_lac ? metrics::lac(x, x_hat, ds.meta.k) : metrics::mse(x, x_hat);
    report.rows[static_cast<size_t>(i)] = {lsd, pm};
  }
  report.finalize();
  if (!out_csv.empty()) report.write_csv(out_csv);
  return report;
}

}  // namespace

metrics::MetricReport evaluate_with_predictor(const Predictor& predict, const data::Dataset& ds,
                                              const std::string& out_csv, int64_t max_items) {
  int64_t n = ds.meta.count;
  if (max_items > 0) n = std::min(n, max_items);
  std::vector<std::vector<double>> preds(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    preds[static_cast<size_t>(i)] = clip_unit(predict(ds.params_row(i), i));
  return make_report(ds, preds, out_csv);
}

metrics::MetricReport evaluate(const std::string& ckpt_path, const std::string& data_dir,
                               const std::string& out_csv, const EvalOptions& opt) {
  LoadedModel lm = load_model_checkpoint(ckpt_path);
  data::Dataset ds = data::load_dataset(data_dir, /*keep_audio=*/true);
  const ArchConfig& arch = lm.model->config();
  if (ds.meta.k != arch.k || ds.meta.variant != arch.task ||
      ds.meta.n_samples != arch.n_samples)
    throw std::invalid_argument("evaluate: dataset does not match checkpoint");

  int64_t n = ds.meta.count;
  if (opt.max_items > 0) n = std::min(n, opt.max_items);
  int sampler_steps = opt.sampler_steps > 0 ? opt.sampler_steps : lm.experiment.sampler_steps;
  double guidance = opt.guidance >= 0.0 ? opt.guidance : lm.experiment.guidance;
  int dim = ds.param_dim;

  std::vector<std::vector<double>> preds(static_cast<size_t>(n));
  if (arch.variant == ModelVariant::Random) {
    for (int64_t i = 0; i < n; ++i)
      preds[static_cast<size_t>(i)] =
          kosc::sample_params(arch.k, arch.task, hash_seed(opt.eval_seed, static_cast<uint64_t>(i)));
    return make_report(ds, preds, out_csv);
  }

  nn::NoGradGuard ng;
  for (int64_t start = 0; start < n; start += opt.chunk) {
    int64_t stop = std::min<int64_t>(n, start + opt.chunk);
    std::vector<int64_t> idx;
    for (int64_t i = start; i < stop; ++i) idx.push_back(i);
    Tensor cond = lm.model->encode(nn::Var::constant(ds.spectra_batch(idx))).val();

    if (lm.model->is_flow()) {
      std::vector<uint64_t> seeds;
      for (int64_t i = start; i < stop; ++i)
        seeds.push_back(hash_seed(opt.eval_seed, static_cast<uint64_t>(i)));
      flow::BatchField f = [&](const Tensor& x, double t, bool conditional) {
        return lm.model->field_value(x, t, cond, conditional);
      };
      Tensor samples = flow::sample_rk4_batch(f, dim, sampler_steps, guidance, seeds);
      for (int64_t i = start; i < stop; ++i) {
        std::vector<double> row(samples.data() + (i - start) * dim,
                                samples.data() + (i - start + 1) * dim);
        preds[static_cast<size_t>(i)] = clip_unit(std::move(row));
      }
    } else {
      Tensor out = lm.model->predict(nn::Var(Tensor(cond), false)).val();
      for (int64_t i = start; i < stop; ++i) {
        std::vector<double> row(out.data() + (i - start) * dim, out.data() + (i - start + 1) * dim);
        preds[static_cast<size_t>(i)] = clip_unit(std::move(row));
      }
    }
  }
  return make_report(ds, preds, out_csv);
}

// ---------------- verification suites ----------------

namespace {

CheckResult make_result(const std::string& name, bool ok, const std::string& detail) {
  return CheckResult{name, ok, detail};
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace

std::vector<CheckResult> check_oracle_assignment(int instances) {
  Rng rng(20240817);
  bool ok = true;
  int bad = 0;
  for (int it = 0; it < instances; ++it) {
    int n = 1 + static_cast<int>(rng.uniform_index(7));
    std::vector<double> cost(static_cast<size_t>(n) * n);
    for (auto& c : cost) c = 4.0 * rng.uniform_pm1();
    auto h = assign::hungarian(cost, n);
    auto b = assign::brute_force_assignment(cost, n);
    if (h.cost != b.cost) {
      ok = false;
      ++bad;
    }
  }
  return {make_result("hungarian equals brute force on " + std::to_string(instances) +
                          " random matrices (exact)",
                      ok, ok ? "all equal" : std::to_string(bad) + " mismatches")};
}

std::vector<CheckResult> check_oracle_dtw(int instances) {
  Rng rng(20240818);
  bool ok = true;
  int bad = 0;
  for (int it = 0; it < instances; ++it) {
    dsp::FrameSeries a, b;
    a.n_frames = 1 + static_cast<int64_t>(rng.uniform_index(6));
    b.n_frames = 1 + static_cast<int64_t>(rng.uniform_index(6));
    a.n_features = b.n_features = 1 + static_cast<int64_t>(rng.uniform_index(3));
    a.values.resize(static_cast<size_t>(a.n_frames * a.n_features));
    b.values.resize(static_cast<size_t>(b.n_frames * b.n_features));
    for (auto& v : a.values) v = rng.uniform_pm1();
    for (auto& v : b.values) v = rng.uniform_pm1();
    if (metrics::dtw_l1(a, b) != oracles::dtw_enumerate(a, b)) {
      ok = false;
      ++bad;
    }
  }
  return {make_result("dtw equals exhaustive path enumeration on " + std::to_string(instances) +
                          " series pairs (exact)",
                      ok, ok ? "all equal" : std::to_string(bad) + " mismatches")};
}

std::vector<CheckResult> check_oracle_sot(int instances) {
  Rng rng(20240819);
  double worst = 0.0;
  for (int it = 0; it < instances; ++it) {
    int nb = 2 + static_cast<int>(rng.uniform_index(15));
    std::vector<double> a(static_cast<size_t>(nb)), b(static_cast<size_t>(nb));
    for (auto& v : a) v = rng.uniform() < 0.15 ? 0.0 : rng.uniform();
    for (auto& v : b) v = rng.uniform() < 0.15 ? 0.0 : rng.uniform();
    double closed = metrics::w1_spectrum(a, b);
    std::vector<double> pos(static_cast<size_t>(nb));
    for (int i = 0; i < nb; ++i) pos[static_cast<size_t>(i)] = static_cast<double>(i) / (nb - 1);
    std::vector<double> ma(a), mb(b);
    for (auto& v : ma) v += 1e-8;
    for (auto& v : mb) v += 1e-8;
    double lp = oracles::lp_transport_w1(ma, pos, mb, pos);
    worst = std::max(worst, std::abs(closed - lp));
  }
  bool ok = worst <= 1e-9;
  return {make_result("closed-form spectral W1 equals LP transport oracle within 1e-9", ok,
                      "max abs diff " + fmt(worst))};
}

std::vector<CheckResult> check_fixture() {
  p2t::FixtureReport r = p2t::conditional_symmetry_fixture();
  std::vector<CheckResult> out;
  out.push_back(make_result("routing on: permuted input equals permuted output exactly",
                            r.equal_branch_max_abs_diff == 0.0,
                            "max abs diff " + fmt(r.equal_branch_max_abs_diff)));
  out.push_back(make_result("routing off: the two sides differ",
                            r.unequal_branch_max_abs_diff > 0.0,
                            "max abs diff " + fmt(r.unequal_branch_max_abs_diff)));
  out.push_back(make_result("equal inputs with routing on stay symmetric",
                            r.stabilizer_max_abs_diff == 0.0,
                            "max abs diff " + fmt(r.stabilizer_max_abs_diff)));
  return out;
}

std::vector<CheckResult> run_check_suite(const std::string& suite, const std::string& work_dir) {
  if (suite == "grad") return check_grad_suite();
  if (suite == "equivariance") return check_equivariance_suite();
  if (suite == "fixture") return check_fixture();
  if (suite == "oracles") {
    std::vector<CheckResult> out;
    for (auto& r : check_oracle_assignment()) out.push_back(r);
    for (auto& r : check_oracle_dtw()) out.push_back(r);
    for (auto& r : check_oracle_sot()) out.push_back(r);
    return out;
  }
  if (suite == "determinism") return check_determinism(work_dir);
  if (suite == "metrics") return check_metric_identities();
  throw std::invalid_argument("unknown check suite: " + suite);
}

}  // namespace permflow::harness
