#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "permflow/blas.hpp"
#include "permflow/checkpoint.hpp"
#include "permflow/dsp.hpp"
#include "permflow/harness.hpp"
#include "permflow/kosc.hpp"
#include "permflow/param2tok.hpp"

namespace pf = permflow;

namespace {

int run_check(const std::string& suite, const std::string& work_dir) {
  std::vector<pf::harness::CheckResult> results = pf::harness::run_check_suite(suite, work_dir);
  bool all_ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "[pass] " : "[FAIL] ") << r.name << " — " << r.detail << "\n";
    all_ok = all_ok && r.passed;
  }
  return all_ok ? 0 : 1;
}

std::vector<double> read_audio_f32(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  f.seekg(0, std::ios::end);
  auto bytes = static_cast<int64_t>(f.tellg());
  f.seekg(0);
  std::vector<float> raw(static_cast<size_t>(bytes / 4));
  f.read(reinterpret_cast<char*>(raw.data()), bytes);
  return {raw.begin(), raw.end()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"k-oscillator synthesizer inversion experiments"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "render a parameter/audio dataset");
  pf::kosc::DatasetConfig dc;
  std::string gen_variant = "symmetric", gen_out;
  gen->add_option("--k", dc.k, "oscillator count")->required();
  gen->add_option("--variant", gen_variant, "symmetric|asymmetric|gated");
  gen->add_option("--count", dc.count, "number of examples")->required();
  gen->add_option("--seed", dc.seed, "dataset seed");
  gen->add_option("--n-samples", dc.n_samples, "samples per signal");
  gen->add_option("--sample-rate", dc.sample_rate, "nominal sample rate");
  gen->add_option("--out", gen_out, "output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model from a config file");
  std::string tr_config, tr_out = "model.ckpt", tr_log;
  std::vector<std::string> tr_overrides;
  tr->add_option("--config", tr_config, "key/value config file");
  tr->add_option("--out", tr_out, "checkpoint path");
  tr->add_option("--log", tr_log, "training log path (default stdout)");
  tr->add_option("--set", tr_overrides, "config overrides, key=value")->take_all();
  pf::harness::ExperimentConfig trc;
  std::string tr_model, tr_task, tr_train_data, tr_test_data;
  int64_t tr_steps = -1;
  int tr_batch = -1, tr_sampler = -1;
  double tr_lr = -1.0, tr_guidance = -1.0;
  int64_t tr_seed = -1;
  tr->add_option("--model", tr_model, "model variant");
  tr->add_option("--k", trc.k, "oscillator count")->default_val(-1);
  tr->add_option("--task", tr_task, "task variant");
  tr->add_option("--steps", tr_steps, "training steps");
  tr->add_option("--batch", tr_batch, "batch size");
  tr->add_option("--lr", tr_lr, "learning rate");
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--sampler-steps", tr_sampler, "ODE steps at inference");
  tr->add_option("--guidance", tr_guidance, "guidance scale");
  tr->add_option("--train-data", tr_train_data, "training dataset directory");
  tr->add_option("--test-data", tr_test_data, "test dataset directory");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_csv;
  pf::harness::EvalOptions eo;
  int64_t ev_seed = 0;
  ev->add_option("--ckpt", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--out-csv", ev_csv)->required();
  ev->add_option("--seed", ev_seed, "evaluation seed");
  ev->add_option("--items", eo.max_items, "max items (0 = all)");
  ev->add_option("--sampler-steps", eo.sampler_steps, "override ODE steps");
  ev->add_option("--guidance", eo.guidance, "override guidance scale");

  // sample
  auto* sm = app.add_subcommand("sample", "infer parameters for one audio file");
  std::string sm_ckpt, sm_audio, sm_out;
  int64_t sm_seed = 0;
  sm->add_option("--ckpt", sm_ckpt)->required();
  sm->add_option("--audio-in", sm_audio, "raw little-endian f32 samples")->required();
  sm->add_option("--seed", sm_seed, "sampling seed");
  sm->add_option("--out", sm_out, "write parameters here instead of stdout");

  // check
  auto* ck = app.add_subcommand("check", "run a verification suite");
  std::string ck_suite, ck_work = "check_work";
  ck->add_option("--suite", ck_suite, "grad|equivariance|oracles|fixture|metrics|determinism")
      ->required();
  ck->add_option("--work-dir", ck_work, "scratch directory for determinism checks");

  // export-p2t
  auto* ex = app.add_subcommand("export-p2t", "export learned projection matrices as CSV");
  std::string ex_ckpt, ex_out;
  ex->add_option("--ckpt", ex_ckpt)->required();
  ex->add_option("--out-dir", ex_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      dc.variant = pf::kosc::variant_from_name(gen_variant);
      pf::kosc::generate_dataset(dc, gen_out);
      std::cout << "wrote " << dc.count << " records to " << gen_out << "\n";
      return 0;
    }
    if (*tr) {
      pf::harness::ExperimentConfig cfg;
      if (!tr_config.empty()) cfg = pf::harness::parse_config_file(tr_config);
      if (!tr_model.empty()) cfg.model = pf::harness::model_variant_from_name(tr_model);
      if (trc.k > 0) cfg.k = trc.k;
      if (!tr_task.empty()) cfg.task = pf::kosc::variant_from_name(tr_task);
      if (tr_steps >= 0) cfg.steps = tr_steps;
      if (tr_batch > 0) cfg.batch = tr_batch;
      if (tr_lr > 0) cfg.lr = tr_lr;
      if (tr_seed >= 0) cfg.seed = static_cast<uint64_t>(tr_seed);
      if (tr_sampler > 0) cfg.sampler_steps = tr_sampler;
      if (tr_guidance >= 0) cfg.guidance = tr_guidance;
      if (!tr_train_data.empty()) cfg.train_data = tr_train_data;
      if (!tr_test_data.empty()) cfg.test_data = tr_test_data;
      for (const std::string& kv : tr_overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::runtime_error("--set expects key=value");
        pf::harness::apply_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      std::ofstream log_file;
      std::ostream* log = &std::cout;
      if (!tr_log.empty()) {
        log_file.open(tr_log);
        log = &log_file;
      }
      pf::harness::TrainResult res = pf::harness::train(cfg, tr_out, log);
      std::cout << "checkpoint " << res.checkpoint_path << " (steps " << res.steps_run
                << ", final loss " << res.final_loss << ")\n";
      return 0;
    }
    if (*ev) {
      eo.eval_seed = static_cast<uint64_t>(ev_seed);
      pf::metrics::MetricReport rep = pf::harness::evaluate(ev_ckpt, ev_data, ev_csv, eo);
      for (size_t c = 0; c < rep.columns.size(); ++c)
        std::cout << rep.columns[c] << " mean=" << rep.mean[c] << " ci95=" << rep.ci95[c] << "\n";
      return 0;
    }
    if (*sm) {
      pf::ckpt::Checkpoint c = pf::ckpt::read_checkpoint(sm_ckpt);
      pf::harness::ArchConfig arch = pf::harness::ArchConfig::from_json(c.meta.at("arch"));
      std::vector<double> audio = read_audio_f32(sm_audio);
      if (static_cast<int>(audio.size()) != arch.n_samples)
        throw std::runtime_error("audio length does not match the checkpoint's signal length");
      // Evaluate through a one-record scratch dataset path: encode + infer.
      pf::AudioSignal y{audio, pf::kDefaultSampleRate};
      pf::dsp::MagnitudeSpectrum spec = pf::dsp::dft_mag(y);
      auto model = pf::harness::build_model(arch);
      model->load_tensors(c);
      pf::Tensor s({1, static_cast<int64_t>(spec.bins.size())});
      for (size_t i = 0; i < spec.bins.size(); ++i)
        s[static_cast<int64_t>(i)] = spec.bins[i] * 2.0 / arch.n_samples;
      pf::nn::NoGradGuard ng;
      pf::Tensor cond = model->encode(pf::nn::Var::constant(s)).val();
      std::vector<double> x_hat;
      if (model->is_flow()) {
        int steps = c.meta.at("experiment").value("sampler_steps", 100);
        double guidance = c.meta.at("experiment").value("guidance", 2.0);
        pf::flow::BatchField f = [&](const pf::Tensor& x, double t, bool conditional) {
          return model->field_value(x, t, cond, conditional);
        };
        x_hat = pf::flow::sample_rk4(f, arch.param_dim(), steps, guidance,
                                     static_cast<uint64_t>(sm_seed));
      } else if (arch.variant == pf::harness::ModelVariant::Random) {
        x_hat = pf::kosc::sample_params(arch.k, arch.task, static_cast<uint64_t>(sm_seed));
      } else {
        pf::Tensor out = model->predict(pf::nn::Var::constant(cond)).val();
        x_hat.assign(out.data(), out.data() + out.size());
      }
      for (double& v : x_hat) v = std::clamp(v, -1.0, 1.0);
      std::ostream* os = &std::cout;
      std::ofstream out_file;
      if (!sm_out.empty()) {
        out_file.open(sm_out);
        os = &out_file;
      }
      os->precision(12);
      for (size_t i = 0; i < x_hat.size(); ++i) (*os) << (i ? " " : "") << x_hat[i];
      (*os) << "\n";
      return 0;
    }
    if (*ck) return run_check(ck_suite, ck_work);
    if (*ex) {
      pf::ckpt::Checkpoint c = pf::ckpt::read_checkpoint(ex_ckpt);
      pf::harness::ArchConfig arch = pf::harness::ArchConfig::from_json(c.meta.at("arch"));
      if (arch.variant != pf::harness::ModelVariant::CnfParam2Tok)
        throw std::runtime_error("export-p2t: checkpoint is not a cnf-param2tok model");
      pf::p2t::Param2TokParams p;
      auto need = [&](const std::string& name) {
        const pf::Tensor* t = c.find(name);
        if (!t) throw std::runtime_error("checkpoint missing " + name);
        return *t;
      };
      p.Z = need("param.p2t.z");
      p.Zp = need("param.p2t.zp");
      p.A = need("param.p2t.a");
      p.W1 = need("param.p2t.h.w1");
      p.b1 = need("param.p2t.h.b1");
      p.W2 = need("param.p2t.h.w2");
      p.b2 = need("param.p2t.h.b2");
      pf::p2t::export_p2t_csv(p, ex_out);
      std::cout << "wrote projection CSVs to " << ex_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
