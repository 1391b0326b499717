#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "permflow/harness.hpp"
#include "permflow/rng.hpp"

using namespace permflow;
using harness::ModelVariant;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
  fs::path p = fs::temp_directory_path() / "pf_harness_test";
  fs::create_directories(p);
  return p;
}

void make_dataset(const fs::path& dir, int k, kosc::TaskVariant task, int64_t count,
                  int n_samples, uint64_t seed) {
  if (fs::exists(dir / "meta.json")) return;
  kosc::DatasetConfig dc;
  dc.k = k;
  dc.variant = task;
  dc.count = count;
  dc.n_samples = n_samples;
  dc.seed = seed;
  kosc::generate_dataset(dc, dir.string());
}

harness::ArchConfig tiny_arch(ModelVariant v, kosc::TaskVariant task, int k) {
  harness::ArchConfig a;
  a.variant = v;
  a.k = k;
  a.task = task;
  a.n_samples = 64;
  a.init_seed = 5;
  a.encoder = {33, 4, 2, 5, 16};
  a.dit = {8, 2, 16, 2, 17, 16};
  a.mlp = {16, 32, 2, 17, 16};
  a.head_width = 16;
  a.head_layers = 2;
  return a;
}

}  // namespace

TEST_CASE("build_model wires every variant and rejects invalid combinations") {
  for (ModelVariant v : {ModelVariant::FfnMse, ModelVariant::FfnSort, ModelVariant::FfnChamfer,
                         ModelVariant::CnfEquivariant, ModelVariant::CnfParam2Tok,
                         ModelVariant::CnfMlp}) {
    auto m = harness::build_model(tiny_arch(v, kosc::TaskVariant::Symmetric, 4));
    CHECK(m->param_count() > 0);
  }
  auto r = harness::build_model(tiny_arch(ModelVariant::Random, kosc::TaskVariant::Symmetric, 4));
  CHECK(r->param_count() == 0);

  CHECK_THROWS(harness::build_model(tiny_arch(ModelVariant::FfnSort, kosc::TaskVariant::Asymmetric, 4)));
  CHECK_THROWS(harness::build_model(tiny_arch(ModelVariant::CnfEquivariant, kosc::TaskVariant::Gated, 4)));
}

TEST_CASE("flow variants produce one token per oscillator and fields of the right shape") {
  int k = 4;
  auto eq = harness::build_model(tiny_arch(ModelVariant::CnfEquivariant, kosc::TaskVariant::Symmetric, k));
  auto pt = harness::build_model(tiny_arch(ModelVariant::CnfParam2Tok, kosc::TaskVariant::Symmetric, k));
  // the learned assignment maps 3k parameters onto k tokens
  CHECK(pt->p2t_assignment().val().shape() == std::vector<int64_t>{k, 3 * k});

  Rng rng(1);
  Tensor x({2, 3 * k}), cond({2, 16});
  for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform_pm1();
  for (int64_t i = 0; i < cond.size(); ++i) cond[i] = rng.uniform_pm1();
  for (auto* m : {eq.get(), pt.get()}) {
    Tensor v = m->field_value(x, 0.3, cond, true);
    CHECK(v.shape() == x.shape());
  }
}

TEST_CASE("sort_canonicalize orders triples by frequency and is idempotent") {
  //            w1    w2    w3    a1   a2   a3   g1    g2   g3
  std::vector<double> x = {0.5, -0.5, 0.1, 0.9, 0.8, 0.7, -0.1, 0.2, 0.3};
  auto s = harness::sort_canonicalize(x, 3);
  std::vector<double> expect = {-0.5, 0.1, 0.5, 0.8, 0.7, 0.9, 0.2, 0.3, -0.1};
  CHECK(s == expect);
  CHECK(harness::sort_canonicalize(s, 3) == s);

  // reverse-sorted input flips completely, carrying amplitude and shape
  std::vector<double> rev = {0.3, 0.2, 0.1, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
  auto sr = harness::sort_canonicalize(rev, 3);
  CHECK(sr == std::vector<double>{0.1, 0.2, 0.3, 3.0, 2.0, 1.0, 6.0, 5.0, 4.0});

  // already sorted stays put
  CHECK(harness::sort_canonicalize(expect, 3) == expect);
}

TEST_CASE("config file parsing, overrides, and errors") {
  fs::path p = work_dir() / "cfg.txt";
  {
    std::ofstream f(p);
    f << "# experiment configuration\n";
    f << "model = cnf-equivariant\n";
    f << "k 4\n";
    f << "task asymmetric\n";
    f << "steps = 1234\n";
    f << "lr 0.0005\n";
    f << "train_data /tmp/train\n";
  }
  harness::ExperimentConfig cfg = harness::parse_config_file(p.string());
  CHECK(cfg.model == ModelVariant::CnfEquivariant);
  CHECK(cfg.k == 4);
  CHECK(cfg.task == kosc::TaskVariant::Asymmetric);
  CHECK(cfg.steps == 1234);
  CHECK(cfg.lr == doctest::Approx(5e-4));
  CHECK(cfg.train_data == "/tmp/train");
  CHECK(cfg.batch == 128);  // untouched default

  harness::apply_config_kv(cfg, "batch", "32");
  CHECK(cfg.batch == 32);
  CHECK_THROWS(harness::apply_config_kv(cfg, "nonsense", "1"));

  fs::path bad = work_dir() / "bad.txt";
  std::ofstream(bad.string()) << "steps\n";
  CHECK_THROWS(harness::parse_config_file(bad.string()));
}

TEST_CASE("arch config json round trip") {
  harness::ArchConfig a = tiny_arch(ModelVariant::CnfParam2Tok, kosc::TaskVariant::Gated, 3);
  harness::ArchConfig b = harness::ArchConfig::from_json(a.to_json());
  CHECK(b.variant == a.variant);
  CHECK(b.k == a.k);
  CHECK(b.task == a.task);
  CHECK(b.dit.dim == a.dit.dim);
  CHECK(b.mlp.layers == a.mlp.layers);
  CHECK(b.encoder.base_channels == a.encoder.base_channels);
}

TEST_CASE("zero-step training checkpoints the initialization") {
  fs::path ds = work_dir() / "ds_small";
  make_dataset(ds, 2, kosc::TaskVariant::Symmetric, 24, 64, 3);
  harness::ExperimentConfig cfg;
  cfg.model = ModelVariant::FfnMse;
  cfg.k = 2;
  cfg.steps = 0;
  cfg.batch = 8;
  cfg.seed = 17;
  cfg.train_data = ds.string();
  fs::path out = work_dir() / "init.ckpt";
  harness::train(cfg, out.string(), nullptr);

  ckpt::Checkpoint c = ckpt::read_checkpoint(out.string());
  harness::ArchConfig arch = harness::ArchConfig::from_json(c.meta.at("arch"));
  CHECK(c.meta.at("step").get<int64_t>() == 0);
  auto fresh = harness::build_model(arch);
  for (auto& p : fresh->params()) {
    const Tensor* t = c.find("param." + p.name());
    REQUIRE(t != nullptr);
    CHECK(t->vec() == p.val().vec());
  }
}

TEST_CASE("training memorizes a 16-example set within 20k steps") {
  fs::path ds = work_dir() / "ds_memorize";
  make_dataset(ds, 2, kosc::TaskVariant::Symmetric, 16, 64, 11);
  harness::ExperimentConfig cfg;
  cfg.model = ModelVariant::FfnMse;
  cfg.k = 2;
  cfg.steps = 20000;
  cfg.batch = 16;
  cfg.seed = 1;
  cfg.train_data = ds.string();
  cfg.log_every = 5000;
  cfg.val_every = 0;
  cfg.target_loss = 1e-3;
  fs::path out = work_dir() / "memorize.ckpt";
  std::ostringstream log;
  harness::TrainResult res = harness::train(cfg, out.string(), &log);
  CHECK(res.final_loss < 1e-3);
  CHECK(res.steps_run <= 20000);
}

TEST_CASE("training aborts on divergence with the step number") {
  fs::path ds = work_dir() / "ds_small";
  make_dataset(ds, 2, kosc::TaskVariant::Symmetric, 24, 64, 3);
  harness::ExperimentConfig cfg;
  cfg.model = ModelVariant::FfnMse;
  cfg.k = 2;
  cfg.steps = 50;
  cfg.batch = 8;
  cfg.lr = 1e18;  // guaranteed blow-up
  cfg.train_data = ds.string();
  cfg.val_every = 0;
  fs::path out = work_dir() / "diverge.ckpt";
  CHECK_THROWS_WITH_AS(harness::train(cfg, out.string(), nullptr), doctest::Contains("step"),
                       std::runtime_error);
}

TEST_CASE("oracle predictors achieve zero error; permuted oracles stay zero on symmetric") {
  fs::path ds_dir = work_dir() / "ds_eval";
  make_dataset(ds_dir, 3, kosc::TaskVariant::Symmetric, 40, 128, 7);
  data::Dataset ds = data::load_dataset(ds_dir.string(), true);

  // parameter recovery is exact; the audio side is zero up to the f32
  // quantization of the stored waveform (worst case ~1e-5 in LSD)
  auto oracle = [](const std::vector<double>& truth, int64_t) { return truth; };
  auto rep = harness::evaluate_with_predictor(oracle, ds, "", 0);
  CHECK(rep.mean[rep.column_index("lsd")] <= 1e-4);
  CHECK(rep.mean[rep.column_index("lac")] == 0.0);

  auto permuted = [](const std::vector<double>& truth, int64_t idx) {
    std::vector<int> perm = {1, 2, 0};
    std::vector<double> out = truth;
    for (int f = 0; f < 3; ++f)
      for (int i = 0; i < 3; ++i) out[f * 3 + i] = truth[f * 3 + perm[i]];
    return out;
  };
  auto rep_p = harness::evaluate_with_predictor(permuted, ds, "", 0);
  CHECK(rep_p.mean[rep_p.column_index("lac")] == 0.0);
  CHECK(rep_p.mean[rep_p.column_index("lsd")] <= 1e-4);
}

TEST_CASE("random baseline is strictly dominated by the oracle") {
  fs::path ds_dir = work_dir() / "ds_random";
  make_dataset(ds_dir, 4, kosc::TaskVariant::Symmetric, 1000, 128, 13);
  data::Dataset ds = data::load_dataset(ds_dir.string(), true);
  auto random_pred = [&](const std::vector<double>&, int64_t idx) {
    return kosc::sample_params(4, kosc::TaskVariant::Symmetric, hash_seed(999, idx));
  };
  auto rep = harness::evaluate_with_predictor(random_pred, ds, "", 0);
  auto lac = rep.column("lac");
  // the oracle's LAC is identically zero, so every positive entry is a win;
  // a sign test at 1000/1000 wins has p = 2^-1000
  int wins = 0;
  for (double v : lac)
    if (v > 0.0) ++wins;
  CHECK(wins == 1000);
}

TEST_CASE("trained checkpoint evaluates end to end and writes CSV") {
  fs::path ds_dir = work_dir() / "ds_e2e";
  make_dataset(ds_dir, 2, kosc::TaskVariant::Asymmetric, 32, 64, 23);
  harness::ExperimentConfig cfg;
  cfg.model = ModelVariant::CnfMlp;
  cfg.k = 2;
  cfg.task = kosc::TaskVariant::Asymmetric;
  cfg.steps = 10;
  cfg.batch = 8;
  cfg.seed = 2;
  cfg.sampler_steps = 15;
  cfg.train_data = ds_dir.string();
  cfg.val_every = 0;
  fs::path out = work_dir() / "e2e.ckpt";
  harness::train(cfg, out.string(), nullptr);

  fs::path csv = work_dir() / "e2e.csv";
  harness::EvalOptions eo;
  eo.max_items = 12;
  auto rep = harness::evaluate(out.string(), ds_dir.string(), csv.string(), eo);
  CHECK(rep.rows.size() == 12);
  CHECK(rep.column_index("mse") >= 0);  // asymmetric task reports MSE
  CHECK(fs::exists(csv));

  // mismatched dataset is rejected
  fs::path ds_other = work_dir() / "ds_small";
  make_dataset(ds_other, 2, kosc::TaskVariant::Symmetric, 24, 64, 3);
  CHECK_THROWS(harness::evaluate(out.string(), ds_other.string(), "", eo));
}

TEST_CASE("random-variant checkpoints evaluate without parameters") {
  fs::path ds_dir = work_dir() / "ds_eval";
  make_dataset(ds_dir, 3, kosc::TaskVariant::Symmetric, 40, 128, 7);
  harness::ExperimentConfig cfg;
  cfg.model = ModelVariant::Random;
  cfg.k = 3;
  cfg.steps = 1000;  // ignored: nothing to train
  cfg.train_data = ds_dir.string();
  fs::path out = work_dir() / "random.ckpt";
  harness::train(cfg, out.string(), nullptr);
  auto rep = harness::evaluate(out.string(), ds_dir.string(), "", {});
  CHECK(rep.rows.size() == 40);
  CHECK(rep.mean[rep.column_index("lac")] > 0.01);
}

TEST_CASE("symmetric evaluation is invariant to permuting the stored ground truth") {
  // permuting x in the dataset record changes neither LAC nor LSD
  fs::path ds_dir = work_dir() / "ds_eval";
  make_dataset(ds_dir, 3, kosc::TaskVariant::Symmetric, 40, 128, 7);
  data::Dataset ds = data::load_dataset(ds_dir.string(), true);
  data::Dataset ds_perm = ds;
  std::vector<int> perm = {2, 0, 1};
  for (int64_t r = 0; r < ds.meta.count; ++r)
    for (int f = 0; f < 3; ++f)
      for (int i = 0; i < 3; ++i)
        ds_perm.params[r * 9 + f * 3 + i] = ds.params[r * 9 + f * 3 + perm[i]];

  auto fixed = [](const std::vector<double>&, int64_t idx) {
    return kosc::sample_params(3, kosc::TaskVariant::Symmetric, hash_seed(31, idx));
  };
  auto rep_a = harness::evaluate_with_predictor(fixed, ds, "", 0);
  auto rep_b = harness::evaluate_with_predictor(fixed, ds_perm, "", 0);
  for (size_t i = 0; i < rep_a.rows.size(); ++i) {
    CHECK(rep_a.rows[i][0] == rep_b.rows[i][0]);
    CHECK(rep_a.rows[i][1] == doctest::Approx(rep_b.rows[i][1]).epsilon(1e-12));
  }
}

TEST_CASE("verification suites pass") {
  for (auto& r : harness::check_fixture()) CHECK_MESSAGE(r.passed, r.name, ": ", r.detail);
  for (auto& r : harness::check_metric_identities()) CHECK_MESSAGE(r.passed, r.name, ": ", r.detail);
  auto det = harness::check_determinism((work_dir() / "det").string());
  for (auto& r : det) CHECK_MESSAGE(r.passed, r.name, ": ", r.detail);
}
