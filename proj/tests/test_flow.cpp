#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "permflow/flow.hpp"
#include "permflow/harness.hpp"
#include "permflow/metrics.hpp"
#include "permflow/rng.hpp"

using namespace permflow;
using nn::Var;

namespace {

Tensor randn(std::vector<int64_t> shape, uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.gaussian();
  return t;
}

// Field model wrapping a plain function; ignores conditioning.
struct FnField : flow::FlowFieldModel {
  std::function<Tensor(const Tensor&, const std::vector<double>&)> fn;
  Var field(const Var& x_t, const std::vector<double>& t, const Var&,
            const std::vector<uint8_t>&) override {
    return Var::constant(fn(x_t.val(), t));
  }
};

}  // namespace

TEST_CASE("sample_path endpoints and degenerate pair") {
  Tensor x0 = randn({4, 3}, 1), x1 = randn({4, 3}, 2);
  auto p0 = flow::sample_path(x0, x1, {0, 0, 0, 0});
  for (int64_t i = 0; i < x0.size(); ++i) CHECK(p0.x_t[i] == x0[i]);
  auto p1 = flow::sample_path(x0, x1, {1, 1, 1, 1});
  for (int64_t i = 0; i < x1.size(); ++i) CHECK(p1.x_t[i] == x1[i]);

  auto pd = flow::sample_path(x0, x0, {0.3, 0.6, 0.1, 0.9});
  for (int64_t i = 0; i < x0.size(); ++i) {
    CHECK(pd.x_t[i] == doctest::Approx(x0[i]).epsilon(1e-15));
    CHECK(pd.u_target[i] == 0.0);
  }
  CHECK_THROWS(flow::sample_path(x0, x1, {0.5}));
  CHECK_THROWS(flow::sample_path(x0, x1, {0, 0, 0, 1.5}));
}

TEST_CASE("guided field endpoints") {
  Tensor vc = randn({2, 3}, 3), vu = randn({2, 3}, 4);
  Tensor g1 = flow::guided_field(vc, vu, 1.0);
  for (int64_t i = 0; i < vc.size(); ++i) CHECK(g1[i] == vc[i]);
  Tensor g0 = flow::guided_field(vc, vu, 0.0);
  for (int64_t i = 0; i < vu.size(); ++i) CHECK(g0[i] == vu[i]);
  Tensor g2 = flow::guided_field(vc, vc, 2.0);
  for (int64_t i = 0; i < vc.size(); ++i) CHECK(g2[i] == vc[i]);
}

TEST_CASE("cfm loss vanishes for the oracle field on a shifted batch") {
  // data = x0 + c with a small shift keeps the identity pairing optimal
  // and makes the target field constant; a model that outputs exactly c
  // achieves zero loss.
  int b = 6, d = 4;
  uint64_t seed = 99;
  Tensor x0({b, d});
  {
    Rng rng(hash_seed(seed, 1));  // cfm_loss draw order: sources first
    for (int64_t i = 0; i < x0.size(); ++i) x0[i] = rng.gaussian();
  }
  double c = 0.05;
  Tensor data(x0.shape());
  for (int64_t i = 0; i < x0.size(); ++i) data[i] = x0[i] + c;

  FnField model;
  model.fn = [&](const Tensor& x, const std::vector<double>&) {
    return Tensor::full(x.shape(), c);
  };
  Var cond = Var::constant(Tensor({b, 2}));
  Var loss = flow::cfm_loss(model, data, cond, seed);
  CHECK(loss.val().item() == doctest::Approx(0.0).scale(1).epsilon(1e-24));
}

TEST_CASE("cfm loss is invariant to simultaneous permutation of data and conditioning") {
  auto arch = [] {
    harness::ArchConfig a;
    a.variant = harness::ModelVariant::CnfMlp;
    a.k = 2;
    a.n_samples = 64;
    a.init_seed = 3;
    a.encoder = {33, 4, 2, 5, 16};
    a.mlp = {16, 32, 2, 17, 16};
    return a;
  }();
  auto model = harness::build_model(arch);
  int b = 8, d = 6;
  Tensor data = randn({b, d}, 5);
  Tensor cond = randn({b, 16}, 6);
  nn::NoGradGuard ng;
  double l1 = flow::cfm_loss(*model, data, Var::constant(cond), 42).val().item();

  std::vector<int> perm = {5, 2, 7, 0, 3, 6, 1, 4};
  Tensor data_p({b, d}), cond_p({b, 16});
  for (int r = 0; r < b; ++r)
    for (int j = 0; j < d; ++j) data_p[r * d + j] = data[perm[r] * d + j];
  for (int r = 0; r < b; ++r)
    for (int j = 0; j < 16; ++j) cond_p[r * 16 + j] = cond[perm[r] * 16 + j];
  double l2 = flow::cfm_loss(*model, data_p, Var::constant(cond_p), 42).val().item();
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
}

TEST_CASE("OT coupling does not increase the loss versus identity coupling") {
  // paired comparison over 200 seeds on a fixed random model
  auto arch = [] {
    harness::ArchConfig a;
    a.variant = harness::ModelVariant::CnfMlp;
    a.k = 2;
    a.n_samples = 64;
    a.init_seed = 11;
    a.encoder = {33, 4, 2, 5, 16};
    a.mlp = {16, 32, 2, 17, 16};
    return a;
  }();
  auto model = harness::build_model(arch);
  int b = 16, d = 6;
  nn::NoGradGuard ng;
  std::vector<double> ot_losses, id_losses;
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor data = randn({b, d}, hash_seed(100, trial));
    Tensor cond = randn({b, 16}, hash_seed(200, trial));
    uint64_t seed = hash_seed(300, trial);
    ot_losses.push_back(
        flow::cfm_loss(*model, data, Var::constant(cond), seed, flow::Coupling::OptimalTransport)
            .val()
            .item());
    id_losses.push_back(
        flow::cfm_loss(*model, data, Var::constant(cond), seed, flow::Coupling::Identity)
            .val()
            .item());
  }
  double p = metrics::wilcoxon_signed_rank_less(ot_losses, id_losses);
  CHECK(p < 0.01);
}

TEST_CASE("rk4 is exact on constant fields") {
  flow::BatchField f = [](const Tensor& x, double, bool) {
    return Tensor::full(x.shape(), 0.75);
  };
  Tensor x0 = randn({3, 5}, 8);
  Tensor out = flow::sample_rk4_from(f, x0, 17, 1.0);
  for (int64_t i = 0; i < x0.size(); ++i)
    CHECK(out[i] == doctest::Approx(x0[i] + 0.75).epsilon(1e-13));
}

TEST_CASE("rk4 integrates the linear field to e * x0") {
  flow::BatchField f = [](const Tensor& x, double, bool) { return x; };
  Tensor x0 = randn({2, 4}, 9);
  Tensor out = flow::sample_rk4_from(f, x0, 100, 1.0);
  for (int64_t i = 0; i < x0.size(); ++i)
    CHECK(out[i] == doctest::Approx(std::exp(1.0) * x0[i]).epsilon(1e-6));
}

TEST_CASE("rk4 order: halving the step cuts the error by at least 2^3") {
  // analytic, non-stiff: dx/dt = x * cos(2 pi t) has solution
  // x0 * exp(sin(2 pi t)/(2 pi))
  constexpr double two_pi = 6.283185307179586477;
  flow::BatchField f = [](const Tensor& x, double t, bool) {
    Tensor v(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) v[i] = x[i] * std::cos(two_pi * t);
    return v;
  };
  Tensor x0 = Tensor({1, 1}, {1.3});
  double exact = 1.3 * std::exp(std::sin(two_pi) / two_pi);  // = 1.3 at t = 1
  double prev_err = -1.0;
  for (int steps : {8, 16, 32, 64, 128}) {
    Tensor out = flow::sample_rk4_from(f, x0, steps, 1.0);
    double err = std::abs(out[0] - exact);
    if (prev_err > 0 && prev_err > 1e-12)  // above the 64-bit noise floor
      CHECK(prev_err / std::max(err, 1e-300) >= 8.0);
    prev_err = err;
  }
}

TEST_CASE("rk4 aborts on non-finite state with the step index") {
  flow::BatchField f = [](const Tensor& x, double t, bool) {
    Tensor v(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) v[i] = t > 0.4 ? std::nan("") : 0.0;
    return v;
  };
  Tensor x0 = randn({1, 2}, 10);
  CHECK_THROWS_WITH_AS(flow::sample_rk4_from(f, x0, 10, 1.0), doctest::Contains("step"),
                       std::runtime_error);
}

TEST_CASE("sampling is deterministic in the seed and batchable") {
  flow::BatchField f = [](const Tensor& x, double t, bool cond) {
    Tensor v(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) v[i] = 0.3 * x[i] + (cond ? 0.1 : -0.1) + 0.2 * t;
    return v;
  };
  auto a = flow::sample_rk4(f, 5, 50, 2.0, 1234);
  auto b = flow::sample_rk4(f, 5, 50, 2.0, 1234);
  CHECK(a == b);
  auto c = flow::sample_rk4(f, 5, 50, 2.0, 1235);
  CHECK(a != c);

  // batch of two seeds equals two single runs (rowwise field)
  Tensor batch = flow::sample_rk4_batch(f, 5, 50, 2.0, {1234, 1235});
  for (int j = 0; j < 5; ++j) {
    CHECK(batch[j] == doctest::Approx(a[j]).epsilon(1e-12));
    CHECK(batch[5 + j] == doctest::Approx(c[j]).epsilon(1e-12));
  }
}

TEST_CASE("flow-model sampler equivariance with permuted noise") {
  harness::ArchConfig a;
  a.variant = harness::ModelVariant::CnfEquivariant;
  a.k = 3;
  a.n_samples = 64;
  a.init_seed = 21;
  a.encoder = {33, 4, 2, 5, 16};
  a.dit = {8, 2, 16, 2, 17, 16};
  auto model = harness::build_model(a);
  Tensor cond = randn({1, 16}, 22);
  flow::BatchField f = [&](const Tensor& x, double t, bool conditional) {
    return model->field_value(x, t, cond, conditional);
  };
  Tensor x0 = randn({1, 9}, 23);
  std::vector<int> perm = {1, 2, 0};
  Tensor x0p({1, 9});
  for (int fld = 0; fld < 3; ++fld)
    for (int i = 0; i < 3; ++i) x0p[fld * 3 + i] = x0[fld * 3 + perm[i]];
  Tensor s = flow::sample_rk4_from(f, x0, 100, 2.0);
  Tensor sp = flow::sample_rk4_from(f, x0p, 100, 2.0);
  for (int fld = 0; fld < 3; ++fld)
    for (int i = 0; i < 3; ++i)
      CHECK(std::abs(sp[fld * 3 + i] - s[fld * 3 + perm[i]]) <= 1e-5);
}
