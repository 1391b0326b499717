#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "permflow/kosc.hpp"
#include "permflow/metrics.hpp"
#include "permflow/oracles.hpp"
#include "permflow/rng.hpp"

using namespace permflow;
using kosc::TaskVariant;

namespace {
constexpr double kPi = 3.14159265358979323846;

std::vector<double> permute_triples(const std::vector<double>& x, int k,
                                    const std::vector<int>& perm) {
  std::vector<double> out = x;
  for (int f = 0; f < 3; ++f)
    for (int i = 0; i < k; ++i) out[f * k + i] = x[f * k + perm[i]];
  return out;
}
}  // namespace

TEST_CASE("scale_frequencies maps interval endpoints and midpoint") {
  auto lo = kosc::scale_frequencies({-1.0, -1.0, -1.0}, 3, TaskVariant::Symmetric);
  for (double w : lo) CHECK(w == 0.0);

  auto asym = kosc::scale_frequencies({1.0, 1.0}, 2, TaskVariant::Asymmetric);
  CHECK(asym[0] == doctest::Approx(kPi / 2).epsilon(1e-15));
  CHECK(asym[1] == doctest::Approx(kPi).epsilon(1e-15));

  auto mid = kosc::scale_frequencies(std::vector<double>(4, 0.0), 4, TaskVariant::Symmetric);
  for (double w : mid) CHECK(w == doctest::Approx(kPi / 2).epsilon(1e-15));
}

TEST_CASE("scale_frequencies band containment and gate routing") {
  Rng rng(1);
  int k = 5;
  std::vector<double> raw(k);
  for (auto& v : raw) v = rng.uniform_pm1();
  auto banded = kosc::scale_frequencies(raw, k, TaskVariant::Asymmetric);
  for (int i = 0; i < k; ++i) {
    CHECK(banded[i] >= i * kPi / k);
    CHECK(banded[i] <= (i + 1) * kPi / k);
  }
  // gate open behaves like the symmetric map, gate closed like the banded one
  CHECK(kosc::scale_frequencies(raw, k, TaskVariant::Gated, +1.0) ==
        kosc::scale_frequencies(raw, k, TaskVariant::Symmetric));
  CHECK(kosc::scale_frequencies(raw, k, TaskVariant::Gated, -1.0) == banded);
}

TEST_CASE("scale_frequencies rejects bad input") {
  CHECK_THROWS(kosc::scale_frequencies({2.0}, 1, TaskVariant::Symmetric));
  CHECK_THROWS(kosc::scale_frequencies({std::nan("")}, 1, TaskVariant::Symmetric));
  CHECK_THROWS(kosc::scale_frequencies({}, 0, TaskVariant::Symmetric));
}

TEST_CASE("osc_sample waveform identities") {
  // pure sine
  CHECK(kosc::osc_sample(0.25, 0.01, -1.0) == doctest::Approx(1.0).epsilon(1e-12));
  // pure square away from edges is exactly +-1
  CHECK(kosc::osc_sample(0.25, 0.01, 0.0) == 1.0);
  CHECK(kosc::osc_sample(0.75, 0.01, 0.0) == -1.0);
  // pure saw at phase 0.5 away from the edge
  CHECK(kosc::osc_sample(0.5, 0.01, 1.0) == 0.0);
}

TEST_CASE("render single sine oscillator") {
  // k=1, omega raw 0 -> pi/2, amplitude 1, shape sine
  std::vector<double> x = {0.0, 1.0, -1.0};
  AudioSignal y = kosc::render(x, 1, TaskVariant::Symmetric, 8);
  std::vector<double> expect = {0, 1, 0, -1, 0, 1, 0, -1};
  for (int i = 0; i < 8; ++i) CHECK(y.samples[i] == doctest::Approx(expect[i]).epsilon(1e-9));
}

TEST_CASE("render zero amplitude gives silence") {
  std::vector<double> x = {0.3, -0.7, /*alpha*/ -1.0, -1.0, /*gamma*/ 0.2, 0.9};
  AudioSignal y = kosc::render(x, 2, TaskVariant::Symmetric, 64);
  for (double v : y.samples) CHECK(v == 0.0);
}

TEST_CASE("render permutation invariance on symmetric task") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    int k = 2 + static_cast<int>(rng.uniform_index(5));
    auto x = kosc::sample_params(k, TaskVariant::Symmetric, hash_seed(100, trial));
    std::vector<int> perm(k);
    for (int i = 0; i < k; ++i) perm[i] = i;
    for (int i = k - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
    AudioSignal a = kosc::render(x, k, TaskVariant::Symmetric, 512);
    AudioSignal b = kosc::render(permute_triples(x, k, perm), k, TaskVariant::Symmetric, 512);
    for (size_t i = 0; i < a.samples.size(); ++i)
      CHECK(std::abs(a.samples[i] - b.samples[i]) <= 1e-9);
  }
}

TEST_CASE("asymmetric task breaks the permutation symmetry") {
  // distinct frequencies; swapping oscillators moves them to other bands
  std::vector<double> x = {-0.5, 0.5, /*alpha*/ 1.0, 1.0, /*gamma*/ -1.0, -1.0};
  std::vector<double> xp = {0.5, -0.5, 1.0, 1.0, -1.0, -1.0};
  AudioSignal a = kosc::render(x, 2, TaskVariant::Asymmetric, 256);
  AudioSignal b = kosc::render(xp, 2, TaskVariant::Asymmetric, 256);
  double diff = 0.0;
  for (size_t i = 0; i < a.samples.size(); ++i)
    diff = std::max(diff, std::abs(a.samples[i] - b.samples[i]));
  CHECK(diff > 1e-3);
}

TEST_CASE("gated task: invariant when open, witness when closed") {
  std::vector<double> base = {-0.5, 0.5, 1.0, 1.0, -1.0, -1.0};
  std::vector<double> swapped = {0.5, -0.5, 1.0, 1.0, -1.0, -1.0};
  for (double c : {+1.0, -1.0}) {
    auto x = base, xp = swapped;
    x.push_back(c);
    xp.push_back(c);
    AudioSignal a = kosc::render(x, 2, TaskVariant::Gated, 256);
    AudioSignal b = kosc::render(xp, 2, TaskVariant::Gated, 256);
    double diff = 0.0;
    for (size_t i = 0; i < a.samples.size(); ++i)
      diff = std::max(diff, std::abs(a.samples[i] - b.samples[i]));
    if (c > 0)
      CHECK(diff <= 1e-9);
    else
      CHECK(diff > 1e-3);
  }
}

TEST_CASE("rendered samples stay finite and bounded") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    int k = 1 + static_cast<int>(rng.uniform_index(8));
    auto x = kosc::sample_params(k, TaskVariant::Symmetric, hash_seed(200, trial));
    AudioSignal y = kosc::render(x, k, TaskVariant::Symmetric, 256);
    for (double v : y.samples) {
      CHECK(std::isfinite(v));
      CHECK(std::abs(v) <= 1.0 + kRenderBoundEps);
    }
  }
}

TEST_CASE("antialiasing beats the naive square against the band-limited oracle") {
  // a frequency that does not land on a DFT bin: dphase = 80.37/2048
  int n = 2048;
  double omega_raw = 4.0 * (80.37 / n) - 1.0;
  std::vector<double> x = {omega_raw, 1.0, 0.0};  // full amplitude, pure square
  AudioSignal anti = kosc::render(x, 1, TaskVariant::Symmetric, n, true);
  AudioSignal naive = kosc::render(x, 1, TaskVariant::Symmetric, n, false);
  double dphase = kosc::scale_frequencies({omega_raw}, 1, TaskVariant::Symmetric)[0] / (2 * kPi);
  AudioSignal oracle;
  oracle.samples = oracles::bandlimited_square(dphase, n);
  CHECK(metrics::lsd(anti, oracle) < metrics::lsd(naive, oracle));
}

TEST_CASE("sample_params layout, determinism, bounds") {
  auto a = kosc::sample_params(4, TaskVariant::Symmetric, 42);
  auto b = kosc::sample_params(4, TaskVariant::Symmetric, 42);
  CHECK(a == b);
  CHECK(a.size() == 12);
  auto g = kosc::sample_params(4, TaskVariant::Gated, 42);
  CHECK(g.size() == 13);
  CHECK((g[12] == 1.0 || g[12] == -1.0));
  for (double v : a) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("sample_params coordinates are centered") {
  // 1e5 draws; mean of a uniform on [-1,1] concentrates well inside 0.02
  int k = 3, n = 100000;
  std::vector<double> sums(3 * k, 0.0);
  for (int j = 0; j < n; ++j) {
    auto x = kosc::sample_params(k, TaskVariant::Symmetric, hash_seed(777, j));
    for (int i = 0; i < 3 * k; ++i) sums[i] += x[i];
  }
  for (double s : sums) CHECK(std::abs(s / n) < 0.02);
}

TEST_CASE("generate_dataset writes deterministic, well-sized files") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "pf_kosc_ds_test";
  fs::remove_all(dir);
  kosc::DatasetConfig cfg;
  cfg.k = 4;
  cfg.count = 100;
  cfg.seed = 9;
  cfg.n_samples = 128;
  kosc::generate_dataset(cfg, (dir / "a").string());
  kosc::generate_dataset(cfg, (dir / "b").string());

  auto file_bytes = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  CHECK(file_bytes(dir / "a" / "params.f32") == file_bytes(dir / "b" / "params.f32"));
  CHECK(file_bytes(dir / "a" / "audio.f32") == file_bytes(dir / "b" / "audio.f32"));
  CHECK(fs::file_size(dir / "a" / "params.f32") == 100 * 12 * 4);
  CHECK(fs::file_size(dir / "a" / "audio.f32") == 100 * 128 * 4);

  kosc::DatasetConfig empty = cfg;
  empty.count = 0;
  kosc::generate_dataset(empty, (dir / "empty").string());
  CHECK(fs::file_size(dir / "empty" / "params.f32") == 0);
  CHECK(fs::exists(dir / "empty" / "meta.json"));
  fs::remove_all(dir);
}

TEST_CASE("render rejects malformed parameter vectors") {
  CHECK_THROWS(kosc::render({0.0, 0.0}, 1, TaskVariant::Symmetric, 16));
  CHECK_THROWS(kosc::render({0.0, 2.0, 0.0}, 1, TaskVariant::Symmetric, 16));
  CHECK_THROWS(kosc::render({0.0, 0.0, 0.0}, 1, TaskVariant::Gated, 16));
}
