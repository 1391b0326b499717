#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
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
std::vector<double> permute_triples(const std::vector<double>& x, int k,
                                    const std::vector<int>& perm) {
  std::vector<double> out = x;
  for (int f = 0; f < 3; ++f)
    for (int i = 0; i < k; ++i) out[f * k + i] = x[f * k + perm[i]];
  return out;
}
}  // namespace

TEST_CASE("mse basics") {
  CHECK(metrics::mse({1, -1}, {1, -1}) == 0.0);
  CHECK(metrics::mse({1, -1}, {-1, 1}) == 4.0);
  CHECK_THROWS(metrics::mse({1}, {1, 2}));
}

TEST_CASE("mse dominates lac on the symmetric layout") {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    int k = 1 + static_cast<int>(rng.uniform_index(6));
    std::vector<double> x(3 * k), xh(3 * k);
    for (auto& v : x) v = rng.uniform_pm1();
    for (auto& v : xh) v = rng.uniform_pm1();
    CHECK(metrics::lac(x, xh, k) <= metrics::mse(x, xh) + 1e-15);
  }
}

TEST_CASE("lac vanishes on permuted copies and equals the explicit minimum") {
  Rng rng(43);
  for (int trial = 0; trial < 500; ++trial) {
    int k = 1 + static_cast<int>(rng.uniform_index(6));
    std::vector<double> x(3 * k), xh(3 * k);
    for (auto& v : x) v = rng.uniform_pm1();
    for (auto& v : xh) v = rng.uniform_pm1();

    // explicit minimum over all k! permutations
    std::vector<int> perm(k);
    for (int i = 0; i < k; ++i) perm[i] = i;
    double best = std::numeric_limits<double>::infinity();
    do {
      double acc = 0.0;
      for (int f = 0; f < 3; ++f)
        for (int i = 0; i < k; ++i) {
          double d = x[f * k + i] - xh[f * k + perm[i]];
          acc += d * d;
        }
      best = std::min(best, acc / (3.0 * k));
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(metrics::lac(x, xh, k) == doctest::Approx(best).epsilon(1e-12));
  }

  std::vector<double> x = {0.1, 0.9, -0.3, 0.5, 0.7, -0.7};
  CHECK(metrics::lac(x, permute_triples(x, 2, {1, 0}), 2) == 0.0);
  CHECK(metrics::lac({0.1, 0.2, 0.3}, {0.4, 0.2, 0.0}, 1) ==
        metrics::mse({0.1, 0.2, 0.3}, {0.4, 0.2, 0.0}));
}

TEST_CASE("lsd identities") {
  Rng rng(47);
  AudioSignal a, b;
  a.samples.resize(256);
  for (auto& v : a.samples) v = rng.uniform_pm1();
  b = a;
  CHECK(metrics::lsd(a, b) == 0.0);
  for (auto& v : b.samples) v *= 2.0;
  CHECK(metrics::lsd(a, b) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  b.samples[0] += 0.3;
  CHECK(metrics::lsd(a, b) == metrics::lsd(b, a));
}

TEST_CASE("chamfer identities") {
  std::vector<double> a = {0.1, 0.2, 0.3, -0.5, 0.5, 0.0};  // two triples (row-major)
  CHECK(metrics::chamfer(a, a) == 0.0);
  std::vector<double> b = {0.0, 0.0, 0.0, 1.0, 1.0, 1.0};
  CHECK(metrics::chamfer(a, b) == metrics::chamfer(b, a));
  // multiset equality with distinct elements is exactly the zero set
  std::vector<double> a_swapped = {-0.5, 0.5, 0.0, 0.1, 0.2, 0.3};
  CHECK(metrics::chamfer(a, a_swapped) == 0.0);
  CHECK(metrics::chamfer(a, b) > 0.0);
}

TEST_CASE("dtw base cases") {
  dsp::FrameSeries a, b;
  a.n_frames = b.n_frames = 1;
  a.n_features = b.n_features = 3;
  a.values = {1.0, -2.0, 0.5};
  b.values = {0.0, 1.0, 0.5};
  CHECK(metrics::dtw_l1(a, b) == doctest::Approx(4.0));
  CHECK(metrics::dtw_l1(a, a) == 0.0);
}

TEST_CASE("dtw equals exhaustive enumeration on short series") {
  Rng rng(53);
  for (int trial = 0; trial < 200; ++trial) {
    dsp::FrameSeries a, b;
    a.n_frames = 1 + static_cast<int>(rng.uniform_index(6));
    b.n_frames = 1 + static_cast<int>(rng.uniform_index(6));
    a.n_features = b.n_features = 1 + static_cast<int>(rng.uniform_index(3));
    a.values.resize(a.n_frames * a.n_features);
    b.values.resize(b.n_frames * b.n_features);
    for (auto& v : a.values) v = rng.uniform_pm1();
    for (auto& v : b.values) v = rng.uniform_pm1();
    CHECK(metrics::dtw_l1(a, b) == oracles::dtw_enumerate(a, b));
  }
}

TEST_CASE("dtw never exceeds the unwarped framewise cost") {
  Rng rng(59);
  for (int trial = 0; trial < 50; ++trial) {
    dsp::FrameSeries a, b;
    a.n_frames = b.n_frames = 5 + static_cast<int>(rng.uniform_index(10));
    a.n_features = b.n_features = 4;
    a.values.resize(a.n_frames * a.n_features);
    b.values.resize(b.n_frames * b.n_features);
    for (auto& v : a.values) v = rng.uniform_pm1();
    for (auto& v : b.values) v = rng.uniform_pm1();
    double unwarped = 0.0;
    for (int64_t t = 0; t < a.n_frames; ++t)
      for (int64_t f = 0; f < a.n_features; ++f) unwarped += std::abs(a.at(t, f) - b.at(t, f));
    CHECK(metrics::dtw_l1(a, b) <= unwarped + 1e-12);
  }
}

TEST_CASE("wmfcc identities and warping bound") {
  auto x = kosc::sample_params(3, TaskVariant::Symmetric, 5);
  AudioSignal y = kosc::render(x, 3, TaskVariant::Symmetric, 2048);
  CHECK(metrics::wmfcc(y, y, y.sample_rate) == 0.0);

  // a one-hop delay can always be absorbed by warping
  AudioSignal delayed = y;
  int hop = 160;
  for (int i = static_cast<int>(delayed.samples.size()) - 1; i >= hop; --i)
    delayed.samples[i] = delayed.samples[i - hop];
  for (int i = 0; i < hop; ++i) delayed.samples[i] = 0.0;
  double warped = metrics::wmfcc(y, delayed, y.sample_rate);
  auto ma = dsp::mfcc(y, y.sample_rate, 20);
  auto mb = dsp::mfcc(delayed, y.sample_rate, 20);
  double unwarped = 0.0;
  for (int64_t t = 0; t < ma.n_frames; ++t)
    for (int64_t f = 0; f < 20; ++f) unwarped += std::abs(ma.at(t, f) - mb.at(t, f));
  CHECK(warped <= unwarped + 1e-12);
  CHECK(metrics::wmfcc(y, delayed, y.sample_rate) == metrics::wmfcc(delayed, y, y.sample_rate));
}

TEST_CASE("spectral W1 closed form equals the LP oracle") {
  Rng rng(61);
  for (int trial = 0; trial < 200; ++trial) {
    int nb = 2 + static_cast<int>(rng.uniform_index(15));
    std::vector<double> a(nb), b(nb), pos(nb);
    for (auto& v : a) v = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
    for (auto& v : b) v = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
    for (int i = 0; i < nb; ++i) pos[i] = static_cast<double>(i) / (nb - 1);
    std::vector<double> ma = a, mb = b;
    for (auto& v : ma) v += 1e-8;
    for (auto& v : mb) v += 1e-8;
    CHECK(std::abs(metrics::w1_spectrum(a, b) - oracles::lp_transport_w1(ma, pos, mb, pos)) <=
          1e-9);
  }
}

TEST_CASE("sot separates tones by distance along the frequency axis") {
  // two Dirac-like tones at exact STFT bins; W1 is their normalized gap
  double sr = 16000.0;
  int win = 400, n_fft = 512, n = 2048;
  int b1 = 40, b2 = 120;
  auto tone = [&](int bin) {
    AudioSignal y;
    y.sample_rate = sr;
    y.samples.resize(n);
    for (int t = 0; t < n; ++t)
      y.samples[t] = std::sin(2.0 * 3.14159265358979323846 * bin * sr / n_fft / sr * t);
    return y;
  };
  AudioSignal ya = tone(b1), yb = tone(b2);
  double got = metrics::sot(ya, yb, sr);
  double expect = static_cast<double>(b2 - b1) / (n_fft / 2);  // bins normalized by Nyquist index
  CHECK(got == doctest::Approx(expect).epsilon(0.02));

  CHECK(metrics::sot(ya, ya, sr) == 0.0);
  CHECK(metrics::sot(ya, yb, sr) == metrics::sot(yb, ya, sr));
}

TEST_CASE("mss identities") {
  auto x = kosc::sample_params(4, TaskVariant::Symmetric, 15);
  AudioSignal y = kosc::render(x, 4, TaskVariant::Symmetric, 2048);
  AudioSignal silence{std::vector<double>(2048, 0.0), 16000.0};
  CHECK(metrics::mss(y, y, y.sample_rate) == 0.0);
  CHECK(metrics::mss(y, silence, y.sample_rate) > 0.0);
  CHECK(metrics::mss(y, silence, y.sample_rate) == metrics::mss(silence, y, y.sample_rate));
}

TEST_CASE("rms cosine identities") {
  auto x = kosc::sample_params(4, TaskVariant::Symmetric, 25);
  AudioSignal y = kosc::render(x, 4, TaskVariant::Symmetric, 2048);
  CHECK(metrics::rms_cosine(y, y) == doctest::Approx(1.0).epsilon(1e-12));
  AudioSignal scaled = y;
  for (auto& v : scaled.samples) v *= 3.0;
  CHECK(metrics::rms_cosine(y, scaled) == doctest::Approx(1.0).epsilon(1e-12));

  // disjoint bursts -> orthogonal envelopes
  AudioSignal early{std::vector<double>(2048, 0.0), 16000.0};
  AudioSignal late = early;
  for (int i = 0; i < 200; ++i) early.samples[i] = 0.9;
  for (int i = 1800; i < 2000; ++i) late.samples[i] = 0.9;
  CHECK(metrics::rms_cosine(early, late) == doctest::Approx(0.0).scale(1).epsilon(1e-12));

  AudioSignal z1{std::vector<double>(2048, 0.0), 16000.0};
  CHECK(metrics::rms_cosine(z1, z1) == 1.0);
}

TEST_CASE("metric report aggregates and round-trips through CSV") {
  metrics::MetricReport rep;
  rep.columns = {"a", "b"};
  Rng rng(67);
  for (int i = 0; i < 40; ++i) rep.rows.push_back({rng.uniform(), rng.uniform_pm1()});
  rep.finalize();

  // CI must be 1.96 * sd / sqrt(n)
  for (size_t c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (auto& r : rep.rows) mean += r[c];
    mean /= rep.rows.size();
    double var = 0.0;
    for (auto& r : rep.rows) var += (r[c] - mean) * (r[c] - mean);
    var /= (rep.rows.size() - 1.0);
    double ci = 1.96 * std::sqrt(var / rep.rows.size());
    CHECK(std::abs(rep.ci95[c] - ci) < 1e-9);
    CHECK(std::abs(rep.mean[c] - mean) < 1e-12);
  }

  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() / "pf_report_test.csv";
  rep.write_csv(p.string());
  std::ifstream f(p);
  std::string header;
  std::getline(f, header);
  CHECK(header == "example,a,b,a_ci95,b_ci95");
  int lines = 0;
  std::string line, last;
  while (std::getline(f, line))
    if (!line.empty()) {
      ++lines;
      last = line;
    }
  CHECK(lines == 41);  // 40 examples + aggregate
  CHECK(last.substr(0, 9) == "aggregate");
  fs::remove(p);
}

TEST_CASE("median and wilcoxon behave sensibly") {
  CHECK(metrics::median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(metrics::median({4.0, 1.0, 2.0, 3.0}) == 2.5);

  Rng rng(71);
  std::vector<double> worse(500), better(500);
  for (int i = 0; i < 500; ++i) {
    double base = rng.uniform();
    better[i] = base;
    worse[i] = base + 0.05 + 0.02 * rng.uniform_pm1();
  }
  CHECK(metrics::wilcoxon_signed_rank_less(better, worse) < 1e-6);
  CHECK(metrics::wilcoxon_signed_rank_less(worse, better) > 0.5);
}
