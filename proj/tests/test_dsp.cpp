#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>

#include "permflow/dsp.hpp"
#include "permflow/rng.hpp"

using namespace permflow;

namespace {
constexpr double kPi = 3.14159265358979323846;

// Direct O(n^2) transform, independent of the library path.
std::vector<double> naive_dft_mag(const std::vector<double>& y) {
  size_t n = y.size();
  std::vector<double> mags(n);
  for (size_t k = 0; k < n; ++k) {
    double re = 0.0, im = 0.0;
    for (size_t t = 0; t < n; ++t) {
      double ang = -2.0 * kPi * static_cast<double>(k * t) / static_cast<double>(n);
      re += y[t] * std::cos(ang);
      im += y[t] * std::sin(ang);
    }
    mags[k] = std::hypot(re, im);
  }
  return mags;
}
}  // namespace

TEST_CASE("dft_mag of a constant concentrates at DC") {
  AudioSignal y{std::vector<double>(8, 1.0), 16000.0};
  auto s = dsp::dft_mag(y);
  CHECK(s.bins.size() == 5);
  CHECK(s.bins[0] == doctest::Approx(8.0).epsilon(1e-12));
  for (size_t i = 1; i < s.bins.size(); ++i) CHECK(s.bins[i] == doctest::Approx(0.0).scale(1).epsilon(1e-12));
}

TEST_CASE("dft_mag of an exact-bin sine") {
  int n = 64, k0 = 5;
  AudioSignal y;
  y.samples.resize(n);
  for (int t = 0; t < n; ++t) y.samples[t] = std::sin(2.0 * kPi * k0 * t / n);
  auto s = dsp::dft_mag(y);
  CHECK(s.bins[k0] == doctest::Approx(n / 2.0).epsilon(1e-9));
  for (int b = 0; b < n / 2 + 1; ++b)
    if (b != k0) CHECK(std::abs(s.bins[b]) < 1e-9);
}

TEST_CASE("fft matches the direct transform and Parseval holds") {
  Rng rng(3);
  for (int n : {16, 128, 20, 37}) {  // power-of-two and direct paths
    std::vector<double> y(n);
    for (auto& v : y) v = rng.uniform_pm1();
    std::vector<std::complex<double>> buf(y.begin(), y.end());
    dsp::dft(buf);
    auto ref = naive_dft_mag(y);
    double two_sided = 0.0, energy = 0.0;
    for (int i = 0; i < n; ++i) {
      CHECK(std::abs(ref[i] - std::abs(buf[i])) < 1e-8);
      two_sided += std::norm(buf[i]);
      energy += y[i] * y[i];
    }
    CHECK(two_sided == doctest::Approx(n * energy).epsilon(1e-9));
  }
}

TEST_CASE("dft_mag rejects empty input") {
  CHECK_THROWS(dsp::dft_mag(AudioSignal{}));
}

TEST_CASE("stft frame count and zero signal") {
  AudioSignal y{std::vector<double>(2048, 0.0), 16000.0};
  auto fs = dsp::stft_mag(y, 400, 160);
  CHECK(fs.n_frames == 13);  // ceil(2048/160)
  for (double v : fs.values) CHECK(v == 0.0);
}

TEST_CASE("stft peak bin tracks a pure tone") {
  // closed-form check: the Hann mainlobe peaks at the bin nearest the
  // tone frequency (n_fft = next power of two above the window)
  int n = 2048, win = 400, hop = 160, n_fft = 512;
  double sr = 16000.0;
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    double f = 500.0 + 6500.0 * rng.uniform();
    // keep away from half-bin ambiguity
    double bin_f = f / sr * n_fft;
    if (std::abs(bin_f - std::round(bin_f)) > 0.45) continue;
    AudioSignal y;
    y.sample_rate = sr;
    y.samples.resize(n);
    for (int t = 0; t < n; ++t) y.samples[t] = std::sin(2.0 * kPi * f / sr * t);
    auto fs = dsp::stft_mag(y, win, hop);
    CHECK(fs.n_features == n_fft / 2 + 1);
    int expect = static_cast<int>(std::lround(bin_f));
    for (int64_t t = 2; t + 2 < fs.n_frames; ++t) {  // interior frames
      int arg = 0;
      for (int b = 1; b < fs.n_features; ++b)
        if (fs.at(t, b) > fs.at(t, arg)) arg = b;
      CHECK(arg == expect);
    }
  }
}

TEST_CASE("stft rejects windows longer than the padded signal") {
  AudioSignal y{std::vector<double>(8, 1.0), 16000.0};
  CHECK_THROWS(dsp::stft_mag(y, 64, 4));
}

TEST_CASE("mel filterbank coverage") {
  for (auto [n_mels, n_bins] : {std::pair{32, 129}, {64, 257}, {128, 1025}, {40, 257}}) {
    auto fb = dsp::mel_filterbank(n_mels, n_bins, 16000.0);
    // every band collects energy from somewhere
    for (int m = 0; m < n_mels; ++m) {
      double row = 0.0;
      for (int b = 0; b < n_bins; ++b) row += fb[m * n_bins + b];
      CHECK(row > 0.0);
    }
    // every interior bin feeds some band
    for (int b = 1; b + 1 < n_bins; ++b) {
      double col = 0.0;
      for (int m = 0; m < n_mels; ++m) col += fb[m * n_bins + b];
      CHECK(col > 0.0);
    }
    for (double v : fb) CHECK(v >= 0.0);
  }
}

TEST_CASE("mel spectrogram of silence sits at the log floor") {
  AudioSignal y{std::vector<double>(2048, 0.0), 16000.0};
  auto mel = dsp::mel_spectrogram(y, 16000.0, 25.0, 10.0, 64);
  for (double v : mel.values) CHECK(v == doctest::Approx(std::log(1e-8)).epsilon(1e-12));
}

TEST_CASE("doubling amplitude shifts high-energy log-mel bands by log 4") {
  Rng rng(8);
  AudioSignal y;
  y.sample_rate = 16000.0;
  y.samples.resize(2048);
  for (auto& v : y.samples) v = 0.4 * rng.uniform_pm1();
  AudioSignal y2 = y;
  for (auto& v : y2.samples) v *= 2.0;
  auto a = dsp::mel_spectrogram(y, 16000.0, 25.0, 10.0, 64);
  auto b = dsp::mel_spectrogram(y2, 16000.0, 25.0, 10.0, 64);
  int checked = 0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    if (a.values[i] > -6.0) {  // well above the floor
      CHECK(b.values[i] - a.values[i] == doctest::Approx(std::log(4.0)).epsilon(1e-3));
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("mfcc of a constant log-mel frame loads only coefficient 0") {
  // DC signal -> flat-ish mel? use silence: all bands equal log floor
  AudioSignal y{std::vector<double>(1024, 0.0), 16000.0};
  auto c = dsp::mfcc(y, 16000.0, 20);
  CHECK(c.n_features == 20);
  for (int64_t t = 0; t < c.n_frames; ++t) {
    CHECK(std::abs(c.at(t, 0)) > 1.0);  // sqrt(40)*log(1e-8)
    for (int j = 1; j < 20; ++j) CHECK(std::abs(c.at(t, j)) < 1e-9);
  }
}

TEST_CASE("orthonormal DCT-II round trip") {
  int n = 40;
  Rng rng(13);
  std::vector<double> x(n);
  for (auto& v : x) v = rng.uniform_pm1();
  // forward
  std::vector<double> c(n, 0.0);
  for (int k = 0; k < n; ++k) {
    double s = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int t = 0; t < n; ++t) c[k] += s * x[t] * std::cos(kPi * (2 * t + 1) * k / (2.0 * n));
  }
  // inverse (transpose of the orthonormal matrix)
  for (int t = 0; t < n; ++t) {
    double acc = 0.0;
    for (int k = 0; k < n; ++k) {
      double s = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
      acc += s * c[k] * std::cos(kPi * (2 * t + 1) * k / (2.0 * n));
    }
    CHECK(acc == doctest::Approx(x[t]).epsilon(1e-9));
  }
}

TEST_CASE("rms envelope of constants, zeros and squares") {
  AudioSignal half{std::vector<double>(2048, 0.5), 16000.0};
  auto e = dsp::rms_envelope(half, 400, 160);
  for (int64_t t = 0; t < e.n_frames; ++t) CHECK(e.at(t, 0) == doctest::Approx(0.5).epsilon(1e-12));

  AudioSignal zero{std::vector<double>(2048, 0.0), 16000.0};
  auto z = dsp::rms_envelope(zero, 400, 160);
  for (int64_t t = 0; t < z.n_frames; ++t) CHECK(z.at(t, 0) == 0.0);

  AudioSignal sq;
  sq.sample_rate = 16000.0;
  sq.samples.resize(2048);
  for (size_t i = 0; i < sq.samples.size(); ++i) sq.samples[i] = (i / 16) % 2 ? 1.0 : -1.0;
  auto s = dsp::rms_envelope(sq, 400, 160);
  for (int64_t t = 0; t < s.n_frames; ++t) CHECK(s.at(t, 0) == doctest::Approx(1.0).epsilon(1e-12));
}
