#include "permflow/dsp.hpp"

#include <cmath>
#include <stdexcept>

namespace permflow::dsp {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
  size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

void dft_direct(std::vector<std::complex<double>>& a, bool inverse) {
  size_t n = a.size();
  std::vector<std::complex<double>> out(n);
  double sign = inverse ? 1.0 : -1.0;
  for (size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (size_t t = 0; t < n; ++t) {
      double ang = sign * 2.0 * kPi * static_cast<double>(k * t) / static_cast<double>(n);
      acc += a[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = inverse ? acc / static_cast<double>(n) : acc;
  }
  a = std::move(out);
}

// Reflect index into [0, n): ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  int64_t period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

struct Framing {
  int64_t n_frames;
  int win;
  int hop;
};

Framing make_framing(int64_t n, int win, int hop) {
  if (hop < 1 || win < hop) throw std::invalid_argument("framing: need win >= hop >= 1");
  if (win / 2 > n - 1) throw std::invalid_argument("framing: window longer than padded signal");
  return Framing{(n + hop - 1) / hop, win, hop};
}

// Extract the centered, reflect-padded frame starting at t*hop - win/2.
void extract_frame(const std::vector<double>& y, int64_t frame, const Framing& fr,
                   double* out) {
  int64_t n = static_cast<int64_t>(y.size());
  int64_t start = frame * fr.hop - fr.win / 2;
  for (int i = 0; i < fr.win; ++i)
    out[i] = y[static_cast<size_t>(reflect_index(start + i, n))];
}

std::vector<double> hann_window(int win) {
  std::vector<double> w(static_cast<size_t>(win));
  for (int i = 0; i < win; ++i)
    w[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / static_cast<double>(win));
  return w;
}

int win_from_ms(double sr, double ms) {
  int w = static_cast<int>(std::lround(sr * ms / 1000.0));
  return w < 1 ? 1 : w;
}

}  // namespace

void dft(std::vector<std::complex<double>>& a, bool inverse) {
  if (a.empty()) return;
  if (is_pow2(a.size()))
    fft_radix2(a, inverse);
  else
    dft_direct(a, inverse);
}

MagnitudeSpectrum dft_mag(const AudioSignal& y) {
  if (y.samples.empty()) throw std::invalid_argument("dft_mag: empty signal");
  size_t n = y.samples.size();
  std::vector<std::complex<double>> a(n);
  for (size_t i = 0; i < n; ++i) a[i] = y.samples[i];
  dft(a);
  MagnitudeSpectrum s;
  s.bins.resize(n / 2 + 1);
  for (size_t i = 0; i < s.bins.size(); ++i) s.bins[i] = std::abs(a[i]);
  s.bin_hz = y.sample_rate / static_cast<double>(n);
  return s;
}

FrameSeries stft_mag(const AudioSignal& y, int win_samples, int hop_samples) {
  Framing fr = make_framing(static_cast<int64_t>(y.samples.size()), win_samples, hop_samples);
  size_t n_fft = next_pow2(static_cast<size_t>(win_samples));
  std::vector<double> window = hann_window(win_samples);

  FrameSeries out;
  out.n_frames = fr.n_frames;
  out.n_features = static_cast<int64_t>(n_fft / 2 + 1);
  out.hop = hop_samples;
  out.kind = FeatureKind::Magnitude;
  out.values.assign(static_cast<size_t>(out.n_frames * out.n_features), 0.0);

  std::vector<double> frame(static_cast<size_t>(win_samples));
  std::vector<std::complex<double>> buf(n_fft);
  for (int64_t t = 0; t < fr.n_frames; ++t) {
    extract_frame(y.samples, t, fr, frame.data());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = 0.0;
    for (int i = 0; i < win_samples; ++i)
      buf[static_cast<size_t>(i)] = frame[static_cast<size_t>(i)] * window[static_cast<size_t>(i)];
    dft(buf);
    for (int64_t b = 0; b < out.n_features; ++b)
      out.at(t, b) = std::abs(buf[static_cast<size_t>(b)]);
  }
  return out;
}

namespace {
double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }
}  // namespace

std::vector<double> mel_filterbank(int n_mels, int n_bins, double sr) {
  if (n_mels < 1 || n_bins < 2) throw std::invalid_argument("mel_filterbank: bad sizes");
  if (n_mels > n_bins) throw std::invalid_argument("mel_filterbank: more bands than bins");
  double mel_max = hz_to_mel(sr / 2.0);
  std::vector<double> edges(static_cast<size_t>(n_mels + 2));
  for (int i = 0; i < n_mels + 2; ++i)
    edges[static_cast<size_t>(i)] = mel_to_hz(mel_max * i / static_cast<double>(n_mels + 1));

  std::vector<double> fb(static_cast<size_t>(n_mels) * static_cast<size_t>(n_bins), 0.0);
  double bin_hz = (sr / 2.0) / static_cast<double>(n_bins - 1);
  for (int m = 0; m < n_mels; ++m) {
    double lo = edges[static_cast<size_t>(m)];
    double c = edges[static_cast<size_t>(m + 1)];
    double hi = edges[static_cast<size_t>(m + 2)];
    for (int b = 0; b < n_bins; ++b) {
      double f = b * bin_hz;
      double w = 0.0;
      if (f > lo && f < c)
        w = (f - lo) / (c - lo);
      else if (f == c)
        w = 1.0;
      else if (f > c && f < hi)
        w = (hi - f) / (hi - c);
      if (w > 0.0) fb[static_cast<size_t>(m) * static_cast<size_t>(n_bins) + static_cast<size_t>(b)] = w;
    }
  }
  return fb;
}

FrameSeries mel_spectrogram(const AudioSignal& y, double sr, double win_ms, double hop_ms,
                            int n_mels) {
  if (sr <= 0.0) throw std::invalid_argument("mel_spectrogram: sr must be positive");
  int win = win_from_ms(sr, win_ms);
  int hop = win_from_ms(sr, hop_ms);
  FrameSeries mag = stft_mag(y, win, hop);
  int n_bins = static_cast<int>(mag.n_features);
  std::vector<double> fb = mel_filterbank(n_mels, n_bins, sr);

  FrameSeries out;
  out.n_frames = mag.n_frames;
  out.n_features = n_mels;
  out.hop = hop;
  out.kind = FeatureKind::MelLog;
  out.values.assign(static_cast<size_t>(out.n_frames * out.n_features), 0.0);
  for (int64_t t = 0; t < mag.n_frames; ++t) {
    for (int m = 0; m < n_mels; ++m) {
      double acc = 0.0;
      const double* row = fb.data() + static_cast<size_t>(m) * static_cast<size_t>(n_bins);
      for (int b = 0; b < n_bins; ++b) {
        double v = mag.at(t, b);
        acc += row[b] * v * v;
      }
      out.at(t, m) = std::log(acc + kLogFloor);
    }
  }
  return out;
}

FrameSeries mfcc(const AudioSignal& y, double sr, int n_coeffs, double win_ms, double hop_ms) {
  if (n_coeffs < 1 || n_coeffs > kMfccMelBands)
    throw std::invalid_argument("mfcc: n_coeffs must be in [1, 40]");
  FrameSeries mel = mel_spectrogram(y, sr, win_ms, hop_ms, kMfccMelBands);

  FrameSeries out;
  out.n_frames = mel.n_frames;
  out.n_features = n_coeffs;
  out.hop = mel.hop;
  out.kind = FeatureKind::Mfcc;
  out.values.assign(static_cast<size_t>(out.n_frames * out.n_features), 0.0);
  int nm = kMfccMelBands;
  double s0 = std::sqrt(1.0 / nm);
  double sk = std::sqrt(2.0 / nm);
  for (int64_t t = 0; t < mel.n_frames; ++t) {
    for (int c = 0; c < n_coeffs; ++c) {
      double acc = 0.0;
      for (int m = 0; m < nm; ++m)
        acc += mel.at(t, m) * std::cos(kPi * (2.0 * m + 1.0) * c / (2.0 * nm));
      out.at(t, c) = (c == 0 ? s0 : sk) * acc;
    }
  }
  return out;
}

FrameSeries rms_envelope(const AudioSignal& y, int frame_samples, int hop_samples) {
  if (frame_samples < 1) throw std::invalid_argument("rms_envelope: frame must be >= 1");
  Framing fr = make_framing(static_cast<int64_t>(y.samples.size()), frame_samples,
                            hop_samples < 1 ? 1 : hop_samples);
  FrameSeries out;
  out.n_frames = fr.n_frames;
  out.n_features = 1;
  out.hop = fr.hop;
  out.kind = FeatureKind::Rms;
  out.values.assign(static_cast<size_t>(out.n_frames), 0.0);
  std::vector<double> frame(static_cast<size_t>(frame_samples));
  for (int64_t t = 0; t < fr.n_frames; ++t) {
    extract_frame(y.samples, t, fr, frame.data());
    double acc = 0.0;
    for (double v : frame) acc += v * v;
    out.at(t, 0) = std::sqrt(acc / frame_samples);
  }
  return out;
}

}  // namespace permflow::dsp
