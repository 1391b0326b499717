#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "permflow/types.hpp"

namespace permflow::dsp {

// Floor added under every log in spectral features.
inline constexpr double kLogFloor = 1e-8;

struct MagnitudeSpectrum {
  std::vector<double> bins;  // one-sided, length n/2 + 1
  double bin_hz = 0.0;
};

enum class FeatureKind { Magnitude, MelLog, Mfcc, Rms };

// Rectangular frame series, row per frame.
struct FrameSeries {
  int64_t n_frames = 0;
  int64_t n_features = 0;
  int hop = 0;
  FeatureKind kind = FeatureKind::Magnitude;
  std::vector<double> values;  // n_frames * n_features, row-major

  double& at(int64_t frame, int64_t feat) { return values[static_cast<size_t>(frame * n_features + feat)]; }
  double at(int64_t frame, int64_t feat) const { return values[static_cast<size_t>(frame * n_features + feat)]; }
};

// In-place complex DFT; radix-2 when the length is a power of two,
// otherwise a direct O(n^2) transform (only small sizes take that path).
void dft(std::vector<std::complex<double>>& a, bool inverse = false);

// One-sided magnitude of the full-buffer DFT.
MagnitudeSpectrum dft_mag(const AudioSignal& y);

// Hann-windowed centered STFT magnitude. Frames are centered on
// t * hop with reflect padding; the window is zero-padded to the next
// power of two. n_frames = ceil(N / hop).
FrameSeries stft_mag(const AudioSignal& y, int win_samples, int hop_samples);

// Triangular HTK-mel filterbank, row-major n_mels x n_bins.
std::vector<double> mel_filterbank(int n_mels, int n_bins, double sr);

// log(mel power spectrogram + kLogFloor).
FrameSeries mel_spectrogram(const AudioSignal& y, double sr, double win_ms, double hop_ms,
                            int n_mels);

inline constexpr int kMfccMelBands = 40;

// First n_coeffs orthonormal DCT-II coefficients of the log-mel frames.
FrameSeries mfcc(const AudioSignal& y, double sr, int n_coeffs, double win_ms = 25.0,
                 double hop_ms = 10.0);

// Per-frame sqrt(mean(y^2)), same centered framing as the STFT.
FrameSeries rms_envelope(const AudioSignal& y, int frame_samples, int hop_samples);

}  // namespace permflow::dsp
