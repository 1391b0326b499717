#pragma once

#include <string>
#include <vector>

#include "permflow/dsp.hpp"
#include "permflow/types.hpp"

namespace permflow::metrics {

// Mean squared error between equal-length vectors.
double mse(const std::vector<double>& x, const std::vector<double>& x_hat);

// Linear assignment cost: minimum over oscillator permutations of the
// squared distance between parameter vectors, divided by 3k. Zero for
// any permutation of identical oscillator triples.
double lac(const std::vector<double>& x, const std::vector<double>& x_hat, int k);

// Log-spectral distance over one-sided DFT bins with a 1e-8 magnitude
// floor inside the log.
double lsd(const AudioSignal& y, const AudioSignal& y_hat);

// Bidirectional Chamfer distance between two sets of oscillator
// triples (k x 3 each); elementwise distance is the per-triple MSE.
double chamfer(const std::vector<double>& x_triples, const std::vector<double>& x_hat_triples);

// Unnormalized DTW cost with steps {(1,0),(0,1),(1,1)}, L1 frame
// distance, boundary to boundary.
double dtw_l1(const dsp::FrameSeries& a, const dsp::FrameSeries& b);

// DTW-aligned L1 distance between 20-coefficient MFCC series (25 ms
// window, 10 ms hop).
double wmfcc(const AudioSignal& y, const AudioSignal& y_hat, double sr);

// Wasserstein-1 distance between two normalized magnitude spectra whose
// bins sit on a uniform grid over [0, 1].
double w1_spectrum(const std::vector<double>& mag_a, const std::vector<double>& mag_b);

// Spectral optimal transport: W1 between per-frame normalized magnitude
// spectra (frequency axis normalized by Nyquist), averaged over frames.
double sot(const AudioSignal& y, const AudioSignal& y_hat, double sr, double win_ms = 25.0,
           double hop_ms = 10.0);

// Multi-scale log-mel distance: mean absolute error at window lengths
// 10/25/100 ms, hops 5/10/50 ms, 32/64/128 mel bands, averaged.
double mss(const AudioSignal& y, const AudioSignal& y_hat, double sr);

// Cosine similarity of RMS envelopes (25 ms frames, 10 ms hop). Two
// silent signals compare as 1.
double rms_cosine(const AudioSignal& y, const AudioSignal& y_hat);

// Per-example metric table with mean and 95% CI (1.96 * stderr).
struct MetricReport {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;  // rows[i] has one value per column
  std::vector<double> mean;
  std::vector<double> ci95;

  void finalize();  // fills mean/ci95 from rows
  void write_csv(const std::string& path) const;
  int column_index(const std::string& name) const;
  std::vector<double> column(const std::string& name) const;
};

// -- small statistics helpers used by property tests and the harness --

double median(std::vector<double> v);

// One-sided Wilcoxon signed-rank test of H1: median(a - b) < 0.
// Normal approximation with tie correction; returns the p-value.
double wilcoxon_signed_rank_less(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace permflow::metrics
