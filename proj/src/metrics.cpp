#include "permflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "permflow/assign.hpp"

namespace permflow::metrics {

namespace {
constexpr double kMagFloor = 1e-8;
}

double mse(const std::vector<double>& x, const std::vector<double>& x_hat) {
  if (x.size() != x_hat.size() || x.empty())
    throw std::invalid_argument("mse: length mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    double d = x[i] - x_hat[i];
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

double lac(const std::vector<double>& x, const std::vector<double>& x_hat, int k) {
  if (k <= 0) throw std::invalid_argument("lac: k must be positive");
  size_t n = static_cast<size_t>(3 * k);
  if (x.size() != n || x_hat.size() != n)
    throw std::invalid_argument("lac: both vectors must have length 3k");
  std::vector<double> cost(static_cast<size_t>(k) * static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      double acc = 0.0;
      for (int f = 0; f < 3; ++f) {
        double d = x[static_cast<size_t>(f * k + i)] - x_hat[static_cast<size_t>(f * k + j)];
        acc += d * d;
      }
      cost[static_cast<size_t>(i) * k + j] = acc;
    }
  }
  return assign::hungarian(cost, k).cost / static_cast<double>(3 * k);
}

double lsd(const AudioSignal& y, const AudioSignal& y_hat) {
  if (y.samples.size() != y_hat.samples.size())
    throw std::invalid_argument("lsd: signal length mismatch");
  dsp::MagnitudeSpectrum a = dsp::dft_mag(y);
  dsp::MagnitudeSpectrum b = dsp::dft_mag(y_hat);
  double acc = 0.0;
  for (size_t i = 0; i < a.bins.size(); ++i) {
    double d = std::log(std::max(a.bins[i], kMagFloor)) - std::log(std::max(b.bins[i], kMagFloor));
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.bins.size()));
}

double chamfer(const std::vector<double>& x_triples, const std::vector<double>& x_hat_triples) {
  if (x_triples.size() % 3 != 0 || x_hat_triples.size() % 3 != 0 || x_triples.empty() ||
      x_hat_triples.empty())
    throw std::invalid_argument("chamfer: inputs must be non-empty triple sets");
  size_t ka = x_triples.size() / 3;
  size_t kb = x_hat_triples.size() / 3;
  auto triple_d = [&](const std::vector<double>& u, size_t i, const std::vector<double>& v,
                      size_t j) {
    double acc = 0.0;
    for (size_t f = 0; f < 3; ++f) {
      double d = u[i * 3 + f] - v[j * 3 + f];
      acc += d * d;
    }
    return acc / 3.0;
  };
  // The directional sums are accumulated separately so that swapping
  // the arguments returns the bit-identical value.
  double to_b = 0.0;
  for (size_t j = 0; j < kb; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < ka; ++i) best = std::min(best, triple_d(x_triples, i, x_hat_triples, j));
    to_b += best;
  }
  double to_a = 0.0;
  for (size_t i = 0; i < ka; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < kb; ++j) best = std::min(best, triple_d(x_triples, i, x_hat_triples, j));
    to_a += best;
  }
  return to_b + to_a;
}

double dtw_l1(const dsp::FrameSeries& a, const dsp::FrameSeries& b) {
  if (a.n_features != b.n_features)
    throw std::invalid_argument("dtw_l1: feature widths differ");
  if (a.n_frames == 0 || b.n_frames == 0) throw std::invalid_argument("dtw_l1: empty series");
  int64_t n = a.n_frames, m = b.n_frames, f = a.n_features;
  auto frame_cost = [&](int64_t i, int64_t j) {
    double acc = 0.0;
    for (int64_t e = 0; e < f; ++e) acc += std::abs(a.at(i, e) - b.at(j, e));
    return acc;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(static_cast<size_t>(m), inf), cur(static_cast<size_t>(m), inf);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < m; ++j) {
      double c = frame_cost(i, j);
      double best;
      if (i == 0 && j == 0)
        best = 0.0;
      else if (i == 0)
        best = cur[static_cast<size_t>(j - 1)];
      else if (j == 0)
        best = prev[static_cast<size_t>(j)];
      else
        best = std::min({prev[static_cast<size_t>(j)], cur[static_cast<size_t>(j - 1)],
                         prev[static_cast<size_t>(j - 1)]});
      cur[static_cast<size_t>(j)] = c + best;
    }
    std::swap(prev, cur);
  }
  return prev[static_cast<size_t>(m - 1)];
}

double wmfcc(const AudioSignal& y, const AudioSignal& y_hat, double sr) {
  dsp::FrameSeries a = dsp::mfcc(y, sr, 20);
  dsp::FrameSeries b = dsp::mfcc(y_hat, sr, 20);
  return dtw_l1(a, b);
}

double w1_spectrum(const std::vector<double>& mag_a, const std::vector<double>& mag_b) {
  if (mag_a.size() != mag_b.size() || mag_a.size() < 2)
    throw std::invalid_argument("w1_spectrum: need equal lengths >= 2");
  size_t n = mag_a.size();
  double sum_a = 0.0, sum_b = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sum_a += mag_a[i] + kMagFloor;
    sum_b += mag_b[i] + kMagFloor;
  }
  double cdf_a = 0.0, cdf_b = 0.0, acc = 0.0;
  double step = 1.0 / static_cast<double>(n - 1);
  for (size_t i = 0; i + 1 < n; ++i) {
    cdf_a += (mag_a[i] + kMagFloor) / sum_a;
    cdf_b += (mag_b[i] + kMagFloor) / sum_b;
    acc += std::abs(cdf_a - cdf_b) * step;
  }
  return acc;
}

double sot(const AudioSignal& y, const AudioSignal& y_hat, double sr, double win_ms,
           double hop_ms) {
  int win = static_cast<int>(std::lround(sr * win_ms / 1000.0));
  int hop = static_cast<int>(std::lround(sr * hop_ms / 1000.0));
  dsp::FrameSeries a = dsp::stft_mag(y, win, hop);
  dsp::FrameSeries b = dsp::stft_mag(y_hat, win, hop);
  if (a.n_frames != b.n_frames)
    throw std::invalid_argument("sot: signals produce different frame counts");
  double acc = 0.0;
  std::vector<double> fa(static_cast<size_t>(a.n_features)), fb(static_cast<size_t>(b.n_features));
  for (int64_t t = 0; t < a.n_frames; ++t) {
    for (int64_t e = 0; e < a.n_features; ++e) {
      fa[static_cast<size_t>(e)] = a.at(t, e);
      fb[static_cast<size_t>(e)] = b.at(t, e);
    }
    acc += w1_spectrum(fa, fb);
  }
  return acc / static_cast<double>(a.n_frames);
}

double mss(const AudioSignal& y, const AudioSignal& y_hat, double sr) {
  const double wins[3] = {10.0, 25.0, 100.0};
  const double hops[3] = {5.0, 10.0, 50.0};
  const int bands[3] = {32, 64, 128};
  double total = 0.0;
  for (int s = 0; s < 3; ++s) {
    dsp::FrameSeries a = dsp::mel_spectrogram(y, sr, wins[s], hops[s], bands[s]);
    dsp::FrameSeries b = dsp::mel_spectrogram(y_hat, sr, wins[s], hops[s], bands[s]);
    if (a.values.size() != b.values.size())
      throw std::invalid_argument("mss: signals produce different spectrogram shapes");
    double acc = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) acc += std::abs(a.values[i] - b.values[i]);
    total += acc / static_cast<double>(a.values.size());
  }
  return total / 3.0;
}

double rms_cosine(const AudioSignal& y, const AudioSignal& y_hat) {
  int frame = static_cast<int>(std::lround(y.sample_rate * 25.0 / 1000.0));
  int hop = static_cast<int>(std::lround(y.sample_rate * 10.0 / 1000.0));
  dsp::FrameSeries a = dsp::rms_envelope(y, frame, hop);
  dsp::FrameSeries b = dsp::rms_envelope(y_hat, frame, hop);
  if (a.n_frames != b.n_frames)
    throw std::invalid_argument("rms_cosine: envelope lengths differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int64_t t = 0; t < a.n_frames; ++t) {
    dot += a.at(t, 0) * b.at(t, 0);
    na += a.at(t, 0) * a.at(t, 0);
    nb += b.at(t, 0) * b.at(t, 0);
  }
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

void MetricReport::finalize() {
  size_t nc = columns.size();
  mean.assign(nc, 0.0);
  ci95.assign(nc, 0.0);
  if (rows.empty()) return;
  double n = static_cast<double>(rows.size());
  for (size_t c = 0; c < nc; ++c) {
    double acc = 0.0;
    for (const auto& r : rows) acc += r[c];
    mean[c] = acc / n;
  }
  if (rows.size() < 2) return;
  for (size_t c = 0; c < nc; ++c) {
    double acc = 0.0;
    for (const auto& r : rows) {
      double d = r[c] - mean[c];
      acc += d * d;
    }
    double sd = std::sqrt(acc / (n - 1.0));
    ci95[c] = 1.96 * sd / std::sqrt(n);
  }
}

void MetricReport::write_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("MetricReport: cannot write " + path);
  f << "example";
  for (const auto& c : columns) f << "," << c;
  for (const auto& c : columns) f << "," << c << "_ci95";
  f << "\n";
  f.precision(12);
  for (size_t i = 0; i < rows.size(); ++i) {
    f << i;
    for (double v : rows[i]) f << "," << v;
    for (size_t c = 0; c < columns.size(); ++c) f << ",";
    f << "\n";
  }
  f << "aggregate";
  for (double v : mean) f << "," << v;
  for (double v : ci95) f << "," << v;
  f << "\n";
}

int MetricReport::column_index(const std::string& name) const {
  for (size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return static_cast<int>(i);
  throw std::invalid_argument("MetricReport: no column " + name);
}

std::vector<double> MetricReport::column(const std::string& name) const {
  int c = column_index(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[static_cast<size_t>(c)]);
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty");
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double wilcoxon_signed_rank_less(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("wilcoxon: length mismatch");
  struct Item {
    double absd;
    int sign;
  };
  std::vector<Item> items;
  items.reserve(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    if (d != 0.0) items.push_back({std::abs(d), d > 0 ? 1 : -1});
  }
  size_t n = items.size();
  if (n == 0) return 1.0;
  std::sort(items.begin(), items.end(), [](const Item& x, const Item& y) { return x.absd < y.absd; });

  double w_plus = 0.0;
  double tie_correction = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && items[j].absd == items[i].absd) ++j;
    double rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));  // average rank
    double t = static_cast<double>(j - i);
    tie_correction += t * t * t - t;
    for (size_t r = i; r < j; ++r)
      if (items[r].sign > 0) w_plus += rank;
    i = j;
  }
  double nn = static_cast<double>(n);
  double mean_w = nn * (nn + 1.0) / 4.0;
  double var_w = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_correction / 48.0;
  if (var_w <= 0.0) return w_plus < mean_w ? 0.0 : 1.0;
  // H1: a < b means negative differences dominate, so W+ is small.
  double z = (w_plus - mean_w + 0.5) / std::sqrt(var_w);
  return 0.5 * std::erfc(-z / std::sqrt(2.0));  // P(Z <= z)
}

}  // namespace permflow::metrics
