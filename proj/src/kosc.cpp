#include "permflow/kosc.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "permflow/rng.hpp"

namespace permflow::kosc {

namespace {

constexpr double kPi = 3.14159265358979323846;

double frac(double x) { return x - std::floor(x); }

// 2-sample polynomial edge residual. `t` is fractional phase, `dt` the
// per-sample phase increment.
double blep_residual(double t, double dt) {
  if (t < dt) {
    double u = t / dt;
    return 2.0 * u - u * u - 1.0;
  }
  if (t > 1.0 - dt) {
    double u = (t - 1.0) / dt;
    return u * u + 2.0 * u + 1.0;
  }
  return 0.0;
}

double square_wave(double phase, double dt, bool antialias) {
  double naive = phase < 0.5 ? 1.0 : -1.0;
  if (!antialias || dt <= 0.0) return naive;
  return naive + blep_residual(phase, dt) - blep_residual(frac(phase + 0.5), dt);
}

double saw_wave(double phase, double dt, bool antialias) {
  double naive = 2.0 * phase - 1.0;
  if (!antialias || dt <= 0.0) return naive;
  return naive - blep_residual(phase, dt);
}

}  // namespace

const char* variant_name(TaskVariant v) {
  switch (v) {
    case TaskVariant::Symmetric: return "symmetric";
    case TaskVariant::Asymmetric: return "asymmetric";
    case TaskVariant::Gated: return "gated";
  }
  return "?";
}

TaskVariant variant_from_name(const std::string& name) {
  if (name == "symmetric") return TaskVariant::Symmetric;
  if (name == "asymmetric") return TaskVariant::Asymmetric;
  if (name == "gated") return TaskVariant::Gated;
  throw std::invalid_argument("unknown task variant: " + name);
}

int param_count(int k, TaskVariant v) {
  if (k <= 0) throw std::invalid_argument("param_count: k must be positive");
  return 3 * k + (v == TaskVariant::Gated ? 1 : 0);
}

void validate_params(const std::vector<double>& x, int k, TaskVariant v) {
  if (static_cast<int>(x.size()) != param_count(k, v))
    throw std::invalid_argument("parameter vector has length " + std::to_string(x.size()) +
                                ", expected " + std::to_string(param_count(k, v)));
  for (double e : x) {
    if (!std::isfinite(e) || e < -1.0 || e > 1.0)
      throw std::invalid_argument("parameter entries must be finite and in [-1, 1]");
  }
}

std::vector<double> scale_frequencies(const std::vector<double>& omega_raw, int k,
                                      TaskVariant v, double gate_c) {
  if (k <= 0) throw std::invalid_argument("scale_frequencies: k must be positive");
  if (static_cast<int>(omega_raw.size()) != k)
    throw std::invalid_argument("scale_frequencies: expected k raw frequencies");
  for (double w : omega_raw) {
    if (!std::isfinite(w) || w < -1.0 || w > 1.0)
      throw std::invalid_argument("scale_frequencies: entries must be finite and in [-1, 1]");
  }
  bool banded = (v == TaskVariant::Asymmetric) || (v == TaskVariant::Gated && gate_c < 0.0);
  std::vector<double> out(omega_raw.size());
  for (int i = 0; i < k; ++i) {
    double unit = (omega_raw[static_cast<size_t>(i)] + 1.0) * 0.5;  // [0, 1]
    if (banded) {
      out[static_cast<size_t>(i)] = (unit + i) * kPi / k;
    } else {
      out[static_cast<size_t>(i)] = unit * kPi;
    }
  }
  return out;
}

double osc_sample(double phase, double dphase, double gamma_raw, bool antialias) {
  double m = gamma_raw + 1.0;  // [0, 2]
  if (m <= 1.0) {
    double s = std::sin(2.0 * kPi * phase);
    if (m <= 0.0) return s;
    return (1.0 - m) * s + m * square_wave(phase, dphase, antialias);
  }
  return (2.0 - m) * square_wave(phase, dphase, antialias) +
         (m - 1.0) * saw_wave(phase, dphase, antialias);
}

AudioSignal render(const std::vector<double>& x, int k, TaskVariant v, int n_samples,
                   bool antialias, double sample_rate) {
  validate_params(x, k, v);
  if (n_samples < 1) throw std::invalid_argument("render: n_samples must be >= 1");

  double gate_c = v == TaskVariant::Gated ? x[static_cast<size_t>(3 * k)] : 1.0;
  std::vector<double> omega_raw(x.begin(), x.begin() + k);
  std::vector<double> omega = scale_frequencies(omega_raw, k, v, gate_c);

  AudioSignal y;
  y.sample_rate = sample_rate;
  y.samples.assign(static_cast<size_t>(n_samples), 0.0);
  double inv_k = 1.0 / static_cast<double>(k);
  for (int i = 0; i < k; ++i) {
    double amp = (x[static_cast<size_t>(k + i)] + 1.0) * 0.5;
    if (amp == 0.0) continue;
    double gamma = x[static_cast<size_t>(2 * k + i)];
    double dphase = omega[static_cast<size_t>(i)] / (2.0 * kPi);
    double phase = 0.0;
    for (int n = 0; n < n_samples; ++n) {
      y.samples[static_cast<size_t>(n)] += amp * inv_k * osc_sample(phase, dphase, gamma, antialias);
      phase += dphase;
      if (phase >= 1.0) phase -= 1.0;
    }
  }
  return y;
}

std::vector<double> sample_params(int k, TaskVariant v, uint64_t seed) {
  int n = param_count(k, v);
  Rng rng(seed);
  std::vector<double> x(static_cast<size_t>(n));
  for (int i = 0; i < 3 * k; ++i) x[static_cast<size_t>(i)] = rng.uniform_pm1();
  if (v == TaskVariant::Gated) x[static_cast<size_t>(3 * k)] = rng.uniform() < 0.5 ? -1.0 : 1.0;
  return x;
}

void generate_dataset(const DatasetConfig& config, const std::string& out_dir) {
  if (config.k <= 0 || config.count < 0 || config.n_samples < 1)
    throw std::invalid_argument("generate_dataset: invalid config");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  nlohmann::json meta;
  meta["format_version"] = 1;
  meta["k"] = config.k;
  meta["variant"] = variant_name(config.variant);
  meta["count"] = config.count;
  meta["n_samples"] = config.n_samples;
  meta["seed"] = config.seed;
  meta["sample_rate"] = config.sample_rate;
  {
    std::ofstream mf(fs::path(out_dir) / "meta.json");
    if (!mf) throw std::runtime_error("generate_dataset: cannot write meta.json");
    mf << meta.dump(2) << "\n";
  }

  std::ofstream pf(fs::path(out_dir) / "params.f32", std::ios::binary);
  std::ofstream af(fs::path(out_dir) / "audio.f32", std::ios::binary);
  if (!pf || !af) throw std::runtime_error("generate_dataset: cannot open output files");

  int dim = param_count(config.k, config.variant);
  std::vector<float> prec(static_cast<size_t>(dim));
  std::vector<float> arec(static_cast<size_t>(config.n_samples));
  for (int64_t j = 0; j < config.count; ++j) {
    uint64_t record_seed = hash_seed(config.seed, static_cast<uint64_t>(j));
    std::vector<double> x = sample_params(config.k, config.variant, record_seed);
    // Parameters are stored as 32-bit floats; render from the stored
    // values so the audio file is exactly the render of the params file.
    for (int i = 0; i < dim; ++i) {
      prec[static_cast<size_t>(i)] = static_cast<float>(x[static_cast<size_t>(i)]);
      x[static_cast<size_t>(i)] = static_cast<double>(prec[static_cast<size_t>(i)]);
    }
    AudioSignal y = render(x, config.k, config.variant, config.n_samples, true,
                           config.sample_rate);
    for (int i = 0; i < config.n_samples; ++i)
      arec[static_cast<size_t>(i)] = static_cast<float>(y.samples[static_cast<size_t>(i)]);
    pf.write(reinterpret_cast<const char*>(prec.data()),
             static_cast<std::streamsize>(prec.size() * sizeof(float)));
    af.write(reinterpret_cast<const char*>(arec.data()),
             static_cast<std::streamsize>(arec.size() * sizeof(float)));
  }
  if (!pf || !af) throw std::runtime_error("generate_dataset: write failure");
}

}  // namespace permflow::kosc
