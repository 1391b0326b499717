#include "permflow/dataset.hpp"

#include <complex>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "permflow/dsp.hpp"

namespace permflow::data {

namespace fs = std::filesystem;

DatasetMeta read_meta(const std::string& dir) {
  std::ifstream f(fs::path(dir) / "meta.json");
  if (!f) throw std::runtime_error("dataset: cannot read meta.json in " + dir);
  nlohmann::json j = nlohmann::json::parse(f);
  DatasetMeta m;
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != 1)
    throw std::runtime_error("dataset: unsupported format version in " + dir);
  m.k = j.at("k").get<int>();
  m.variant = kosc::variant_from_name(j.at("variant").get<std::string>());
  m.count = j.at("count").get<int64_t>();
  m.n_samples = j.at("n_samples").get<int>();
  m.seed = j.at("seed").get<uint64_t>();
  m.sample_rate = j.at("sample_rate").get<double>();
  return m;
}

namespace {

std::vector<float> read_f32(const fs::path& path, int64_t expect) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("dataset: cannot open " + path.string());
  f.seekg(0, std::ios::end);
  int64_t bytes = static_cast<int64_t>(f.tellg());
  f.seekg(0);
  if (bytes != expect * static_cast<int64_t>(sizeof(float)))
    throw std::runtime_error("dataset: unexpected size of " + path.string());
  std::vector<float> out(static_cast<size_t>(expect));
  f.read(reinterpret_cast<char*>(out.data()), bytes);
  if (!f) throw std::runtime_error("dataset: short read from " + path.string());
  return out;
}

}  // namespace

std::vector<double> Dataset::params_row(int64_t i) const {
  std::vector<double> out(static_cast<size_t>(param_dim));
  for (int j = 0; j < param_dim; ++j)
    out[static_cast<size_t>(j)] = params[static_cast<size_t>(i * param_dim + j)];
  return out;
}

std::vector<double> Dataset::audio_row(int64_t i) const {
  if (audio.empty()) throw std::logic_error("dataset: audio not loaded");
  std::vector<double> out(static_cast<size_t>(meta.n_samples));
  for (int j = 0; j < meta.n_samples; ++j)
    out[static_cast<size_t>(j)] = audio[static_cast<size_t>(i * meta.n_samples + j)];
  return out;
}

Tensor Dataset::spectra_batch(const std::vector<int64_t>& idx) const {
  Tensor out({static_cast<int64_t>(idx.size()), static_cast<int64_t>(n_bins)});
  for (size_t r = 0; r < idx.size(); ++r)
    for (int j = 0; j < n_bins; ++j)
      out[static_cast<int64_t>(r) * n_bins + j] =
          spectra[static_cast<size_t>(idx[r] * n_bins + j)];
  return out;
}

Tensor Dataset::params_batch(const std::vector<int64_t>& idx) const {
  Tensor out({static_cast<int64_t>(idx.size()), static_cast<int64_t>(param_dim)});
  for (size_t r = 0; r < idx.size(); ++r)
    for (int j = 0; j < param_dim; ++j)
      out[static_cast<int64_t>(r) * param_dim + j] =
          params[static_cast<size_t>(idx[r] * param_dim + j)];
  return out;
}

Dataset load_dataset(const std::string& dir, bool keep_audio) {
  Dataset d;
  d.meta = read_meta(dir);
  d.param_dim = kosc::param_count(d.meta.k, d.meta.variant);
  d.n_bins = d.meta.n_samples / 2 + 1;
  d.params = read_f32(fs::path(dir) / "params.f32", d.meta.count * d.param_dim);
  std::vector<float> audio =
      read_f32(fs::path(dir) / "audio.f32", d.meta.count * d.meta.n_samples);

  d.spectra.assign(static_cast<size_t>(d.meta.count) * static_cast<size_t>(d.n_bins), 0.0f);
  int n = d.meta.n_samples;
  double scale = 2.0 / static_cast<double>(n);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < d.meta.count; ++i) {
    std::vector<std::complex<double>> buf(static_cast<size_t>(n));
    const float* src = audio.data() + static_cast<size_t>(i) * static_cast<size_t>(n);
    for (int j = 0; j < n; ++j) buf[static_cast<size_t>(j)] = static_cast<double>(src[j]);
    dsp::dft(buf);
    float* dst = d.spectra.data() + static_cast<size_t>(i) * static_cast<size_t>(d.n_bins);
    for (int j = 0; j < d.n_bins; ++j)
      dst[j] = static_cast<float>(std::abs(buf[static_cast<size_t>(j)]) * scale);
  }
  if (keep_audio) d.audio = std::move(audio);
  return d;
}

}  // namespace permflow::data
