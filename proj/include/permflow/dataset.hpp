#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "permflow/kosc.hpp"
#include "permflow/tensor.hpp"

namespace permflow::data {

struct DatasetMeta {
  int format_version = 1;
  int k = 0;
  kosc::TaskVariant variant = kosc::TaskVariant::Symmetric;
  int64_t count = 0;
  int n_samples = 0;
  uint64_t seed = 0;
  double sample_rate = 16000.0;
};

DatasetMeta read_meta(const std::string& dir);

// In-memory view of a generated dataset. Spectra are the one-sided DFT
// magnitudes scaled by 2/N, which keeps encoder inputs O(1); audio is
// only retained when requested (metrics need it, training does not).
struct Dataset {
  DatasetMeta meta;
  int param_dim = 0;
  int n_bins = 0;
  std::vector<float> params;   // count * param_dim
  std::vector<float> spectra;  // count * n_bins
  std::vector<float> audio;    // count * n_samples when kept, else empty

  std::vector<double> params_row(int64_t i) const;
  std::vector<double> audio_row(int64_t i) const;
  // Fills a [batch, n_bins] tensor from record indices.
  Tensor spectra_batch(const std::vector<int64_t>& idx) const;
  Tensor params_batch(const std::vector<int64_t>& idx) const;
};

Dataset load_dataset(const std::string& dir, bool keep_audio);

}  // namespace permflow::data
