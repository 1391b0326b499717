#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "permflow/types.hpp"

namespace permflow::kosc {

// Which symmetry the synthesizer exhibits.
//   Symmetric:  all oscillators share the full frequency range, so any
//               permutation of oscillator parameter triples leaves the
//               rendered signal unchanged.
//   Asymmetric: oscillator i is confined to its own disjoint frequency
//               band, which breaks the permutation symmetry.
//   Gated:      one extra routing scalar c in {-1, +1} appended to the
//               parameter vector selects between the two behaviours
//               (c = +1 symmetric, c = -1 asymmetric).
enum class TaskVariant { Symmetric, Asymmetric, Gated };

const char* variant_name(TaskVariant v);
TaskVariant variant_from_name(const std::string& name);

// Length of the flat parameter vector: 3k, plus one gate scalar for Gated.
int param_count(int k, TaskVariant v);

// Parameter vectors are laid out [w_1..w_k, a_1..a_k, g_1..g_k (, c)],
// every entry in [-1, 1].
void validate_params(const std::vector<double>& x, int k, TaskVariant v);

// Maps raw frequency parameters in [-1,1] to angular frequencies in
// rad/sample. Symmetric (and Gated with c=+1) maps every entry to
// [0, pi]; Asymmetric (and Gated with c=-1) maps entry i to the band
// [(i-1)pi/k, i*pi/k].
std::vector<double> scale_frequencies(const std::vector<double>& omega_raw, int k,
                                      TaskVariant v, double gate_c = 1.0);

// One oscillator sample. `phase` in cycles [0,1), `dphase` in
// cycles/sample, `gamma_raw` in [-1,1] morphs sine -> square -> saw.
// Square and saw edges carry a 2-sample polynomial correction unless
// `antialias` is false; the pure sine path is never corrected.
double osc_sample(double phase, double dphase, double gamma_raw, bool antialias = true);

// Renders the k-oscillator sum. Amplitudes map to [0,1] via (a+1)/2 and
// the sum is divided by k, so |y| <= 1 + kRenderBoundEps. All phases
// start at 0.
AudioSignal render(const std::vector<double>& x, int k, TaskVariant v, int n_samples,
                   bool antialias = true, double sample_rate = kDefaultSampleRate);

// I.i.d. uniform parameter vector on [-1,1]^(3k); the Gated gate is
// uniform on {-1,+1}. Deterministic function of the seed.
std::vector<double> sample_params(int k, TaskVariant v, uint64_t seed);

struct DatasetConfig {
  int k = 4;
  TaskVariant variant = TaskVariant::Symmetric;
  int64_t count = 0;
  uint64_t seed = 0;
  int n_samples = kDefaultSignalLength;
  double sample_rate = kDefaultSampleRate;
};

// Writes meta.json, params.f32 and audio.f32 into `out_dir`. Record j
// is generated from hash_seed(seed, j), so content is independent of
// generation order.
void generate_dataset(const DatasetConfig& config, const std::string& out_dir);

}  // namespace permflow::kosc
