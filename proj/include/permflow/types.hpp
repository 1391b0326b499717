#pragma once

#include <cstdint>
#include <vector>

namespace permflow {

// Mono sample buffer with a nominal rate. The rate only matters to
// time-based metrics (mel/MFCC framing and friends); synthesis itself
// works in normalized angular frequency.
struct AudioSignal {
  std::vector<double> samples;
  double sample_rate = 16000.0;
};

// Default k-osc signal geometry.
inline constexpr int kDefaultSignalLength = 2048;
inline constexpr double kDefaultSampleRate = 16000.0;

// Rendered samples may overshoot [-1, 1] by at most this much due to
// the polynomial edge correction.
inline constexpr double kRenderBoundEps = 1e-6;

}  // namespace permflow
