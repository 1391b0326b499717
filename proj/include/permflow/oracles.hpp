#pragma once

#include <cstdint>
#include <vector>

#include "permflow/dsp.hpp"

namespace permflow::oracles {

// Verification-only reference implementations. These deliberately take
// different algorithmic routes from the production code they check and
// must never be called from it.

// Wasserstein-1 between discrete measures by successive-shortest-path
// minimum-cost flow on the bipartite transport graph. Masses need not
// be normalized; both sides are scaled to total mass 1 first.
double lp_transport_w1(const std::vector<double>& mass_a, const std::vector<double>& pos_a,
                       const std::vector<double>& mass_b, const std::vector<double>& pos_b);

// DTW cost by exhaustive enumeration of every monotone boundary-to-
// boundary path (steps right/down/diagonal). Exponential; lengths <= 8.
double dtw_enumerate(const dsp::FrameSeries& a, const dsp::FrameSeries& b);

// Band-limited square wave via its Fourier series truncated at Nyquist:
// (4/pi) sum_{odd h, h*dphase < 1/2} sin(2 pi h phase)/h, phase starting
// at 0, matching the synthesizer's naive square polarity.
std::vector<double> bandlimited_square(double dphase, int n_samples);

}  // namespace permflow::oracles
