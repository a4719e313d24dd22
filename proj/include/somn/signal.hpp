#pragma once

#include <string>
#include <vector>

#include "somn/common.hpp"

namespace somn {

// One physical signal channel. Samples are in physical units (typically uV
// after EDF calibration).
struct Channel {
    std::string label;
    double rate = 0.0;  // Hz
    std::vector<float> samples;

    double duration_s() const { return rate > 0 ? samples.size() / rate : 0.0; }
};

// Band-limited rational resampling (polyphase Kaiser-windowed sinc).
// Output length is round(len * target / ch.rate); equal rates pass through
// untouched.
Channel resample(const Channel& ch, double target_hz = 102.4);

// (x - mean) / (std + eps) with the population standard deviation. An
// all-constant channel (std 0) comes out all zeros.
Channel zscore(const Channel& ch, double eps = 1e-8);

// Fix the channel count to exactly n: random subset when over, all-zero dummy
// channels when under, then a uniform shuffle. All inputs must share rate and
// length.
std::vector<Channel> harmonize_channels(std::vector<Channel> chs, int n, Rng& rng);

}  // namespace somn
