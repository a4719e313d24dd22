#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "somn/edf.hpp"
#include "somn/tensor.hpp"

namespace somn {

constexpr int kSampleChannels = 9;
constexpr int kEpochPoints = 3072;  // 30 s at 102.4 Hz
constexpr int kEpochsPerSample = 3;
constexpr int kSamplePoints = kEpochPoints * kEpochsPerSample;  // 9216
constexpr double kTargetRate = 102.4;

// Per-channel half spectra of one sample, float magnitude/phase rows.
// Computed lazily and cached on the sample; the phase-swap generator reads
// magnitudes from one sample and phases from another.
struct SampleSpectra {
    int channels = 0;
    int bins = 0;
    std::vector<float> magnitude;  // channels * bins
    std::vector<float> phase;
};

// One training window: 3 consecutive epochs of 9 harmonized channels, labeled
// with the central epoch's stage.
struct Sample {
    std::shared_ptr<const TensorF> x;  // (9, 9216)
    int label = 0;                     // class index 0..4 (Stage order)
    std::string subject_id;
    std::string dataset_id;
    mutable std::shared_ptr<const SampleSpectra> spectra;  // lazy rfft cache
};

// Computes (and caches) the channel spectra of a sample.
const SampleSpectra& sample_spectra(const Sample& s);

struct PrepConfig {
    double target_hz = kTargetRate;
    int n_channels = kSampleChannels;
    double zscore_eps = 1e-8;
    // Per-corpus channel selection applied before harmonization; empty keeps
    // every channel.
    std::vector<std::string> channel_filter;
};

// Cuts a preprocessed recording (9 channels at 102.4 Hz) into non-overlapping
// 3-epoch windows. A window containing any EXCLUDED epoch is dropped and the
// scan advances by one epoch to recover later clean windows. The label is the
// central epoch's stage.
std::vector<Sample> segment(const Recording& rec);

// Full pipeline: channel filter -> resample -> harmonize -> zscore ->
// segment. Channel selection and shuffling draw from rng once per recording.
std::vector<Sample> preprocess_recording(const Recording& rec, const PrepConfig& cfg, Rng& rng);

// Flat binary sample cache: little-endian float32 payload with a fixed shape
// header plus a line-delimited sidecar manifest (subject, dataset per
// sample). Writes <base>.bin and <base>.manifest.
void write_sample_cache(const std::string& path_base, std::span<const Sample> samples);
std::vector<Sample> read_sample_cache(const std::string& path_base);

}  // namespace somn
