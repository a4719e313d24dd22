#pragma once

#include <array>
#include <vector>

#include "somn/edf.hpp"
#include "somn/sample.hpp"
#include "somn/tasks.hpp"

namespace somn {

// Spectral signature of one sleep stage: band-limited noise energized in
// [band_lo, band_hi] Hz on top of a broadband floor.
struct ClassSignature {
    double band_lo = 0.0;
    double band_hi = 0.0;
    double amplitude = 1.0;  // in-band spectral amplitude
    double broadband = 1.0;  // multiplier on the noise floor
};

// Desk-scale stand-in for a multi-center PSG corpus: per-class spectral
// bands, per-subject nuisance (band jitter, noise color, gains, channel
// permutation) and per-dataset nuisance (spectral tilt, gain, noise floor).
struct SynthSpec {
    int n_datasets = 5;
    int subjects_per_dataset = 8;
    int recordings_per_subject = 2;
    double minutes_per_recording = 20.0;
    double sample_rate = 102.4;
    int channels = 9;
    std::array<ClassSignature, kNumStages> classes = {{
        {9.0, 11.0, 1.0, 1.0},   // W: alpha range
        {5.0, 7.0, 1.0, 1.0},    // N1: theta
        {12.0, 15.0, 1.0, 1.0},  // N2: sigma/spindles
        {0.5, 3.0, 1.0, 1.0},    // N3: delta
        {5.0, 7.0, 1.0, 2.5},    // REM: theta with a heavier broadband
    }};
    double noise_level = 0.1;     // broadband floor relative to band amplitude
    bool subject_nuisance = true;
    bool dataset_nuisance = true;
    double band_jitter_hz = 0.35;  // per-subject band center shift
    double mean_run_epochs = 5.0;  // hypnogram stage run length

    void validate() const;
};

// Deterministic per (spec, seed): datasets "synth0".."synthN-1", subjects
// "d<k>s<j>", hypnograms recording the generating class per epoch.
std::vector<std::vector<Recording>> synth_generate(const SynthSpec& spec, Rng& rng);

// synth_generate + the preprocessing pipeline, indexed for task sampling.
std::vector<SampleDataset> synth_datasets(const SynthSpec& spec, const PrepConfig& prep,
                                          Rng& rng);

}  // namespace somn
