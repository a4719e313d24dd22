#include "somn/synth.hpp"

#include <algorithm>
#include <cmath>

#include "somn/fft.hpp"

namespace somn {

void SynthSpec::validate() const {
    if (n_datasets < 0 || subjects_per_dataset < 0 || recordings_per_subject < 0)
        throw UsageError("synth: counts must be >= 0");
    if (sample_rate <= 0 || minutes_per_recording <= 0 || channels < 1)
        throw UsageError("synth: rate, duration and channels must be positive");
    const double nyquist = sample_rate / 2.0;
    for (const auto& c : classes) {
        if (c.band_lo <= 0 || c.band_hi <= c.band_lo)
            throw UsageError("synth: class band must satisfy 0 < lo < hi");
        if (c.band_hi >= nyquist)
            throw DataError("synth: class band " + std::to_string(c.band_hi) +
                            " Hz exceeds the Nyquist frequency " + std::to_string(nyquist));
    }
    if (noise_level <= 0) throw UsageError("synth: noise_level must be > 0");
    if (mean_run_epochs < 1) throw UsageError("synth: mean_run_epochs must be >= 1");
}

namespace {

struct SubjectNuisance {
    std::array<double, kNumStages> band_shift{};
    std::array<double, 4> color{};        // cosine noise-color coefficients
    double noise_mult = 1.0;
    std::vector<double> channel_gain;
    std::vector<int> channel_perm;
};

struct DatasetNuisance {
    double tilt = 0.0;        // spectral tilt exponent
    double gain = 1.0;
    double noise_mult = 1.0;
};

SubjectNuisance draw_subject(const SynthSpec& spec, Rng rng) {
    SubjectNuisance n;
    n.channel_gain.assign(static_cast<size_t>(spec.channels), 1.0);
    n.channel_perm.resize(static_cast<size_t>(spec.channels));
    for (int c = 0; c < spec.channels; ++c) n.channel_perm[static_cast<size_t>(c)] = c;
    if (!spec.subject_nuisance) return n;

    for (auto& s : n.band_shift) s = rng.uniform(-spec.band_jitter_hz, spec.band_jitter_hz);
    for (auto& a : n.color) a = rng.normal(0.0, 0.15);
    n.noise_mult = rng.uniform(0.8, 1.25);
    for (auto& g : n.channel_gain) g = std::exp(rng.normal(0.0, 0.2));
    rng.shuffle(n.channel_perm.begin(), n.channel_perm.end());
    return n;
}

DatasetNuisance draw_dataset(const SynthSpec& spec, Rng rng) {
    DatasetNuisance n;
    if (!spec.dataset_nuisance) return n;
    n.tilt = rng.uniform(-1.0, 1.0);
    n.gain = rng.uniform(0.7, 1.4);
    n.noise_mult = rng.uniform(0.85, 1.2);
    return n;
}

std::vector<Stage> draw_hypnogram(int epochs, double mean_run, Rng& rng) {
    std::vector<Stage> out;
    out.reserve(static_cast<size_t>(epochs));
    while (static_cast<int>(out.size()) < epochs) {
        Stage stage = static_cast<Stage>(rng.uniform_int(0, kNumStages - 1));
        double u = std::max(rng.uniform(), 1e-12);
        int run = std::max(1, static_cast<int>(std::llround(-mean_run * std::log(u))));
        run = std::min({run, 3 * static_cast<int>(mean_run),
                        epochs - static_cast<int>(out.size())});
        run = std::max(run, 1);
        for (int i = 0; i < run && static_cast<int>(out.size()) < epochs; ++i)
            out.push_back(stage);
    }
    return out;
}

}  // namespace

std::vector<std::vector<Recording>> synth_generate(const SynthSpec& spec, Rng& rng) {
    spec.validate();

    const int epoch_points = static_cast<int>(std::llround(spec.sample_rate * kEpochSeconds));
    const int epochs_per_rec = static_cast<int>(spec.minutes_per_recording * 60.0 /
                                                kEpochSeconds);
    const int bins = rfft_bins(epoch_points);
    const double bin_hz = spec.sample_rate / epoch_points;
    const double nyquist = spec.sample_rate / 2.0;

    std::vector<std::vector<Recording>> out;
    out.reserve(static_cast<size_t>(spec.n_datasets));

    for (int d = 0; d < spec.n_datasets; ++d) {
        DatasetNuisance dn = draw_dataset(spec, rng.fork({0xD5, static_cast<uint64_t>(d)}));
        std::vector<Recording> recs;

        for (int s = 0; s < spec.subjects_per_dataset; ++s) {
            SubjectNuisance sn = draw_subject(
                spec, rng.fork({0x5B, static_cast<uint64_t>(d), static_cast<uint64_t>(s)}));

            for (int r = 0; r < spec.recordings_per_subject; ++r) {
                Rng rec_rng = rng.fork({0xEC, static_cast<uint64_t>(d),
                                        static_cast<uint64_t>(s), static_cast<uint64_t>(r)});
                std::vector<Stage> hyp =
                    draw_hypnogram(epochs_per_rec, spec.mean_run_epochs, rec_rng);

                Recording rec;
                rec.subject_id = "d" + std::to_string(d) + "s" + std::to_string(s);
                rec.dataset_id = "synth" + std::to_string(d);
                rec.hypnogram = hyp;
                rec.channels.resize(static_cast<size_t>(spec.channels));
                for (int c = 0; c < spec.channels; ++c) {
                    auto& ch = rec.channels[static_cast<size_t>(c)];
                    ch.label = "ch" + std::to_string(sn.channel_perm[static_cast<size_t>(c)]);
                    ch.rate = spec.sample_rate;
                    ch.samples.resize(static_cast<size_t>(epoch_points) * epochs_per_rec);
                }

                SpectralPair half;
                half.magnitude.resize(static_cast<size_t>(bins));
                half.phase.resize(static_cast<size_t>(bins));

                for (int e = 0; e < epochs_per_rec; ++e) {
                    const auto& sig = spec.classes[static_cast<size_t>(hyp[static_cast<size_t>(e)])];
                    const double lo = sig.band_lo +
                                      sn.band_shift[static_cast<size_t>(hyp[static_cast<size_t>(e)])];
                    const double hi = sig.band_hi +
                                      sn.band_shift[static_cast<size_t>(hyp[static_cast<size_t>(e)])];

                    for (int c = 0; c < spec.channels; ++c) {
                        Rng noise = rng.fork({0xE9, static_cast<uint64_t>(d),
                                              static_cast<uint64_t>(s), static_cast<uint64_t>(r),
                                              static_cast<uint64_t>(e),
                                              static_cast<uint64_t>(c)});
                        for (int k = 0; k < bins; ++k) {
                            const double f = k * bin_hz;
                            // Dataset tilt and subject noise color shape the spectrum.
                            double tilt = std::pow(1.0 + f / nyquist, dn.tilt);
                            double color = 0.0;
                            for (size_t j = 0; j < sn.color.size(); ++j)
                                color += sn.color[j] *
                                         std::cos(M_PI * (j + 1) * f / nyquist);
                            double floor_amp = spec.noise_level * sig.broadband *
                                               sn.noise_mult * dn.noise_mult * std::exp(color);
                            double amp = floor_amp;
                            if (f >= lo && f <= hi) amp += sig.amplitude;
                            amp *= tilt;
                            if (k == 0) amp = 0.0;  // no DC component

                            const double re = noise.normal() * amp * 0.70710678118654752;
                            const double im = noise.normal() * amp * 0.70710678118654752;
                            const double mag = std::hypot(re, im);
                            half.magnitude[static_cast<size_t>(k)] = mag;
                            half.phase[static_cast<size_t>(k)] =
                                mag == 0.0 ? 0.0 : std::atan2(im, re);
                        }
                        std::vector<double> wave = irfft(half, epoch_points);
                        const double g = dn.gain * sn.channel_gain[static_cast<size_t>(c)];
                        float* dst = rec.channels[static_cast<size_t>(c)].samples.data() +
                                     static_cast<size_t>(e) * epoch_points;
                        for (int i = 0; i < epoch_points; ++i)
                            dst[i] = static_cast<float>(g * wave[static_cast<size_t>(i)]);
                    }
                }
                recs.push_back(std::move(rec));
            }
        }
        out.push_back(std::move(recs));
    }
    return out;
}

std::vector<SampleDataset> synth_datasets(const SynthSpec& spec, const PrepConfig& prep,
                                          Rng& rng) {
    auto recordings = synth_generate(spec, rng);
    std::vector<SampleDataset> out;
    out.reserve(recordings.size());
    for (size_t d = 0; d < recordings.size(); ++d) {
        std::vector<Sample> samples;
        for (size_t r = 0; r < recordings[d].size(); ++r) {
            const auto& rec = recordings[d][r];
            Rng prep_rng =
                rng.fork({0x99, static_cast<uint64_t>(d), static_cast<uint64_t>(r)});
            auto s = preprocess_recording(rec, prep, prep_rng);
            samples.insert(samples.end(), std::make_move_iterator(s.begin()),
                           std::make_move_iterator(s.end()));
        }
        std::string id = recordings[d].empty() ? "synth" + std::to_string(d)
                                               : recordings[d].front().dataset_id;
        out.push_back(SampleDataset::from_samples(id, std::move(samples)));
    }
    return out;
}

}  // namespace somn
