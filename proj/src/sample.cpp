#include "somn/sample.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "somn/fft.hpp"
#include "somn/signal.hpp"

namespace somn {

const SampleSpectra& sample_spectra(const Sample& s) {
    if (s.spectra) return *s.spectra;
    if (!s.x) throw InternalError("sample_spectra: sample has no signal tensor");

    const int channels = s.x->dim(0);
    const int n = s.x->dim(1);
    const int bins = rfft_bins(n);

    auto sp = std::make_shared<SampleSpectra>();
    sp->channels = channels;
    sp->bins = bins;
    sp->magnitude.resize(static_cast<size_t>(channels) * bins);
    sp->phase.resize(static_cast<size_t>(channels) * bins);

    for (int c = 0; c < channels; ++c) {
        std::span<const float> row(s.x->data() + static_cast<size_t>(c) * n,
                                   static_cast<size_t>(n));
        SpectralPair pair = rfft(row);
        for (int k = 0; k < bins; ++k) {
            sp->magnitude[static_cast<size_t>(c) * bins + k] =
                static_cast<float>(pair.magnitude[static_cast<size_t>(k)]);
            sp->phase[static_cast<size_t>(c) * bins + k] =
                static_cast<float>(pair.phase[static_cast<size_t>(k)]);
        }
    }
    s.spectra = sp;
    return *s.spectra;
}

std::vector<Sample> segment(const Recording& rec) {
    std::vector<Sample> out;
    if (rec.channels.size() != kSampleChannels)
        throw UsageError("segment: expected " + std::to_string(kSampleChannels) +
                         " harmonized channels, got " + std::to_string(rec.channels.size()));
    const size_t len = rec.channels.front().samples.size();
    for (const auto& ch : rec.channels) {
        if (std::abs(ch.rate - kTargetRate) > 1e-6)
            throw UsageError("segment: channel '" + ch.label + "' is at " +
                             std::to_string(ch.rate) + " Hz, expected 102.4");
        if (ch.samples.size() != len)
            throw UsageError("segment: channel lengths differ");
    }

    const int64_t epochs_in_signal = static_cast<int64_t>(len) / kEpochPoints;
    const int64_t epochs =
        std::min<int64_t>(epochs_in_signal, static_cast<int64_t>(rec.hypnogram.size()));

    int64_t i = 0;
    while (i + kEpochsPerSample <= epochs) {
        bool clean = true;
        for (int k = 0; k < kEpochsPerSample; ++k)
            if (rec.hypnogram[static_cast<size_t>(i + k)] == Stage::kExcluded) clean = false;
        if (!clean) {
            ++i;  // drop this window, try the next epoch boundary
            continue;
        }

        auto x = std::make_shared<TensorF>(std::vector<int>{kSampleChannels, kSamplePoints});
        for (int c = 0; c < kSampleChannels; ++c) {
            const float* src = rec.channels[static_cast<size_t>(c)].samples.data() +
                               static_cast<size_t>(i) * kEpochPoints;
            std::memcpy(x->data() + static_cast<size_t>(c) * kSamplePoints, src,
                        sizeof(float) * kSamplePoints);
        }

        Sample s;
        s.x = std::move(x);
        s.label = static_cast<int>(rec.hypnogram[static_cast<size_t>(i + 1)]);
        s.subject_id = rec.subject_id;
        s.dataset_id = rec.dataset_id;
        out.push_back(std::move(s));
        i += kEpochsPerSample;
    }
    return out;
}

std::vector<Sample> preprocess_recording(const Recording& rec, const PrepConfig& cfg, Rng& rng) {
    std::vector<Channel> chs;
    for (const auto& ch : rec.channels) {
        if (!cfg.channel_filter.empty() &&
            std::find(cfg.channel_filter.begin(), cfg.channel_filter.end(), ch.label) ==
                cfg.channel_filter.end())
            continue;
        chs.push_back(resample(ch, cfg.target_hz));
    }
    if (chs.empty()) throw DataError("preprocess_recording: no channels left after filtering");

    chs = harmonize_channels(std::move(chs), cfg.n_channels, rng);
    for (auto& ch : chs) ch = zscore(ch, cfg.zscore_eps);

    Recording prepped;
    prepped.subject_id = rec.subject_id;
    prepped.dataset_id = rec.dataset_id;
    prepped.channels = std::move(chs);
    prepped.hypnogram = rec.hypnogram;
    return segment(prepped);
}

// ---------------------------------------------------------------------------
// Sample cache

namespace {
constexpr char kCacheMagic[8] = {'S', 'O', 'M', 'N', 'S', 'M', 'P', '1'};

void put_u32(std::ofstream& os, uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& is) {
    uint8_t b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
}  // namespace

void write_sample_cache(const std::string& path_base, std::span<const Sample> samples) {
    std::ofstream bin(path_base + ".bin", std::ios::binary);
    if (!bin) throw DataError("cannot open " + path_base + ".bin for writing");
    bin.write(kCacheMagic, 8);
    put_u32(bin, static_cast<uint32_t>(samples.size()));
    put_u32(bin, kSampleChannels);
    put_u32(bin, kSamplePoints);
    for (const auto& s : samples) {
        if (!s.x || s.x->dim(0) != kSampleChannels || s.x->dim(1) != kSamplePoints)
            throw UsageError("write_sample_cache: sample shape is not 9 x 9216");
        uint8_t label = static_cast<uint8_t>(s.label);
        bin.write(reinterpret_cast<const char*>(&label), 1);
        bin.write(reinterpret_cast<const char*>(s.x->data()),
                  static_cast<std::streamsize>(sizeof(float) * s.x->numel()));
    }
    if (!bin) throw DataError("write failure on " + path_base + ".bin");

    std::ofstream man(path_base + ".manifest");
    if (!man) throw DataError("cannot open " + path_base + ".manifest for writing");
    for (const auto& s : samples) man << s.subject_id << "\t" << s.dataset_id << "\n";
}

std::vector<Sample> read_sample_cache(const std::string& path_base) {
    std::ifstream bin(path_base + ".bin", std::ios::binary);
    if (!bin) throw DataError("cannot open " + path_base + ".bin");
    char magic[8];
    bin.read(magic, 8);
    if (!bin || std::memcmp(magic, kCacheMagic, 8) != 0)
        throw DataError(path_base + ".bin is not a sample cache (bad magic)");
    uint32_t n = get_u32(bin), channels = get_u32(bin), points = get_u32(bin);
    if (channels != kSampleChannels || points != kSamplePoints)
        throw DataError("sample cache shape " + std::to_string(channels) + "x" +
                        std::to_string(points) + " unsupported");

    std::ifstream man(path_base + ".manifest");
    if (!man) throw DataError("cannot open " + path_base + ".manifest");

    std::vector<Sample> out;
    out.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
        uint8_t label = 0;
        bin.read(reinterpret_cast<char*>(&label), 1);
        auto x = std::make_shared<TensorF>(std::vector<int>{kSampleChannels, kSamplePoints});
        bin.read(reinterpret_cast<char*>(x->data()),
                 static_cast<std::streamsize>(sizeof(float) * x->numel()));
        if (!bin) throw DataError("sample cache truncated at sample " + std::to_string(i));

        std::string line;
        if (!std::getline(man, line))
            throw DataError("sample cache manifest shorter than sample count");
        size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("malformed manifest line: \"" + line + "\"");

        Sample s;
        s.x = std::move(x);
        s.label = label;
        s.subject_id = line.substr(0, tab);
        s.dataset_id = line.substr(tab + 1);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace somn
