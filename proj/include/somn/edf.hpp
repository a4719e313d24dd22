#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "somn/common.hpp"
#include "somn/signal.hpp"

namespace somn {

// The five scored stages plus the bucket for everything that never reaches
// training (movement, unknown, artifacts).
enum class Stage : uint8_t { kWake = 0, kN1 = 1, kN2 = 2, kN3 = 3, kRem = 4, kExcluded = 5 };

constexpr int kNumStages = 5;
constexpr double kEpochSeconds = 30.0;

const char* stage_name(Stage s);

// Canonical mapping from legacy stage tokens (R&K, EDF+ annotations, plain
// CSV labels) onto the 5-class target. Total: unknown tokens map to
// kExcluded.
Stage map_stage(std::string_view raw);

// Like map_stage, but also reports whether the token was recognized at all;
// TAL annotation streams carry non-stage events that must be skipped rather
// than excluded.
bool lookup_stage(std::string_view raw, Stage* out);

// ---------------------------------------------------------------------------
// EDF container

struct EdfHeader {
    std::string version = "0";
    std::string patient_id;
    std::string recording_id;
    std::string start_date = "01.01.00";  // dd.mm.yy
    std::string start_time = "00.00.00";  // hh.mm.ss
    int header_bytes = 0;                 // 256 * (1 + n_signals)
    int64_t n_records = 0;                // -1 only while streaming-writing
    double record_duration = 1.0;         // seconds
    int n_signals = 0;

    bool operator==(const EdfHeader&) const = default;
};

struct SignalHeader {
    std::string label;
    std::string transducer;
    std::string physical_dim;
    double phys_min = -1.0;
    double phys_max = 1.0;
    int dig_min = -32768;
    int dig_max = 32767;
    std::string prefiltering;
    int samples_per_record = 1;

    double rate(double record_duration) const {
        return static_cast<double>(samples_per_record) / record_duration;
    }

    bool operator==(const SignalHeader&) const = default;
};

struct EdfFile {
    EdfHeader header;
    std::vector<SignalHeader> signals;
    std::vector<std::vector<int16_t>> samples;  // per signal, de-interleaved
};

// Decodes the fixed-width ASCII headers and the 16-bit little-endian data
// records. Throws ParseError (with byte offset) on truncation, non-numeric
// numeric fields, or a header_bytes value inconsistent with n_signals.
EdfFile parse_edf(std::span<const uint8_t> bytes);

// Inverse of parse_edf, bit-exact: parse_edf(write_edf(f)) reproduces headers
// and digital samples. Text wider than its field or channel lengths
// inconsistent with the record layout are errors.
std::vector<uint8_t> write_edf(const EdfFile& file);

// EDF linear calibration. Digital values outside [dig_min, dig_max] are
// clamped (and flagged via *clamped); dig_min == dig_max is a calibration
// error.
double scale_digital(int dig, const SignalHeader& sig, bool* clamped = nullptr);

// ---------------------------------------------------------------------------
// Hypnogram annotations

struct HypnogramEntry {
    double onset_s = 0.0;
    double duration_s = 0.0;
    Stage stage = Stage::kExcluded;
};

struct Hypnogram {
    std::vector<HypnogramEntry> entries;
    int warnings = 0;  // unknown stage tokens encountered

    // Projects the entries onto the 30 s epoch grid of a recording of the
    // given total duration; uncovered epochs are kExcluded.
    std::vector<Stage> to_epochs(double total_s) const;
};

// CSV form: header row `onset,duration,stage`, one entry per row.
Hypnogram parse_hypnogram_csv(std::string_view text);

// EDF+ time-stamped annotation lists: `+onset[\x15duration]\x14text\x14...\x00`.
// Only annotations carrying a recognizable sleep-stage token become entries.
Hypnogram parse_hypnogram_tal(std::span<const uint8_t> bytes);

// ---------------------------------------------------------------------------
// Recording assembly

struct Recording {
    std::string subject_id;
    std::string dataset_id;
    std::vector<Channel> channels;
    std::vector<Stage> hypnogram;  // one label per 30 s epoch

    double duration_s() const {
        return channels.empty() ? 0.0 : channels.front().duration_s();
    }
};

// Applies calibration and the epoch grid; channels may optionally be
// restricted to a label list (the per-corpus channel selection).
Recording to_recording(const EdfFile& file, const Hypnogram& hypno,
                       std::string subject_id, std::string dataset_id,
                       const std::vector<std::string>& channel_filter = {});

// Quantizes physical channels back to 16-bit digital with per-channel ranges.
// Channel lengths must be a whole number of records.
EdfFile from_recording(const Recording& rec);

// Hypnogram of a recording rendered as CSV rows (the canonical annotation
// sidecar written next to generated EDF files).
std::string hypnogram_to_csv(const std::vector<Stage>& epochs);

}  // namespace somn
