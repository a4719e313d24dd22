#include "somn/edf.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

namespace somn {
namespace {

// Global header field offsets/widths.
constexpr int kVersionOff = 0, kVersionW = 8;
constexpr int kPatientOff = 8, kPatientW = 80;
constexpr int kRecordingOff = 88, kRecordingW = 80;
constexpr int kDateOff = 168, kDateW = 8;
constexpr int kTimeOff = 176, kTimeW = 8;
constexpr int kHeaderBytesOff = 184, kHeaderBytesW = 8;
constexpr int kReservedOff = 192, kReservedW = 44;
constexpr int kNRecordsOff = 236, kNRecordsW = 8;
constexpr int kDurationOff = 244, kDurationW = 8;
constexpr int kNSignalsOff = 252, kNSignalsW = 4;
constexpr int kGlobalHeader = 256;
constexpr int kPerSignalHeader = 256;

std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string read_text(std::span<const uint8_t> bytes, size_t off, size_t width) {
    if (off + width > bytes.size())
        throw ParseError("truncated header (need " + std::to_string(off + width) + " bytes, have " +
                             std::to_string(bytes.size()) + ")",
                         bytes.size());
    return trim(std::string_view(reinterpret_cast<const char*>(bytes.data()) + off, width));
}

int64_t read_int(std::span<const uint8_t> bytes, size_t off, size_t width, const char* field) {
    std::string s = read_text(bytes, off, width);
    if (s.empty()) throw ParseError(std::string("empty numeric field '") + field + "'", off);
    char* end = nullptr;
    long long v = std::strtoll(s.c_str(), &end, 10);
    if (end == nullptr || *end != '\0')
        throw ParseError(std::string("non-numeric value '") + s + "' in field '" + field + "'", off);
    return v;
}

double read_double(std::span<const uint8_t> bytes, size_t off, size_t width, const char* field) {
    std::string s = read_text(bytes, off, width);
    if (s.empty()) throw ParseError(std::string("empty numeric field '") + field + "'", off);
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == nullptr || *end != '\0')
        throw ParseError(std::string("non-numeric value '") + s + "' in field '" + field + "'", off);
    return v;
}

void write_text(std::vector<uint8_t>& out, const std::string& s, size_t width, const char* field) {
    if (s.size() > width)
        throw DataError(std::string("field '") + field + "' value \"" + s + "\" exceeds " +
                        std::to_string(width) + " characters");
    for (char c : s) out.push_back(static_cast<uint8_t>(c));
    for (size_t i = s.size(); i < width; ++i) out.push_back(' ');
}

void write_int(std::vector<uint8_t>& out, int64_t v, size_t width, const char* field) {
    write_text(out, std::to_string(v), width, field);
}

// Shortest decimal text that fits the field and parses back to the same
// double; falls back to the highest precision that fits.
std::string format_edf_float(double v, size_t width) {
    if (v == 0.0) return "0";
    char buf[64];
    std::string best;
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        std::string s(buf);
        if (s.size() > width) break;
        best = s;
        if (std::strtod(s.c_str(), nullptr) == v) return s;
    }
    if (best.empty())
        throw DataError("numeric value " + std::to_string(v) + " does not fit in " +
                        std::to_string(width) + " characters");
    return best;
}

void write_double(std::vector<uint8_t>& out, double v, size_t width, const char* field) {
    write_text(out, format_edf_float(v, width), width, field);
}

// Snaps a double to the value its EDF text representation parses back to.
double snap_to_field(double v, size_t width) {
    return std::strtod(format_edf_float(v, width).c_str(), nullptr);
}

}  // namespace

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::kWake: return "W";
        case Stage::kN1: return "N1";
        case Stage::kN2: return "N2";
        case Stage::kN3: return "N3";
        case Stage::kRem: return "REM";
        case Stage::kExcluded: return "EXCLUDED";
    }
    return "EXCLUDED";
}

bool lookup_stage(std::string_view raw, Stage* out) {
    std::string t = lower(trim(raw));
    // Strip the common EDF+ prefix.
    const std::string prefix = "sleep stage ";
    if (t.rfind(prefix, 0) == 0) t = t.substr(prefix.size());

    Stage s;
    if (t == "w" || t == "wake" || t == "0" || t == "s0")
        s = Stage::kWake;
    else if (t == "n1" || t == "1" || t == "s1")
        s = Stage::kN1;
    else if (t == "n2" || t == "2" || t == "s2")
        s = Stage::kN2;
    // R&K stages 3 and 4 both fold into N3.
    else if (t == "n3" || t == "3" || t == "s3" || t == "n4" || t == "4" || t == "s4")
        s = Stage::kN3;
    else if (t == "r" || t == "rem" || t == "s5" || t == "5")
        s = Stage::kRem;
    else if (t == "movement time" || t == "movement" || t == "mt" || t == "m" || t == "?" ||
             t == "unknown" || t == "excluded" || t == "unscored" || t == "a")
        s = Stage::kExcluded;
    else
        return false;
    if (out) *out = s;
    return true;
}

Stage map_stage(std::string_view raw) {
    Stage s;
    if (lookup_stage(raw, &s)) return s;
    return Stage::kExcluded;
}

// ---------------------------------------------------------------------------

EdfFile parse_edf(std::span<const uint8_t> bytes) {
    if (bytes.size() < kGlobalHeader)
        throw ParseError("stream shorter than the 256-byte global header", bytes.size());

    EdfFile f;
    EdfHeader& h = f.header;
    h.version = read_text(bytes, kVersionOff, kVersionW);
    h.patient_id = read_text(bytes, kPatientOff, kPatientW);
    h.recording_id = read_text(bytes, kRecordingOff, kRecordingW);
    h.start_date = read_text(bytes, kDateOff, kDateW);
    h.start_time = read_text(bytes, kTimeOff, kTimeW);
    h.header_bytes = static_cast<int>(read_int(bytes, kHeaderBytesOff, kHeaderBytesW, "header_bytes"));
    h.n_records = read_int(bytes, kNRecordsOff, kNRecordsW, "n_records");
    h.record_duration = read_double(bytes, kDurationOff, kDurationW, "record_duration");
    h.n_signals = static_cast<int>(read_int(bytes, kNSignalsOff, kNSignalsW, "n_signals"));

    if (h.n_signals < 0)
        throw ParseError("negative n_signals " + std::to_string(h.n_signals), kNSignalsOff);
    const int want_header = kGlobalHeader + h.n_signals * kPerSignalHeader;
    if (h.header_bytes != want_header)
        throw ParseError("header_bytes " + std::to_string(h.header_bytes) + " inconsistent with " +
                             std::to_string(h.n_signals) + " signals (expected " +
                             std::to_string(want_header) + ")",
                         kHeaderBytesOff);
    if (bytes.size() < static_cast<size_t>(want_header))
        throw ParseError("truncated signal headers", bytes.size());

    const int ns = h.n_signals;
    f.signals.resize(static_cast<size_t>(ns));
    size_t off = kGlobalHeader;
    auto field_block = [&](size_t width) {
        size_t o = off;
        off += width * static_cast<size_t>(ns);
        return o;
    };
    const size_t label_off = field_block(16);
    const size_t transducer_off = field_block(80);
    const size_t dim_off = field_block(8);
    const size_t pmin_off = field_block(8);
    const size_t pmax_off = field_block(8);
    const size_t dmin_off = field_block(8);
    const size_t dmax_off = field_block(8);
    const size_t prefilter_off = field_block(80);
    const size_t spr_off = field_block(8);
    field_block(32);  // per-signal reserved

    for (int i = 0; i < ns; ++i) {
        SignalHeader& s = f.signals[static_cast<size_t>(i)];
        const size_t si = static_cast<size_t>(i);
        s.label = read_text(bytes, label_off + 16 * si, 16);
        s.transducer = read_text(bytes, transducer_off + 80 * si, 80);
        s.physical_dim = read_text(bytes, dim_off + 8 * si, 8);
        s.phys_min = read_double(bytes, pmin_off + 8 * si, 8, "phys_min");
        s.phys_max = read_double(bytes, pmax_off + 8 * si, 8, "phys_max");
        s.dig_min = static_cast<int>(read_int(bytes, dmin_off + 8 * si, 8, "dig_min"));
        s.dig_max = static_cast<int>(read_int(bytes, dmax_off + 8 * si, 8, "dig_max"));
        s.prefiltering = read_text(bytes, prefilter_off + 80 * si, 80);
        s.samples_per_record =
            static_cast<int>(read_int(bytes, spr_off + 8 * si, 8, "samples_per_record"));
        if (s.samples_per_record < 1)
            throw ParseError("samples_per_record must be >= 1 for signal " + std::to_string(i),
                             spr_off + 8 * si);
    }

    // Data records.
    size_t rec_size = 0;
    for (const auto& s : f.signals) rec_size += static_cast<size_t>(s.samples_per_record) * 2;

    int64_t n_records = h.n_records;
    const size_t avail = bytes.size() - static_cast<size_t>(want_header);
    if (n_records < 0) {
        // Streaming writers leave -1; infer the count from the stream length.
        if (rec_size == 0 || avail % rec_size != 0)
            throw ParseError("cannot infer record count from stream of " + std::to_string(avail) +
                                 " data bytes",
                             bytes.size());
        n_records = rec_size == 0 ? 0 : static_cast<int64_t>(avail / rec_size);
    }
    if (avail < static_cast<size_t>(n_records) * rec_size)
        throw ParseError("truncated data records (need " +
                             std::to_string(static_cast<size_t>(n_records) * rec_size) +
                             " bytes, have " + std::to_string(avail) + ")",
                         bytes.size());

    f.samples.resize(static_cast<size_t>(ns));
    for (int i = 0; i < ns; ++i)
        f.samples[static_cast<size_t>(i)].resize(
            static_cast<size_t>(n_records) *
            static_cast<size_t>(f.signals[static_cast<size_t>(i)].samples_per_record));

    size_t pos = static_cast<size_t>(want_header);
    for (int64_t r = 0; r < n_records; ++r) {
        for (int i = 0; i < ns; ++i) {
            const int spr = f.signals[static_cast<size_t>(i)].samples_per_record;
            int16_t* dst =
                f.samples[static_cast<size_t>(i)].data() + static_cast<size_t>(r) * spr;
            for (int k = 0; k < spr; ++k) {
                uint16_t lo = bytes[pos], hi = bytes[pos + 1];
                dst[k] = static_cast<int16_t>(static_cast<uint16_t>(lo | (hi << 8)));
                pos += 2;
            }
        }
    }
    return f;
}

std::vector<uint8_t> write_edf(const EdfFile& f) {
    const int ns = static_cast<int>(f.signals.size());
    if (f.header.n_signals != ns)
        throw DataError("write_edf: header n_signals " + std::to_string(f.header.n_signals) +
                        " != signal count " + std::to_string(ns));
    if (f.samples.size() != f.signals.size())
        throw DataError("write_edf: sample vector count does not match signal count");
    if (f.header.n_records < 0)
        throw DataError("write_edf: n_records must be >= 0 for a complete file");
    if (f.header.record_duration <= 0)
        throw DataError("write_edf: record_duration must be > 0");
    for (int i = 0; i < ns; ++i) {
        const auto& s = f.signals[static_cast<size_t>(i)];
        if (s.dig_min >= s.dig_max)
            throw DataError("write_edf: dig_min >= dig_max for signal " + std::to_string(i));
        if (s.phys_min == s.phys_max)
            throw DataError("write_edf: phys_min == phys_max for signal " + std::to_string(i));
        const size_t want =
            static_cast<size_t>(f.header.n_records) * static_cast<size_t>(s.samples_per_record);
        if (f.samples[static_cast<size_t>(i)].size() != want)
            throw DataError("write_edf: signal " + std::to_string(i) + " has " +
                            std::to_string(f.samples[static_cast<size_t>(i)].size()) +
                            " samples, record layout needs " + std::to_string(want));
    }

    std::vector<uint8_t> out;
    out.reserve(static_cast<size_t>(kGlobalHeader + ns * kPerSignalHeader));
    write_text(out, f.header.version, kVersionW, "version");
    write_text(out, f.header.patient_id, kPatientW, "patient_id");
    write_text(out, f.header.recording_id, kRecordingW, "recording_id");
    write_text(out, f.header.start_date, kDateW, "start_date");
    write_text(out, f.header.start_time, kTimeW, "start_time");
    write_int(out, kGlobalHeader + ns * kPerSignalHeader, kHeaderBytesW, "header_bytes");
    write_text(out, "", kReservedW, "reserved");
    write_int(out, f.header.n_records, kNRecordsW, "n_records");
    write_double(out, f.header.record_duration, kDurationW, "record_duration");
    write_int(out, ns, kNSignalsW, "n_signals");

    for (const auto& s : f.signals) write_text(out, s.label, 16, "label");
    for (const auto& s : f.signals) write_text(out, s.transducer, 80, "transducer");
    for (const auto& s : f.signals) write_text(out, s.physical_dim, 8, "physical_dim");
    for (const auto& s : f.signals) write_double(out, s.phys_min, 8, "phys_min");
    for (const auto& s : f.signals) write_double(out, s.phys_max, 8, "phys_max");
    for (const auto& s : f.signals) write_int(out, s.dig_min, 8, "dig_min");
    for (const auto& s : f.signals) write_int(out, s.dig_max, 8, "dig_max");
    for (const auto& s : f.signals) write_text(out, s.prefiltering, 80, "prefiltering");
    for (const auto& s : f.signals) write_int(out, s.samples_per_record, 8, "samples_per_record");
    for (int i = 0; i < ns; ++i) write_text(out, "", 32, "reserved");

    for (int64_t r = 0; r < f.header.n_records; ++r) {
        for (int i = 0; i < ns; ++i) {
            const int spr = f.signals[static_cast<size_t>(i)].samples_per_record;
            const int16_t* src =
                f.samples[static_cast<size_t>(i)].data() + static_cast<size_t>(r) * spr;
            for (int k = 0; k < spr; ++k) {
                uint16_t u = static_cast<uint16_t>(src[k]);
                out.push_back(static_cast<uint8_t>(u & 0xff));
                out.push_back(static_cast<uint8_t>(u >> 8));
            }
        }
    }
    return out;
}

double scale_digital(int dig, const SignalHeader& sig, bool* clamped) {
    if (sig.dig_min == sig.dig_max)
        throw DataError("scale_digital: dig_min == dig_max (" + std::to_string(sig.dig_min) +
                        "), calibration undefined");
    if (clamped) *clamped = false;
    if (dig < sig.dig_min) {
        dig = sig.dig_min;
        if (clamped) *clamped = true;
    } else if (dig > sig.dig_max) {
        dig = sig.dig_max;
        if (clamped) *clamped = true;
    }
    return static_cast<double>(dig - sig.dig_min) * (sig.phys_max - sig.phys_min) /
               static_cast<double>(sig.dig_max - sig.dig_min) +
           sig.phys_min;
}

// ---------------------------------------------------------------------------

std::vector<Stage> Hypnogram::to_epochs(double total_s) const {
    const int64_t n = static_cast<int64_t>(std::floor(total_s / kEpochSeconds));
    std::vector<Stage> grid(static_cast<size_t>(std::max<int64_t>(n, 0)), Stage::kExcluded);
    for (const auto& e : entries) {
        int64_t first = std::llround(e.onset_s / kEpochSeconds);
        int64_t count = std::llround(e.duration_s / kEpochSeconds);
        for (int64_t k = std::max<int64_t>(first, 0); k < first + count && k < n; ++k)
            grid[static_cast<size_t>(k)] = e.stage;
    }
    return grid;
}

Hypnogram parse_hypnogram_csv(std::string_view text) {
    Hypnogram h;
    if (trim(text).empty()) return h;

    size_t pos = 0;
    int line_no = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string line = trim(text.substr(pos, eol - pos));
        size_t line_off = pos;
        pos = eol + 1;
        ++line_no;
        if (line.empty()) continue;

        if (!header_seen) {
            std::string l = lower(line);
            l.erase(std::remove_if(l.begin(), l.end(),
                                   [](unsigned char c) { return std::isspace(c); }),
                    l.end());
            if (l != "onset,duration,stage")
                throw ParseError("hypnogram CSV must start with header 'onset,duration,stage', got \"" +
                                     line + "\"",
                                 line_off);
            header_seen = true;
            continue;
        }

        std::string fields[3];
        size_t start = 0;
        for (int i = 0; i < 3; ++i) {
            size_t comma = line.find(',', start);
            if (i < 2) {
                if (comma == std::string::npos)
                    throw ParseError("hypnogram CSV row needs 3 fields: \"" + line + "\"", line_off);
                fields[i] = trim(std::string_view(line).substr(start, comma - start));
                start = comma + 1;
            } else {
                fields[i] = trim(std::string_view(line).substr(start));
            }
        }

        HypnogramEntry e;
        char* end = nullptr;
        e.onset_s = std::strtod(fields[0].c_str(), &end);
        if (fields[0].empty() || *end != '\0')
            throw ParseError("non-numeric onset '" + fields[0] + "'", line_off);
        e.duration_s = std::strtod(fields[1].c_str(), &end);
        if (fields[1].empty() || *end != '\0')
            throw ParseError("non-numeric duration '" + fields[1] + "'", line_off);
        if (!lookup_stage(fields[2], &e.stage)) {
            e.stage = Stage::kExcluded;
            ++h.warnings;
        }
        h.entries.push_back(e);
    }
    std::stable_sort(h.entries.begin(), h.entries.end(),
                     [](const HypnogramEntry& a, const HypnogramEntry& b) {
                         return a.onset_s < b.onset_s;
                     });
    return h;
}

Hypnogram parse_hypnogram_tal(std::span<const uint8_t> bytes) {
    Hypnogram h;
    size_t pos = 0;
    const size_t n = bytes.size();
    while (pos < n) {
        if (bytes[pos] == 0) {  // padding between/after TALs
            ++pos;
            continue;
        }
        size_t tal_start = pos;
        size_t end = pos;
        while (end < n && bytes[end] != 0) ++end;
        std::string_view tal(reinterpret_cast<const char*>(bytes.data()) + pos, end - pos);
        pos = end + 1;

        if (tal.empty() || (tal[0] != '+' && tal[0] != '-'))
            throw ParseError("TAL must start with '+' or '-'", tal_start);

        size_t onset_end = tal.find_first_of("\x14\x15");
        if (onset_end == std::string_view::npos)
            throw ParseError("TAL without 0x14 annotation delimiter", tal_start);

        std::string onset_text = trim(tal.substr(0, onset_end));
        char* num_end = nullptr;
        double onset = std::strtod(onset_text.c_str(), &num_end);
        if (onset_text.empty() || *num_end != '\0')
            throw ParseError("non-numeric TAL onset '" + onset_text + "'", tal_start);

        double duration = kEpochSeconds;
        size_t ann_start = onset_end + 1;
        if (tal[onset_end] == '\x15') {
            size_t dur_end = tal.find('\x14', ann_start);
            if (dur_end == std::string_view::npos)
                throw ParseError("TAL duration without terminating 0x14", tal_start);
            std::string dur_text = trim(tal.substr(ann_start, dur_end - ann_start));
            duration = std::strtod(dur_text.c_str(), &num_end);
            if (dur_text.empty() || *num_end != '\0')
                throw ParseError("non-numeric TAL duration '" + dur_text + "'", tal_start);
            ann_start = dur_end + 1;
        }

        // Remaining: annotations separated by 0x14.
        while (ann_start <= tal.size()) {
            size_t ann_end = tal.find('\x14', ann_start);
            if (ann_end == std::string_view::npos) ann_end = tal.size();
            std::string ann = trim(tal.substr(ann_start, ann_end - ann_start));
            ann_start = ann_end + 1;
            if (ann.empty()) continue;
            Stage s;
            if (lookup_stage(ann, &s))
                h.entries.push_back({onset, duration, s});
            // Non-stage annotations (recording events etc.) are skipped.
        }
    }
    std::stable_sort(h.entries.begin(), h.entries.end(),
                     [](const HypnogramEntry& a, const HypnogramEntry& b) {
                         return a.onset_s < b.onset_s;
                     });
    return h;
}

// ---------------------------------------------------------------------------

Recording to_recording(const EdfFile& f, const Hypnogram& hypno, std::string subject_id,
                       std::string dataset_id, const std::vector<std::string>& channel_filter) {
    Recording rec;
    rec.subject_id = std::move(subject_id);
    rec.dataset_id = std::move(dataset_id);

    for (size_t i = 0; i < f.signals.size(); ++i) {
        const SignalHeader& s = f.signals[i];
        if (s.label == "EDF Annotations") continue;
        if (!channel_filter.empty() &&
            std::find(channel_filter.begin(), channel_filter.end(), s.label) ==
                channel_filter.end())
            continue;

        Channel ch;
        ch.label = s.label;
        ch.rate = s.rate(f.header.record_duration);
        ch.samples.resize(f.samples[i].size());
        for (size_t k = 0; k < f.samples[i].size(); ++k)
            ch.samples[k] = static_cast<float>(scale_digital(f.samples[i][k], s));
        rec.channels.push_back(std::move(ch));
    }
    if (rec.channels.empty()) throw DataError("to_recording: no usable signal channels");

    rec.hypnogram = hypno.to_epochs(rec.duration_s());
    return rec;
}

EdfFile from_recording(const Recording& rec) {
    if (rec.channels.empty()) throw DataError("from_recording: recording has no channels");

    // Pick a record duration that gives every channel a whole number of
    // samples per record and a shared whole record count.
    double record_duration = 0.0;
    int64_t n_records = -1;
    for (double rd : {30.0, 1.0, 10.0, 2.0, 5.0, 0.5}) {
        bool ok = true;
        int64_t nr = -1;
        for (const auto& ch : rec.channels) {
            double spr_f = ch.rate * rd;
            int64_t spr = std::llround(spr_f);
            if (spr < 1 || std::abs(spr_f - static_cast<double>(spr)) > 1e-9) {
                ok = false;
                break;
            }
            if (ch.samples.size() % static_cast<size_t>(spr) != 0) {
                ok = false;
                break;
            }
            int64_t this_nr = static_cast<int64_t>(ch.samples.size()) / spr;
            if (nr >= 0 && this_nr != nr) {
                ok = false;
                break;
            }
            nr = this_nr;
        }
        if (ok && nr >= 0) {
            record_duration = rd;
            n_records = nr;
            break;
        }
    }
    if (n_records < 0)
        throw DataError("from_recording: channel lengths inconsistent with any record layout");

    EdfFile f;
    f.header.version = "0";
    f.header.patient_id = rec.subject_id;
    f.header.recording_id = rec.dataset_id;
    f.header.record_duration = record_duration;
    f.header.n_records = n_records;
    f.header.n_signals = static_cast<int>(rec.channels.size());
    f.header.header_bytes = kGlobalHeader + f.header.n_signals * kPerSignalHeader;

    for (const auto& ch : rec.channels) {
        SignalHeader s;
        s.label = ch.label;
        s.physical_dim = "uV";
        s.samples_per_record = static_cast<int>(std::llround(ch.rate * record_duration));

        float lo = 0.0f, hi = 0.0f;
        if (!ch.samples.empty()) {
            lo = *std::min_element(ch.samples.begin(), ch.samples.end());
            hi = *std::max_element(ch.samples.begin(), ch.samples.end());
        }
        if (lo == hi) hi = lo + 1.0f;
        // The header stores ranges as 8-char ASCII; quantize against the
        // values the text actually parses back to.
        s.phys_min = snap_to_field(lo, 8);
        s.phys_max = snap_to_field(hi, 8);
        if (s.phys_min == s.phys_max) s.phys_max = snap_to_field(s.phys_min + 1.0, 8);
        s.dig_min = -32768;
        s.dig_max = 32767;

        std::vector<int16_t> dig(ch.samples.size());
        const double gain = (s.phys_max - s.phys_min) / (s.dig_max - s.dig_min);
        for (size_t k = 0; k < ch.samples.size(); ++k) {
            double d = (static_cast<double>(ch.samples[k]) - s.phys_min) / gain +
                       static_cast<double>(s.dig_min);
            d = std::clamp(d, static_cast<double>(s.dig_min), static_cast<double>(s.dig_max));
            dig[k] = static_cast<int16_t>(std::llround(d));
        }
        f.signals.push_back(std::move(s));
        f.samples.push_back(std::move(dig));
    }
    return f;
}

std::string hypnogram_to_csv(const std::vector<Stage>& epochs) {
    std::ostringstream os;
    os << "onset,duration,stage\n";
    for (size_t i = 0; i < epochs.size(); ++i)
        os << (static_cast<double>(i) * kEpochSeconds) << "," << kEpochSeconds << ","
           << stage_name(epochs[i]) << "\n";
    return os.str();
}

}  // namespace somn
