#pragma once

#include <span>
#include <string>
#include <vector>

#include "somn/experiment.hpp"
#include "somn/sample.hpp"
#include "somn/synth.hpp"

namespace somn {

// A recording to ingest: EDF signals plus a hypnogram sidecar (CSV, or an
// EDF+ file whose annotation track is parsed for stage events).
struct RecordingRef {
    std::string edf;
    std::string hypnogram;
    std::string subject;
    std::string dataset;
};

struct DataConfig {
    std::vector<RecordingRef> recordings;
    std::vector<std::string> channels;      // per-corpus channel selection
    std::vector<std::string> caches;        // sample-cache base paths
};

struct OutputConfig {
    std::string dir = "out";
    bool plots = false;
};

// The whole run configuration; every field has a default and unknown keys are
// rejected, so a config file only states what it changes.
struct RunConfig {
    DataConfig data;
    PrepConfig prep;
    EncoderConfig model = EncoderConfig::paper_default();
    MetaConfig meta;
    ExperimentConfig eval;
    SynthSpec synth;
    OutputConfig output;
};

// Parses a JSON config; missing sections keep defaults, unknown keys raise
// UsageError naming the key.
RunConfig parse_run_config(const std::string& json_text);

// Full defaults-resolved snapshot (the manifest body).
std::string run_config_to_json(const RunConfig& cfg);

// Applies `section.key=value` overrides onto a JSON text (values parsed as
// JSON when possible, else as strings).
std::string apply_config_overrides(const std::string& json_text,
                                   std::span<const std::string> overrides);

// Writes <dir>/manifest.json: command, version, seed and the config snapshot.
void write_manifest(const std::string& dir, const std::string& command, const RunConfig& cfg);

}  // namespace somn
