#include "somn/config.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "somn/model.hpp"

namespace somn {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& section) {
    if (!j.is_object())
        throw UsageError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw UsageError("unknown config key '" + section + "." + key + "'");
    }
}

std::vector<ConvBlockConfig> parse_branch(const json& arr, const std::string& section) {
    std::vector<ConvBlockConfig> out;
    for (const auto& b : arr) {
        check_keys(b, {"filters", "kernel", "stride", "pool"}, section);
        ConvBlockConfig c;
        c.filters = b.at("filters").get<int>();
        c.kernel = b.at("kernel").get<int>();
        c.stride = b.value("stride", 1);
        c.pool = b.value("pool", 1);
        out.push_back(c);
    }
    return out;
}

json branch_json(const std::vector<ConvBlockConfig>& branch) {
    json arr = json::array();
    for (const auto& b : branch)
        arr.push_back({{"filters", b.filters},
                       {"kernel", b.kernel},
                       {"stride", b.stride},
                       {"pool", b.pool}});
    return arr;
}

OptKind opt_from_name(const std::string& name) {
    if (name == "sgd") return OptKind::kSgd;
    if (name == "adam") return OptKind::kAdam;
    throw UsageError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

const char* opt_name(OptKind k) { return k == OptKind::kSgd ? "sgd" : "adam"; }

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw UsageError(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(j, {"data", "prep", "model", "meta", "eval", "synth", "output"}, "(root)");

    RunConfig cfg;

    if (j.contains("data")) {
        const json& d = j["data"];
        check_keys(d, {"recordings", "channels", "caches"}, "data");
        if (d.contains("recordings"))
            for (const auto& r : d["recordings"]) {
                check_keys(r, {"edf", "hypnogram", "subject", "dataset"}, "data.recordings[]");
                cfg.data.recordings.push_back({r.at("edf").get<std::string>(),
                                               r.at("hypnogram").get<std::string>(),
                                               r.at("subject").get<std::string>(),
                                               r.at("dataset").get<std::string>()});
            }
        if (d.contains("channels"))
            cfg.data.channels = d["channels"].get<std::vector<std::string>>();
        if (d.contains("caches"))
            cfg.data.caches = d["caches"].get<std::vector<std::string>>();
    }

    if (j.contains("prep")) {
        const json& p = j["prep"];
        check_keys(p, {"target_hz", "n_channels", "zscore_eps"}, "prep");
        cfg.prep.target_hz = p.value("target_hz", cfg.prep.target_hz);
        cfg.prep.n_channels = p.value("n_channels", cfg.prep.n_channels);
        cfg.prep.zscore_eps = p.value("zscore_eps", cfg.prep.zscore_eps);
    }
    cfg.prep.channel_filter = cfg.data.channels;

    if (j.contains("model")) {
        const json& m = j["model"];
        check_keys(m, {"preset", "small_branch", "large_branch", "dropout", "in_channels"},
                   "model");
        if (m.contains("preset")) {
            const std::string preset = m["preset"].get<std::string>();
            if (preset == "default")
                cfg.model = EncoderConfig::paper_default();
            else if (preset == "compact")
                cfg.model = EncoderConfig::compact();
            else
                throw UsageError("unknown model.preset '" + preset + "'");
        }
        if (m.contains("small_branch"))
            cfg.model.small_branch = parse_branch(m["small_branch"], "model.small_branch[]");
        if (m.contains("large_branch"))
            cfg.model.large_branch = parse_branch(m["large_branch"], "model.large_branch[]");
        cfg.model.dropout = m.value("dropout", cfg.model.dropout);
        cfg.model.in_channels = m.value("in_channels", cfg.model.in_channels);
    }

    if (j.contains("meta")) {
        const json& m = j["meta"];
        check_keys(m,
                   {"lambda_in", "lambda_out", "n_in", "n_tasks", "task_size", "training_epochs",
                    "max_updates", "mode", "seed", "smoothing", "inner_opt", "outer_opt",
                    "sl_batch", "chunk_rows"},
                   "meta");
        cfg.meta.lambda_in = m.value("lambda_in", cfg.meta.lambda_in);
        cfg.meta.lambda_out = m.value("lambda_out", cfg.meta.lambda_out);
        cfg.meta.n_in = m.value("n_in", cfg.meta.n_in);
        cfg.meta.n_tasks = m.value("n_tasks", cfg.meta.n_tasks);
        cfg.meta.task_size = m.value("task_size", cfg.meta.task_size);
        cfg.meta.training_epochs = m.value("training_epochs", cfg.meta.training_epochs);
        cfg.meta.max_updates = m.value("max_updates", cfg.meta.max_updates);
        if (m.contains("mode")) cfg.meta.mode = train_mode_from_name(m["mode"].get<std::string>());
        cfg.meta.seed = m.value("seed", cfg.meta.seed);
        cfg.meta.smoothing = m.value("smoothing", cfg.meta.smoothing);
        if (m.contains("inner_opt"))
            cfg.meta.inner_opt = opt_from_name(m["inner_opt"].get<std::string>());
        if (m.contains("outer_opt"))
            cfg.meta.outer_opt = opt_from_name(m["outer_opt"].get<std::string>());
        cfg.meta.sl_batch = m.value("sl_batch", cfg.meta.sl_batch);
        cfg.meta.chunk_rows = m.value("chunk_rows", cfg.meta.chunk_rows);
    }

    if (j.contains("eval")) {
        const json& e = j["eval"];
        check_keys(e,
                   {"protocol", "modes", "folds", "seeds", "ratio", "train_subset",
                    "one_vs_all_updates", "lambda_sweep"},
                   "eval");
        if (e.contains("protocol"))
            cfg.eval.protocol = protocol_from_name(e["protocol"].get<std::string>());
        if (e.contains("modes")) {
            cfg.eval.modes.clear();
            for (const auto& m : e["modes"])
                cfg.eval.modes.push_back(train_mode_from_name(m.get<std::string>()));
        }
        cfg.eval.folds = e.value("folds", cfg.eval.folds);
        if (e.contains("seeds")) cfg.eval.seeds = e["seeds"].get<std::vector<uint64_t>>();
        cfg.eval.ratio = e.value("ratio", cfg.eval.ratio);
        cfg.eval.train_subset = e.value("train_subset", cfg.eval.train_subset);
        cfg.eval.one_vs_all_updates =
            e.value("one_vs_all_updates", cfg.eval.one_vs_all_updates);
        if (e.contains("lambda_sweep"))
            cfg.eval.lambda_sweep = e["lambda_sweep"].get<std::vector<double>>();
    }

    if (j.contains("synth")) {
        const json& s = j["synth"];
        check_keys(s,
                   {"n_datasets", "subjects_per_dataset", "recordings_per_subject",
                    "minutes_per_recording", "sample_rate", "channels", "classes", "noise_level",
                    "subject_nuisance", "dataset_nuisance", "band_jitter_hz", "mean_run_epochs"},
                   "synth");
        cfg.synth.n_datasets = s.value("n_datasets", cfg.synth.n_datasets);
        cfg.synth.subjects_per_dataset =
            s.value("subjects_per_dataset", cfg.synth.subjects_per_dataset);
        cfg.synth.recordings_per_subject =
            s.value("recordings_per_subject", cfg.synth.recordings_per_subject);
        cfg.synth.minutes_per_recording =
            s.value("minutes_per_recording", cfg.synth.minutes_per_recording);
        cfg.synth.sample_rate = s.value("sample_rate", cfg.synth.sample_rate);
        cfg.synth.channels = s.value("channels", cfg.synth.channels);
        cfg.synth.noise_level = s.value("noise_level", cfg.synth.noise_level);
        cfg.synth.subject_nuisance = s.value("subject_nuisance", cfg.synth.subject_nuisance);
        cfg.synth.dataset_nuisance = s.value("dataset_nuisance", cfg.synth.dataset_nuisance);
        cfg.synth.band_jitter_hz = s.value("band_jitter_hz", cfg.synth.band_jitter_hz);
        cfg.synth.mean_run_epochs = s.value("mean_run_epochs", cfg.synth.mean_run_epochs);
        if (s.contains("classes")) {
            const json& arr = s["classes"];
            if (arr.size() != kNumStages)
                throw UsageError("synth.classes must list exactly 5 signatures");
            for (size_t c = 0; c < kNumStages; ++c) {
                check_keys(arr[c], {"band_lo", "band_hi", "amplitude", "broadband"},
                           "synth.classes[]");
                auto& sig = cfg.synth.classes[c];
                sig.band_lo = arr[c].value("band_lo", sig.band_lo);
                sig.band_hi = arr[c].value("band_hi", sig.band_hi);
                sig.amplitude = arr[c].value("amplitude", sig.amplitude);
                sig.broadband = arr[c].value("broadband", sig.broadband);
            }
        }
    }

    if (j.contains("output")) {
        const json& o = j["output"];
        check_keys(o, {"dir", "plots"}, "output");
        cfg.output.dir = o.value("dir", cfg.output.dir);
        cfg.output.plots = o.value("plots", cfg.output.plots);
    }

    cfg.eval.meta = cfg.meta;
    cfg.eval.model = cfg.model;
    return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    json recs = json::array();
    for (const auto& r : cfg.data.recordings)
        recs.push_back({{"edf", r.edf},
                        {"hypnogram", r.hypnogram},
                        {"subject", r.subject},
                        {"dataset", r.dataset}});
    j["data"] = {{"recordings", recs},
                 {"channels", cfg.data.channels},
                 {"caches", cfg.data.caches}};
    j["prep"] = {{"target_hz", cfg.prep.target_hz},
                 {"n_channels", cfg.prep.n_channels},
                 {"zscore_eps", cfg.prep.zscore_eps}};
    j["model"] = {{"small_branch", branch_json(cfg.model.small_branch)},
                  {"large_branch", branch_json(cfg.model.large_branch)},
                  {"dropout", cfg.model.dropout},
                  {"in_channels", cfg.model.in_channels}};
    j["meta"] = {{"lambda_in", cfg.meta.lambda_in},
                 {"lambda_out", cfg.meta.lambda_out},
                 {"n_in", cfg.meta.n_in},
                 {"n_tasks", cfg.meta.n_tasks},
                 {"task_size", cfg.meta.task_size},
                 {"training_epochs", cfg.meta.training_epochs},
                 {"max_updates", cfg.meta.max_updates},
                 {"mode", train_mode_name(cfg.meta.mode)},
                 {"seed", cfg.meta.seed},
                 {"smoothing", cfg.meta.smoothing},
                 {"inner_opt", opt_name(cfg.meta.inner_opt)},
                 {"outer_opt", opt_name(cfg.meta.outer_opt)},
                 {"sl_batch", cfg.meta.sl_batch},
                 {"chunk_rows", cfg.meta.chunk_rows}};
    json modes = json::array();
    for (TrainMode m : cfg.eval.modes) modes.push_back(train_mode_name(m));
    j["eval"] = {{"protocol", protocol_name(cfg.eval.protocol)},
                 {"modes", modes},
                 {"folds", cfg.eval.folds},
                 {"seeds", cfg.eval.seeds},
                 {"ratio", cfg.eval.ratio},
                 {"train_subset", cfg.eval.train_subset},
                 {"one_vs_all_updates", cfg.eval.one_vs_all_updates},
                 {"lambda_sweep", cfg.eval.lambda_sweep}};
    json classes = json::array();
    for (const auto& c : cfg.synth.classes)
        classes.push_back({{"band_lo", c.band_lo},
                           {"band_hi", c.band_hi},
                           {"amplitude", c.amplitude},
                           {"broadband", c.broadband}});
    j["synth"] = {{"n_datasets", cfg.synth.n_datasets},
                  {"subjects_per_dataset", cfg.synth.subjects_per_dataset},
                  {"recordings_per_subject", cfg.synth.recordings_per_subject},
                  {"minutes_per_recording", cfg.synth.minutes_per_recording},
                  {"sample_rate", cfg.synth.sample_rate},
                  {"channels", cfg.synth.channels},
                  {"classes", classes},
                  {"noise_level", cfg.synth.noise_level},
                  {"subject_nuisance", cfg.synth.subject_nuisance},
                  {"dataset_nuisance", cfg.synth.dataset_nuisance},
                  {"band_jitter_hz", cfg.synth.band_jitter_hz},
                  {"mean_run_epochs", cfg.synth.mean_run_epochs}};
    j["output"] = {{"dir", cfg.output.dir}, {"plots", cfg.output.plots}};
    return j.dump(2);
}

std::string apply_config_overrides(const std::string& json_text,
                                   std::span<const std::string> overrides) {
    json j;
    try {
        j = json_text.empty() ? json::object() : json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw UsageError(std::string("config is not valid JSON: ") + e.what());
    }
    for (const std::string& ov : overrides) {
        size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw UsageError("override '" + ov + "' is not of the form key.path=value");
        std::string path = ov.substr(0, eq);
        std::string value = ov.substr(eq + 1);

        json* node = &j;
        size_t start = 0;
        while (true) {
            size_t dot = path.find('.', start);
            std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
            if (key.empty()) throw UsageError("override '" + ov + "' has an empty key segment");
            if (dot == std::string::npos) {
                json parsed;
                try {
                    parsed = json::parse(value);
                } catch (const json::parse_error&) {
                    parsed = value;  // plain string
                }
                (*node)[key] = parsed;
                break;
            }
            node = &(*node)[key];
            start = dot + 1;
        }
    }
    return j.dump();
}

void write_manifest(const std::string& dir, const std::string& command, const RunConfig& cfg) {
    std::filesystem::create_directories(dir);
    json j;
    j["tool"] = "somn";
    j["version"] = "0.1.0";
    j["command"] = command;
    j["seed"] = cfg.meta.seed;
    j["config"] = json::parse(run_config_to_json(cfg));
    std::ofstream os(dir + "/manifest.json");
    if (!os) throw DataError("cannot write manifest in " + dir);
    os << j.dump(2) << "\n";
}

}  // namespace somn
