// Command-line surface: prep, synth, train, eval, experiment, gradcheck.
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal
// invariant violation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "somn/checkpoint.hpp"
#include "somn/config.hpp"
#include "somn/edf.hpp"
#include "somn/experiment.hpp"
#include "somn/gradsuite.hpp"
#include "somn/model.hpp"
#include "somn/sample.hpp"
#include "somn/synth.hpp"
#include "somn/tasks.hpp"
#include "somn/train.hpp"

namespace fs = std::filesystem;
using namespace somn;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

std::vector<uint8_t> read_bytes(const std::string& path) {
    std::string s = read_file(path);
    return std::vector<uint8_t>(s.begin(), s.end());
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path);
    os << content;
}

RunConfig load_config(const std::string& config_path, const std::vector<std::string>& sets,
                      const std::string& out_override) {
    std::string text = config_path.empty() ? "{}" : read_file(config_path);
    text = apply_config_overrides(text, sets);
    RunConfig cfg = parse_run_config(text);
    if (!out_override.empty()) cfg.output.dir = out_override;
    return cfg;
}

// Extracts the EDF+ annotation track of a file as raw bytes.
std::vector<uint8_t> annotation_bytes(const EdfFile& f) {
    for (size_t i = 0; i < f.signals.size(); ++i) {
        if (f.signals[i].label != "EDF Annotations") continue;
        std::vector<uint8_t> bytes;
        bytes.reserve(f.samples[i].size() * 2);
        for (int16_t v : f.samples[i]) {
            uint16_t u = static_cast<uint16_t>(v);
            bytes.push_back(static_cast<uint8_t>(u & 0xff));
            bytes.push_back(static_cast<uint8_t>(u >> 8));
        }
        return bytes;
    }
    throw DataError("EDF file has no 'EDF Annotations' signal");
}

Hypnogram load_hypnogram(const std::string& path) {
    if (path.size() > 4 && path.substr(path.size() - 4) == ".edf")
        return parse_hypnogram_tal(annotation_bytes(parse_edf(read_bytes(path))));
    return parse_hypnogram_csv(read_file(path));
}

std::vector<SampleDataset> load_caches(const RunConfig& cfg) {
    if (cfg.data.caches.empty())
        throw UsageError("data.caches must list at least one sample cache");
    std::map<std::string, std::vector<Sample>> by_dataset;
    for (const auto& base : cfg.data.caches)
        for (auto& s : read_sample_cache(base)) by_dataset[s.dataset_id].push_back(std::move(s));
    std::vector<SampleDataset> datasets;
    for (auto& [id, samples] : by_dataset)
        datasets.push_back(SampleDataset::from_samples(id, std::move(samples)));
    return datasets;
}

int cmd_prep(const RunConfig& cfg) {
    if (cfg.data.recordings.empty())
        throw UsageError("prep: data.recordings is empty; nothing to ingest");
    fs::create_directories(cfg.output.dir);

    std::vector<Sample> samples;
    Rng rng(cfg.meta.seed);
    for (size_t i = 0; i < cfg.data.recordings.size(); ++i) {
        const auto& ref = cfg.data.recordings[i];
        EdfFile f = parse_edf(read_bytes(ref.edf));
        Hypnogram hyp = load_hypnogram(ref.hypnogram);
        Recording rec = to_recording(f, hyp, ref.subject, ref.dataset, cfg.data.channels);
        Rng prep_rng = rng.fork({0x9E, static_cast<uint64_t>(i)});
        auto s = preprocess_recording(rec, cfg.prep, prep_rng);
        std::cout << ref.edf << ": " << rec.channels.size() << " channels, "
                  << rec.hypnogram.size() << " epochs -> " << s.size() << " samples";
        if (hyp.warnings) std::cout << " (" << hyp.warnings << " unknown stage tokens)";
        std::cout << "\n";
        samples.insert(samples.end(), std::make_move_iterator(s.begin()),
                       std::make_move_iterator(s.end()));
    }

    const std::string base = cfg.output.dir + "/samples";
    write_sample_cache(base, samples);
    write_manifest(cfg.output.dir, "prep", cfg);
    std::cout << "wrote " << samples.size() << " samples to " << base << ".bin\n";
    return 0;
}

int cmd_synth(const RunConfig& cfg) {
    Rng rng(cfg.meta.seed);
    auto corpora = synth_generate(cfg.synth, rng);
    fs::create_directories(cfg.output.dir);

    std::ostringstream recordings_json;
    recordings_json << "{\n  \"data\": {\n    \"recordings\": [\n";
    bool first = true;
    int64_t files = 0;
    for (const auto& dataset : corpora) {
        for (size_t r = 0; r < dataset.size(); ++r) {
            const Recording& rec = dataset[r];
            fs::path dir = fs::path(cfg.output.dir) / rec.dataset_id;
            fs::create_directories(dir);
            std::string stem = rec.subject_id + "_r" + std::to_string(r % 1000);
            fs::path edf_path = dir / (stem + ".edf");
            fs::path hyp_path = dir / (stem + ".csv");

            auto bytes = write_edf(from_recording(rec));
            std::ofstream os(edf_path, std::ios::binary);
            os.write(reinterpret_cast<const char*>(bytes.data()),
                     static_cast<std::streamsize>(bytes.size()));
            write_file(hyp_path.string(), hypnogram_to_csv(rec.hypnogram));
            ++files;

            if (!first) recordings_json << ",\n";
            first = false;
            recordings_json << "      {\"edf\": \"" << edf_path.string() << "\", \"hypnogram\": \""
                            << hyp_path.string() << "\", \"subject\": \"" << rec.subject_id
                            << "\", \"dataset\": \"" << rec.dataset_id << "\"}";
        }
    }
    recordings_json << "\n    ]\n  },\n  \"output\": {\"dir\": \"" << cfg.output.dir
                    << "/prepped\"}\n}\n";
    write_file(cfg.output.dir + "/prep_config.json", recordings_json.str());
    write_manifest(cfg.output.dir, "synth", cfg);
    std::cout << "wrote " << files << " EDF recordings under " << cfg.output.dir
              << " (prep config: " << cfg.output.dir << "/prep_config.json)\n";
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    auto datasets = load_caches(cfg);
    fs::create_directories(cfg.output.dir);

    TrainAudit audit;
    auto [bundle, history] = train<float>(datasets, cfg.meta, cfg.model, &audit);

    const std::string ckpt = cfg.output.dir + "/model.ckpt";
    save_bundle(ckpt, bundle, cfg.meta.seed, std::string("mode=") +
                                                 train_mode_name(cfg.meta.mode));
    std::ofstream hist(cfg.output.dir + "/history.csv");
    history.write(hist, cfg.meta.mode, cfg.meta.seed);
    write_manifest(cfg.output.dir, "train", cfg);

    std::cout << "trained " << train_mode_name(cfg.meta.mode) << " for "
              << history.records.size() << " updates over " << audit.tasks_sampled
              << " tasks; checkpoint " << ckpt << "\n";
    if (!history.records.empty())
        std::cout << "final outer loss " << history.records.back().loss_out << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint) {
    if (checkpoint.empty()) throw UsageError("eval: --checkpoint is required");
    auto datasets = load_caches(cfg);
    ModelBundle<float> bundle = load_bundle(checkpoint);
    fs::create_directories(cfg.output.dir);

    MetricsReport report;
    for (auto& ds : datasets) {
        EvalCell cell;
        cell.mode = "eval";
        cell.train_on = "";
        cell.dataset = ds.dataset_id;
        cell.split = "all";
        cell.n = static_cast<int64_t>(ds.samples.size());
        cell.f1 = evaluate_samples(bundle, ds.samples);
        std::cout << ds.dataset_id << ": MF1 " << cell.f1.mf1 << " over " << cell.n
                  << " samples\n";
        report.cells.push_back(std::move(cell));
    }
    write_file(cfg.output.dir + "/metrics.csv", report.to_csv());
    if (cfg.output.plots) write_file(cfg.output.dir + "/metrics.svg", report_svg(report));
    write_manifest(cfg.output.dir, "eval", cfg);
    return 0;
}

int cmd_experiment(const RunConfig& cfg) {
    std::vector<SampleDataset> datasets;
    if (!cfg.data.caches.empty()) {
        datasets = load_caches(cfg);
    } else {
        Rng rng(cfg.meta.seed);
        datasets = synth_datasets(cfg.synth, cfg.prep, rng);
        std::cout << "generated " << datasets.size() << " synthetic datasets\n";
    }
    fs::create_directories(cfg.output.dir);

    ExperimentResult result = run_experiment(cfg.eval, datasets);
    write_file(cfg.output.dir + "/report.csv", result.report.to_csv());
    write_file(cfg.output.dir + "/table.csv", result.table_csv);
    if (cfg.output.plots)
        write_file(cfg.output.dir + "/report.svg", report_svg(result.report));
    write_manifest(cfg.output.dir, "experiment", cfg);

    std::cout << result.table_csv;
    std::cout << "report: " << cfg.output.dir << "/report.csv\n";
    return 0;
}

int cmd_gradcheck(int seeds, bool verbose) {
    GradSuiteResult r = run_gradient_suite(seeds, verbose ? &std::cout : nullptr);
    std::cout << "gradcheck: max rel err " << r.max_rel_err << " over " << r.checked
              << " coordinates (" << r.skipped << " skipped near kinks), worst case "
              << r.worst_case << "\n";
    if (r.max_rel_err < 1e-5) return 0;
    std::cerr << "gradcheck FAILED: " << r.max_rel_err << " >= 1e-5\n";
    return 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"somn: sleep-stage meta-learning toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint;
    std::vector<std::string> sets;
    int gc_seeds = 20;
    bool gc_verbose = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration");
        sub->add_option("--set", sets, "override config keys (section.key=value)");
        sub->add_option("--out", out_dir, "output directory (overrides output.dir)");
    };
    add_common(app.add_subcommand("prep", "ingest EDF recordings into a sample cache"));
    add_common(app.add_subcommand("synth", "generate a synthetic EDF corpus"));
    add_common(app.add_subcommand("train", "train a model from sample caches"));
    auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on sample caches");
    add_common(eval_cmd);
    eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    add_common(app.add_subcommand("experiment", "run an evaluation protocol end to end"));
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gc_cmd->add_option("--seeds", gc_seeds, "randomized rounds");
    gc_cmd->add_flag("--verbose", gc_verbose, "per-case reporting");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand("gradcheck")) return cmd_gradcheck(gc_seeds, gc_verbose);

        RunConfig cfg = load_config(config_path, sets, out_dir);
        if (app.got_subcommand("prep")) return cmd_prep(cfg);
        if (app.got_subcommand("synth")) return cmd_synth(cfg);
        if (app.got_subcommand("train")) return cmd_train(cfg);
        if (app.got_subcommand("eval")) return cmd_eval(cfg, checkpoint);
        if (app.got_subcommand("experiment")) return cmd_experiment(cfg);
        throw UsageError("no command selected");
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const InternalError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
}
