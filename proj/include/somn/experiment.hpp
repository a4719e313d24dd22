#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "somn/metrics.hpp"
#include "somn/splits.hpp"
#include "somn/train.hpp"

namespace somn {

enum class Protocol { kThreeVsFive, kAllVsAll, kOneVsAll, kLambdaSweep };

const char* protocol_name(Protocol p);
Protocol protocol_from_name(std::string_view name);

// One evaluated (dataset x split x mode x fold x seed) cell.
struct EvalCell {
    std::string mode;
    std::string train_on;  // comma-joined training roster
    std::string dataset;   // evaluated dataset
    std::string split;     // "seen" or "unseen"
    int fold = 0;
    uint64_t seed = 0;
    double lambda_in = 0.0;
    int64_t n = 0;  // evaluated samples
    F1Scores f1;
};

struct MetricsReport {
    std::vector<EvalCell> cells;

    // One row per cell: mode,train_on,dataset,split,fold,seed,lambda_in,n,
    // mf1,f1_w,f1_n1,f1_n2,f1_n3,f1_rem
    std::string to_csv() const;

    // Mean MF1 over cells matching the given fields (empty string matches
    // everything; lambda < 0 matches every lambda).
    double mean_mf1(std::string_view mode, std::string_view dataset, std::string_view split,
                    double lambda_in = -1.0) const;
};

struct ExperimentConfig {
    Protocol protocol = Protocol::kThreeVsFive;
    std::vector<TrainMode> modes = {TrainMode::kS2Maml, TrainMode::kMaml, TrainMode::kSl};
    int folds = 4;                     // unseen-subject fold rotation (1 = single split)
    std::vector<uint64_t> seeds = {1};
    double ratio = 0.75;               // subject and sample split ratio
    int train_subset = 3;              // leading datasets trained on (three_vs_five)
    int64_t one_vs_all_updates = 5000; // fixed budget equalizing dataset sizes
    std::vector<double> lambda_sweep = {1e-3, 5e-5};
    MetaConfig meta;                   // mode/seed/lambda overridden per run
    EncoderConfig model = EncoderConfig::paper_default();
};

struct ExperimentResult {
    MetricsReport report;
    std::vector<std::string> train_roster;
    std::vector<std::string> eval_roster;
    // Protocol-shaped summary table (per-mode rows, dataset columns with the
    // seen/unseen averages).
    std::string table_csv;
};

// Runs the protocol end to end: fold rotation, per-mode training with the
// split audit enabled, evaluation of every (dataset, split) cell, and table
// assembly.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                std::span<const SampleDataset> datasets);

// Evaluates a trained bundle on a sample set.
F1Scores evaluate_samples(ModelBundle<float>& bundle, std::span<const Sample> samples,
                          ConfusionMatrix* cm_out = nullptr);

// MF1 bar chart of a report, one bar group per (dataset, split), one bar per
// mode. Static SVG.
std::string report_svg(const MetricsReport& report);

}  // namespace somn
