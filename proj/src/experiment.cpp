#include "somn/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

namespace somn {

const char* protocol_name(Protocol p) {
    switch (p) {
        case Protocol::kThreeVsFive: return "three_vs_five";
        case Protocol::kAllVsAll: return "all_vs_all";
        case Protocol::kOneVsAll: return "one_vs_all";
        case Protocol::kLambdaSweep: return "lambda_sweep";
    }
    return "three_vs_five";
}

Protocol protocol_from_name(std::string_view name) {
    if (name == "three_vs_five") return Protocol::kThreeVsFive;
    if (name == "all_vs_all") return Protocol::kAllVsAll;
    if (name == "one_vs_all") return Protocol::kOneVsAll;
    if (name == "lambda_sweep") return Protocol::kLambdaSweep;
    throw UsageError("unknown protocol '" + std::string(name) + "'");
}

std::string MetricsReport::to_csv() const {
    std::ostringstream os;
    os << "mode,train_on,dataset,split,fold,seed,lambda_in,n,mf1,f1_w,f1_n1,f1_n2,f1_n3,f1_rem\n";
    char buf[64];
    for (const auto& c : cells) {
        os << c.mode << "," << c.train_on << "," << c.dataset << "," << c.split << "," << c.fold
           << "," << c.seed << ",";
        std::snprintf(buf, sizeof buf, "%.9g", c.lambda_in);
        os << buf << "," << c.n;
        std::snprintf(buf, sizeof buf, "%.6f", c.f1.mf1);
        os << "," << buf;
        for (double v : c.f1.per_class) {
            std::snprintf(buf, sizeof buf, "%.6f", v);
            os << "," << buf;
        }
        os << "\n";
    }
    return os.str();
}

double MetricsReport::mean_mf1(std::string_view mode, std::string_view dataset,
                               std::string_view split, double lambda_in) const {
    double sum = 0.0;
    int64_t n = 0;
    for (const auto& c : cells) {
        if (!mode.empty() && c.mode != mode) continue;
        if (!dataset.empty() && c.dataset != dataset) continue;
        if (!split.empty() && c.split != split) continue;
        if (lambda_in >= 0.0 && c.lambda_in != lambda_in) continue;
        sum += c.f1.mf1;
        ++n;
    }
    if (n == 0) throw UsageError("mean_mf1: no cells match the filter");
    return sum / static_cast<double>(n);
}

F1Scores evaluate_samples(ModelBundle<float>& bundle, std::span<const Sample> samples,
                          ConfusionMatrix* cm_out) {
    std::vector<int> pred = predict(bundle, samples);
    std::vector<int> truth;
    truth.reserve(samples.size());
    for (const auto& s : samples) truth.push_back(s.label);
    ConfusionMatrix cm = confusion(truth, pred);
    if (cm_out) *cm_out = cm;
    return macro_f1(cm);
}

namespace {

struct RunPlan {
    std::vector<SplitPlan> plans;  // per training dataset
    std::vector<SampleDataset> train_sets;
    TrainAudit audit;
};

// Subject-level split for every training dataset of one fold.
RunPlan make_fold_plan(std::span<const SampleDataset> datasets,
                       const std::vector<int>& train_idx, const ExperimentConfig& cfg,
                       uint64_t seed, int fold) {
    RunPlan rp;
    for (int i : train_idx) {
        const SampleDataset& ds = datasets[static_cast<size_t>(i)];
        Rng fold_rng = Rng(seed).fork({0xF0, static_cast<uint64_t>(fold),
                                       static_cast<uint64_t>(i)});
        SplitPlan plan;
        if (cfg.folds <= 1) {
            plan = subject_split(ds, cfg.ratio, fold_rng);
        } else {
            Rng fold_assign = Rng(seed).fork({0xFA, static_cast<uint64_t>(i)});
            auto folds = subject_folds(ds, cfg.folds, fold_assign);
            plan = subject_split_with_unseen(ds, folds[static_cast<size_t>(fold)], cfg.ratio,
                                             fold_rng);
        }
        SampleDataset tr = train_subset(ds, plan);
        for (const auto& [subject, idx] : tr.subjects)
            rp.audit.allowed.insert({tr.dataset_id, subject});
        rp.plans.push_back(std::move(plan));
        rp.train_sets.push_back(std::move(tr));
    }
    return rp;
}

std::string join_ids(std::span<const SampleDataset> datasets, const std::vector<int>& idx) {
    std::string out;
    for (size_t i = 0; i < idx.size(); ++i)
        out += (i ? "+" : "") + datasets[static_cast<size_t>(idx[i])].dataset_id;
    return out;
}

struct CellKey {
    std::string dataset, split;
};

// Trains one (mode, fold, seed) run and appends the evaluation cells.
void run_one(const ExperimentConfig& cfg, std::span<const SampleDataset> datasets,
             const std::vector<int>& train_idx, const std::vector<int>& heldout_idx,
             TrainMode mode, uint64_t seed, int fold, double lambda_in, int64_t max_updates,
             MetricsReport& report, bool include_seen = true) {
    RunPlan rp = make_fold_plan(datasets, train_idx, cfg, seed, fold);

    MetaConfig meta = cfg.meta;
    meta.mode = mode;
    meta.lambda_in = lambda_in > 0 ? lambda_in : cfg.meta.lambda_in;
    if (max_updates > 0) meta.max_updates = max_updates;
    meta.seed = Rng(seed).fork({0x7E, static_cast<uint64_t>(fold),
                                static_cast<uint64_t>(mode), static_cast<uint64_t>(fold)})
                    .seed();

    auto [bundle, history] = train<float>(rp.train_sets, meta, cfg.model, &rp.audit);
    (void)history;

    const std::string train_on = join_ids(datasets, train_idx);
    auto push_cell = [&](const SampleDataset& eval_set, const std::string& dataset_id,
                         const std::string& split) {
        if (eval_set.samples.empty()) return;
        EvalCell cell;
        cell.mode = train_mode_name(mode);
        cell.train_on = train_on;
        cell.dataset = dataset_id;
        cell.split = split;
        cell.fold = fold;
        cell.seed = seed;
        cell.lambda_in = meta.lambda_in;
        cell.n = static_cast<int64_t>(eval_set.samples.size());
        cell.f1 = evaluate_samples(bundle, eval_set.samples);
        report.cells.push_back(std::move(cell));
    };

    for (size_t j = 0; j < train_idx.size(); ++j) {
        const SampleDataset& ds = datasets[static_cast<size_t>(train_idx[j])];
        if (include_seen) push_cell(eval_seen_subset(ds, rp.plans[j]), ds.dataset_id, "seen");
        push_cell(unseen_subset(ds, rp.plans[j]), ds.dataset_id, "unseen");
    }
    for (int i : heldout_idx) {
        const SampleDataset& ds = datasets[static_cast<size_t>(i)];
        push_cell(ds, ds.dataset_id, "unseen");
    }
}

std::string fmt_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

// Mean over matching cells, or NaN when the split produced no samples (tiny
// subjects can leave an eval group empty).
double mean_or_nan(const MetricsReport& rep, const std::string& mode, const std::string& dataset,
                   const std::string& split, double lambda = -1.0) {
    try {
        return rep.mean_mf1(mode, dataset, split, lambda);
    } catch (const UsageError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

std::string fmt_cell(double v) { return std::isnan(v) ? std::string() : fmt_pct(v); }

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                std::span<const SampleDataset> datasets) {
    if (cfg.folds < 1) throw UsageError("run_experiment: folds must be >= 1");
    if (cfg.seeds.empty()) throw UsageError("run_experiment: need at least one seed");
    if (cfg.modes.empty()) throw UsageError("run_experiment: need at least one mode");
    const int n = static_cast<int>(datasets.size());

    ExperimentResult result;
    for (const auto& ds : datasets) result.eval_roster.push_back(ds.dataset_id);

    const bool sweep = cfg.protocol == Protocol::kLambdaSweep;
    if (cfg.protocol == Protocol::kThreeVsFive || sweep) {
        if (n < cfg.train_subset + 1 || n < 5)
            throw UsageError("run_experiment: three_vs_five needs >= 5 datasets (got " +
                             std::to_string(n) + ")");
        std::vector<int> train_idx, heldout_idx;
        for (int i = 0; i < cfg.train_subset; ++i) train_idx.push_back(i);
        for (int i = cfg.train_subset; i < n; ++i) heldout_idx.push_back(i);
        for (int i : train_idx)
            result.train_roster.push_back(datasets[static_cast<size_t>(i)].dataset_id);

        // The sweep re-runs the protocol per lambda for the two meta modes;
        // the plain run uses the configured lambda for every mode.
        std::vector<double> lambdas = sweep ? cfg.lambda_sweep : std::vector<double>{-1.0};
        std::vector<TrainMode> modes = cfg.modes;
        if (sweep) {
            modes.clear();
            for (TrainMode m : cfg.modes)
                if (m != TrainMode::kSl) modes.push_back(m);
            if (modes.empty())
                throw UsageError("lambda_sweep: needs at least one meta mode");
        }

        for (double lambda : lambdas)
            for (uint64_t seed : cfg.seeds)
                for (int fold = 0; fold < cfg.folds; ++fold)
                    for (TrainMode mode : modes)
                        run_one(cfg, datasets, train_idx, heldout_idx, mode, seed, fold, lambda,
                                0, result.report);
    } else if (cfg.protocol == Protocol::kAllVsAll) {
        if (n < 1) throw UsageError("run_experiment: all_vs_all needs >= 1 dataset");
        std::vector<int> train_idx;
        for (int i = 0; i < n; ++i) train_idx.push_back(i);
        result.train_roster = result.eval_roster;
        for (uint64_t seed : cfg.seeds)
            for (int fold = 0; fold < cfg.folds; ++fold)
                for (TrainMode mode : cfg.modes)
                    run_one(cfg, datasets, train_idx, {}, mode, seed, fold, -1.0, 0,
                            result.report);
    } else {  // one_vs_all
        if (n < 5)
            throw UsageError("run_experiment: one_vs_all needs >= 5 datasets (got " +
                             std::to_string(n) + ")");
        result.train_roster = result.eval_roster;
        for (uint64_t seed : cfg.seeds)
            for (int fold = 0; fold < cfg.folds; ++fold)
                for (int t = 0; t < n; ++t) {
                    std::vector<int> train_idx = {t};
                    std::vector<int> heldout_idx;
                    for (int i = 0; i < n; ++i)
                        if (i != t) heldout_idx.push_back(i);
                    for (TrainMode mode : cfg.modes)
                        run_one(cfg, datasets, train_idx, heldout_idx, mode, seed, fold, -1.0,
                                cfg.one_vs_all_updates, result.report,
                                /*include_seen=*/false);
                }
    }

    // ----- protocol-shaped table -----
    std::ostringstream table;
    const auto& rep = result.report;
    if (cfg.protocol == Protocol::kThreeVsFive || sweep) {
        std::vector<std::string> train_ds = result.train_roster;
        std::vector<std::string> heldout_ds(result.eval_roster.begin() + cfg.train_subset,
                                            result.eval_roster.end());
        table << "mode";
        if (sweep) table << ",lambda_in";
        for (const auto& d : train_ds) table << "," << d << "(S)";
        table << ",Avg(S)";
        for (const auto& d : train_ds) table << "," << d << "(U)";
        table << ",Avg(U1)";
        for (const auto& d : heldout_ds) table << "," << d << "(U)";
        table << ",Avg(U2),Avg(U)\n";

        std::set<std::string> mode_names;
        for (const auto& c : rep.cells) mode_names.insert(c.mode);
        std::vector<double> lambdas_seen;
        for (const auto& c : rep.cells)
            if (std::find(lambdas_seen.begin(), lambdas_seen.end(), c.lambda_in) ==
                lambdas_seen.end())
                lambdas_seen.push_back(c.lambda_in);

        for (TrainMode m : cfg.modes) {
            const std::string mode = train_mode_name(m);
            if (!mode_names.count(mode)) continue;
            for (double lambda : lambdas_seen) {
                bool has = false;
                for (const auto& c : rep.cells)
                    if (c.mode == mode && c.lambda_in == lambda) has = true;
                if (!has) continue;

                table << mode;
                if (sweep) table << "," << lambda;
                double avg_s = 0, avg_u1 = 0, avg_u2 = 0;
                for (const auto& d : train_ds) {
                    double v = mean_or_nan(rep, mode, d, "seen", lambda);
                    avg_s += v;
                    table << "," << fmt_cell(v);
                }
                avg_s /= static_cast<double>(train_ds.size());
                table << "," << fmt_cell(avg_s);
                for (const auto& d : train_ds) {
                    double v = mean_or_nan(rep, mode, d, "unseen", lambda);
                    avg_u1 += v;
                    table << "," << fmt_cell(v);
                }
                avg_u1 /= static_cast<double>(train_ds.size());
                table << "," << fmt_cell(avg_u1);
                for (const auto& d : heldout_ds) {
                    double v = mean_or_nan(rep, mode, d, "unseen", lambda);
                    avg_u2 += v;
                    table << "," << fmt_cell(v);
                }
                avg_u2 /= static_cast<double>(heldout_ds.size());
                double avg_u = (avg_u1 * static_cast<double>(train_ds.size()) +
                                avg_u2 * static_cast<double>(heldout_ds.size())) /
                               static_cast<double>(train_ds.size() + heldout_ds.size());
                table << "," << fmt_cell(avg_u2) << "," << fmt_cell(avg_u) << "\n";
            }
        }
    } else if (cfg.protocol == Protocol::kAllVsAll) {
        table << "mode,split";
        for (const auto& d : result.eval_roster) table << "," << d;
        table << ",Avg\n";
        for (TrainMode m : cfg.modes) {
            const std::string mode = train_mode_name(m);
            for (const std::string split : {"seen", "unseen"}) {
                table << mode << "," << split;
                double avg = 0;
                for (const auto& d : result.eval_roster) {
                    double v = mean_or_nan(rep, mode, d, split);
                    avg += v;
                    table << "," << fmt_cell(v);
                }
                table << "," << fmt_cell(avg / static_cast<double>(result.eval_roster.size()))
                      << "\n";
            }
        }
    } else {
        table << "train,mode";
        for (const auto& d : result.eval_roster) table << "," << d;
        table << "\n";
        for (const auto& t : result.train_roster) {
            for (TrainMode m : cfg.modes) {
                const std::string mode = train_mode_name(m);
                table << t << "," << mode;
                for (const auto& d : result.eval_roster) {
                    // Diagonal cells are unseen subjects of the training set;
                    // off-diagonal cells are fully held-out datasets.
                    double sum = 0;
                    int64_t cnt = 0;
                    for (const auto& c : rep.cells)
                        if (c.mode == mode && c.train_on == t && c.dataset == d &&
                            c.split == "unseen") {
                            sum += c.f1.mf1;
                            ++cnt;
                        }
                    table << "," << (cnt ? fmt_pct(sum / static_cast<double>(cnt)) : "");
                }
                table << "\n";
            }
        }
    }
    result.table_csv = table.str();
    return result;
}

std::string report_svg(const MetricsReport& report) {
    // Grouped bars: one group per (dataset, split), one bar per mode.
    std::vector<std::string> groups, modes;
    for (const auto& c : report.cells) {
        std::string g = c.dataset + "(" + (c.split == "seen" ? "S" : "U") + ")";
        if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
        if (std::find(modes.begin(), modes.end(), c.mode) == modes.end()) modes.push_back(c.mode);
    }
    const char* palette[] = {"#4c78a8", "#f58518", "#54a24b", "#b279a2"};
    const int bar_w = 18, group_gap = 24, h = 320, base = 280, left = 50;
    const int group_w = static_cast<int>(modes.size()) * bar_w + group_gap;
    const int w = left + static_cast<int>(groups.size()) * group_w + 40;

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
       << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
    for (int tick = 0; tick <= 10; tick += 2) {
        int y = base - tick * 25;
        os << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << w - 10 << "\" y2=\"" << y
           << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"8\" y=\"" << y + 3 << "\">" << tick / 10.0 << "</text>\n";
    }
    for (size_t g = 0; g < groups.size(); ++g) {
        for (size_t m = 0; m < modes.size(); ++m) {
            double sum = 0;
            int64_t cnt = 0;
            for (const auto& c : report.cells) {
                std::string cg = c.dataset + "(" + (c.split == "seen" ? "S" : "U") + ")";
                if (cg == groups[g] && c.mode == modes[m]) {
                    sum += c.f1.mf1;
                    ++cnt;
                }
            }
            if (!cnt) continue;
            double v = sum / static_cast<double>(cnt);
            int x = left + static_cast<int>(g) * group_w + static_cast<int>(m) * bar_w;
            int bh = static_cast<int>(v * 250);
            os << "<rect x=\"" << x << "\" y=\"" << base - bh << "\" width=\"" << bar_w - 3
               << "\" height=\"" << bh << "\" fill=\"" << palette[m % 4] << "\"/>\n";
        }
        int x = left + static_cast<int>(g) * group_w;
        os << "<text x=\"" << x << "\" y=\"" << base + 14 << "\">" << groups[g] << "</text>\n";
    }
    for (size_t m = 0; m < modes.size(); ++m)
        os << "<rect x=\"" << left + static_cast<int>(m) * 90 << "\" y=\"10\" width=\"12\" "
           << "height=\"12\" fill=\"" << palette[m % 4] << "\"/><text x=\""
           << left + static_cast<int>(m) * 90 + 16 << "\" y=\"20\">" << modes[m] << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

}  // namespace somn
