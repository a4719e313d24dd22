#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "somn/fft.hpp"
#include "somn/metrics.hpp"
#include "somn/splits.hpp"
#include "somn/synth.hpp"

using namespace somn;

namespace {

// Brute-force per-class F1 by direct TP/FP/FN enumeration over label pairs.
F1Scores brute_force_f1(const std::vector<int>& truth, const std::vector<int>& pred) {
    F1Scores out;
    double sum = 0.0;
    for (int c = 0; c < kNumStages; ++c) {
        int64_t tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < truth.size(); ++i) {
            if (truth[i] == c && pred[i] == c) ++tp;
            if (truth[i] != c && pred[i] == c) ++fp;
            if (truth[i] == c && pred[i] != c) ++fn;
        }
        double p = tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp);
        double r = tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn);
        double f1 = p + r == 0.0 ? 0.0 : 2 * p * r / (p + r);
        out.per_class[static_cast<size_t>(c)] = f1;
        sum += f1;
    }
    out.mf1 = sum / kNumStages;
    return out;
}

SampleDataset tiny_dataset(const std::string& id, int subjects, int per_subject, uint64_t seed) {
    Rng rng(seed);
    std::vector<Sample> samples;
    for (int s = 0; s < subjects; ++s)
        for (int i = 0; i < per_subject; ++i) {
            auto x = std::make_shared<TensorF>(std::vector<int>{2, 8});
            for (int64_t k = 0; k < x->numel(); ++k) (*x)[k] = static_cast<float>(rng.normal());
            Sample smp;
            smp.x = std::move(x);
            smp.label = i % kNumStages;
            smp.subject_id = id + "-s" + std::to_string(s);
            smp.dataset_id = id;
            samples.push_back(std::move(smp));
        }
    return SampleDataset::from_samples(id, std::move(samples));
}

}  // namespace

TEST_CASE("a perfectly diagonal confusion matrix scores MF1 = 1") {
    ConfusionMatrix cm;
    for (int c = 0; c < kNumStages; ++c)
        for (int i = 0; i < 7; ++i) cm.add(c, c);
    F1Scores f1 = macro_f1(cm);
    CHECK(f1.mf1 == 1.0);
    for (double v : f1.per_class) CHECK(v == 1.0);
}

TEST_CASE("all-one-class predictions on balanced truth give MF1 = 1/15") {
    ConfusionMatrix cm;
    for (int c = 0; c < kNumStages; ++c)
        for (int i = 0; i < 10; ++i) cm.add(c, 0);
    F1Scores f1 = macro_f1(cm);
    CHECK(f1.per_class[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    for (int c = 1; c < kNumStages; ++c) CHECK(f1.per_class[static_cast<size_t>(c)] == 0.0);
    CHECK(f1.mf1 == doctest::Approx(1.0 / 15.0).epsilon(1e-12));
}

TEST_CASE("macro_f1 agrees exactly with brute-force enumeration on random matrices") {
    Rng rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        int n = static_cast<int>(rng.uniform_int(1, 60));
        std::vector<int> truth, pred;
        // Leave some classes without support to exercise the 0/0 rule.
        int class_cap = static_cast<int>(rng.uniform_int(1, kNumStages));
        for (int i = 0; i < n; ++i) {
            truth.push_back(static_cast<int>(rng.uniform_int(0, class_cap - 1)));
            pred.push_back(static_cast<int>(rng.uniform_int(0, kNumStages - 1)));
        }
        ConfusionMatrix cm = confusion(truth, pred);
        F1Scores fast = macro_f1(cm);
        F1Scores slow = brute_force_f1(truth, pred);
        CHECK(std::abs(fast.mf1 - slow.mf1) <= 1e-12);
        for (int c = 0; c < kNumStages; ++c)
            CHECK(std::abs(fast.per_class[static_cast<size_t>(c)] -
                           slow.per_class[static_cast<size_t>(c)]) <= 1e-12);
        CHECK(cm.total() == n);
        CHECK(fast.mf1 >= 0.0);
        CHECK(fast.mf1 <= 1.0);
    }
}

TEST_CASE("subject_split holds out 25% of subjects and splits the rest 75/25") {
    Rng rng(11);
    SampleDataset ds = tiny_dataset("d", 4, 4, 3);
    SplitPlan plan = subject_split(ds, 0.75, rng);
    CHECK(plan.unseen_subjects.size() == 1);
    CHECK(plan.seen.size() == 3);
    for (const auto& [subject, groups] : plan.seen) {
        CHECK(groups.first.size() == 3);   // train
        CHECK(groups.second.size() == 1);  // eval-seen
    }

    SampleDataset ds8 = tiny_dataset("d8", 8, 4, 4);
    SplitPlan plan8 = subject_split(ds8, 0.75, rng);
    CHECK(plan8.unseen_subjects.size() == 2);
}

TEST_CASE("split groups partition the dataset exactly") {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        SampleDataset ds = tiny_dataset("d", 5, 7, 100 + static_cast<uint64_t>(trial));
        SplitPlan plan = subject_split(ds, 0.75, rng);
        SampleDataset tr = train_subset(ds, plan);
        SampleDataset es = eval_seen_subset(ds, plan);
        SampleDataset un = unseen_subset(ds, plan);
        CHECK(tr.samples.size() + es.samples.size() + un.samples.size() == ds.samples.size());

        // Disjointness via the tensor pointers (shared with the source).
        std::set<const TensorF*> seen_ptrs;
        for (const auto& group : {tr, es, un})
            for (const auto& s : group.samples) CHECK(seen_ptrs.insert(s.x.get()).second);

        // No unseen subject contributes a training sample.
        std::set<std::string> unseen(plan.unseen_subjects.begin(), plan.unseen_subjects.end());
        for (const auto& s : tr.samples) CHECK(!unseen.count(s.subject_id));
        for (const auto& s : es.samples) CHECK(!unseen.count(s.subject_id));
        for (const auto& s : un.samples) CHECK(unseen.count(s.subject_id));
    }
}

TEST_CASE("a single-subject dataset cannot form an unseen split") {
    Rng rng(17);
    SampleDataset ds = tiny_dataset("d", 1, 8, 5);
    CHECK_THROWS_AS((void)subject_split(ds, 0.75, rng), DataError);
}

TEST_CASE("k-fold subject partition covers every subject exactly once") {
    Rng rng(19);
    SampleDataset ds = tiny_dataset("d", 8, 2, 6);
    auto folds = subject_folds(ds, 4, rng);
    REQUIRE(folds.size() == 4);
    std::set<std::string> all;
    size_t total = 0;
    for (const auto& fold : folds) {
        CHECK(fold.size() == 2);
        total += fold.size();
        for (const auto& s : fold) CHECK(all.insert(s).second);
    }
    CHECK(total == 8);

    SampleDataset small = tiny_dataset("s", 3, 2, 7);
    CHECK_THROWS_AS((void)subject_folds(small, 4, rng), DataError);
}

TEST_CASE("synthetic epochs place their FFT peak inside the class band") {
    SynthSpec spec;
    spec.n_datasets = 2;
    spec.subjects_per_dataset = 2;
    spec.recordings_per_subject = 1;
    spec.minutes_per_recording = 3.0;
    Rng rng(23);
    auto recs = synth_generate(spec, rng);
    REQUIRE(recs.size() == 2);

    const int epoch_points = 3072;
    int total = 0, in_band = 0;
    for (const auto& ds : recs) {
        for (const auto& rec : ds) {
            REQUIRE(rec.channels.size() == 9);
            REQUIRE(rec.hypnogram.size() == 6);
            for (size_t e = 0; e < rec.hypnogram.size(); ++e) {
                const auto& sig = spec.classes[static_cast<size_t>(rec.hypnogram[e])];
                for (int c = 0; c < 3; ++c) {  // a channel subset keeps this quick
                    std::span<const float> row(
                        rec.channels[static_cast<size_t>(c)].samples.data() + e * epoch_points,
                        epoch_points);
                    auto sp = somn::rfft(row);
                    size_t peak = 1;
                    for (size_t k = 2; k < sp.bins(); ++k)
                        if (sp.magnitude[k] > sp.magnitude[peak]) peak = k;
                    double f = static_cast<double>(peak) * spec.sample_rate / epoch_points;
                    ++total;
                    if (f >= sig.band_lo - 0.51 && f <= sig.band_hi + 0.51) ++in_band;
                }
            }
        }
    }
    CHECK(total > 0);
    CHECK(static_cast<double>(in_band) >= 0.99 * static_cast<double>(total));
}

TEST_CASE("synthetic generation is bitwise deterministic per seed") {
    SynthSpec spec;
    spec.n_datasets = 1;
    spec.subjects_per_dataset = 1;
    spec.recordings_per_subject = 1;
    spec.minutes_per_recording = 1.5;
    Rng r1(31), r2(31);
    auto a = synth_generate(spec, r1);
    auto b = synth_generate(spec, r2);
    REQUIRE(a.size() == b.size());
    for (size_t d = 0; d < a.size(); ++d) {
        REQUIRE(a[d].size() == b[d].size());
        for (size_t r = 0; r < a[d].size(); ++r) {
            CHECK(a[d][r].hypnogram == b[d][r].hypnogram);
            for (size_t c = 0; c < a[d][r].channels.size(); ++c)
                CHECK(a[d][r].channels[c].samples == b[d][r].channels[c].samples);
        }
    }
}

TEST_CASE("zero datasets yield an empty corpus") {
    SynthSpec spec;
    spec.n_datasets = 0;
    Rng rng(37);
    CHECK(synth_generate(spec, rng).empty());
}

TEST_CASE("a band beyond Nyquist is rejected") {
    SynthSpec spec;
    spec.classes[2].band_hi = 60.0;  // Nyquist is 51.2
    Rng rng(41);
    CHECK_THROWS_AS((void)synth_generate(spec, rng), DataError);
}

TEST_CASE("synth_datasets runs the full prep pipeline into indexed datasets") {
    SynthSpec spec;
    spec.n_datasets = 1;
    spec.subjects_per_dataset = 2;
    spec.recordings_per_subject = 1;
    spec.minutes_per_recording = 3.0;  // 6 epochs -> 2 samples per recording
    Rng rng(43);
    auto datasets = synth_datasets(spec, PrepConfig{}, rng);
    REQUIRE(datasets.size() == 1);
    CHECK(datasets[0].dataset_id == "synth0");
    CHECK(datasets[0].subjects.size() == 2);
    CHECK(datasets[0].samples.size() == 4);
    for (const auto& s : datasets[0].samples) {
        CHECK(s.x->shape() == std::vector<int>{9, 9216});
        CHECK(s.label >= 0);
        CHECK(s.label < kNumStages);
    }
}
