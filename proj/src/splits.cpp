#include "somn/splits.hpp"

#include <algorithm>
#include <cmath>

namespace somn {

SplitPlan subject_split_with_unseen(const SampleDataset& ds,
                                    const std::vector<std::string>& unseen, double ratio,
                                    Rng& rng) {
    if (ratio <= 0.0 || ratio >= 1.0) throw UsageError("subject_split: ratio must be in (0,1)");
    SplitPlan plan;
    plan.unseen_subjects = unseen;
    std::sort(plan.unseen_subjects.begin(), plan.unseen_subjects.end());

    for (const auto& [subject, indices] : ds.subjects) {
        if (std::binary_search(plan.unseen_subjects.begin(), plan.unseen_subjects.end(), subject))
            continue;
        std::vector<int> shuffled = indices;
        rng.shuffle(shuffled.begin(), shuffled.end());
        const int n = static_cast<int>(shuffled.size());
        const int n_train = static_cast<int>(std::llround(ratio * n));
        auto& [train, eval] = plan.seen[subject];
        train.assign(shuffled.begin(), shuffled.begin() + n_train);
        eval.assign(shuffled.begin() + n_train, shuffled.end());
        std::sort(train.begin(), train.end());
        std::sort(eval.begin(), eval.end());
    }
    return plan;
}

SplitPlan subject_split(const SampleDataset& ds, double ratio, Rng& rng) {
    const int n_subjects = static_cast<int>(ds.subjects.size());
    if (n_subjects < 2)
        throw DataError("subject_split: dataset '" + ds.dataset_id +
                        "' needs at least 2 subjects to hold one out");

    const int n_unseen =
        std::max(1, static_cast<int>(std::llround((1.0 - ratio) * n_subjects)));
    if (n_unseen >= n_subjects)
        throw DataError("subject_split: ratio leaves no seen subjects");

    std::vector<std::string> names;
    names.reserve(static_cast<size_t>(n_subjects));
    for (const auto& [subject, idx] : ds.subjects) names.push_back(subject);
    rng.shuffle(names.begin(), names.end());
    names.resize(static_cast<size_t>(n_unseen));
    return subject_split_with_unseen(ds, names, ratio, rng);
}

std::vector<std::vector<std::string>> subject_folds(const SampleDataset& ds, int k, Rng& rng) {
    if (k < 2) throw UsageError("subject_folds: need k >= 2");
    if (static_cast<int>(ds.subjects.size()) < k)
        throw DataError("subject_folds: dataset '" + ds.dataset_id + "' has " +
                        std::to_string(ds.subjects.size()) + " subjects, need >= " +
                        std::to_string(k));
    std::vector<std::string> names;
    for (const auto& [subject, idx] : ds.subjects) names.push_back(subject);
    rng.shuffle(names.begin(), names.end());

    std::vector<std::vector<std::string>> folds(static_cast<size_t>(k));
    for (size_t i = 0; i < names.size(); ++i)
        folds[i % static_cast<size_t>(k)].push_back(names[i]);
    return folds;
}

namespace {
SampleDataset gather(const SampleDataset& ds, const std::vector<int>& indices,
                     const std::string& suffix) {
    std::vector<Sample> samples;
    samples.reserve(indices.size());
    for (int i : indices) samples.push_back(ds.samples[static_cast<size_t>(i)]);
    return SampleDataset::from_samples(ds.dataset_id + suffix, std::move(samples));
}
}  // namespace

SampleDataset train_subset(const SampleDataset& ds, const SplitPlan& plan) {
    std::vector<int> idx;
    for (const auto& [subject, groups] : plan.seen)
        idx.insert(idx.end(), groups.first.begin(), groups.first.end());
    std::sort(idx.begin(), idx.end());
    SampleDataset out = gather(ds, idx, "");
    return out;
}

SampleDataset eval_seen_subset(const SampleDataset& ds, const SplitPlan& plan) {
    std::vector<int> idx;
    for (const auto& [subject, groups] : plan.seen)
        idx.insert(idx.end(), groups.second.begin(), groups.second.end());
    std::sort(idx.begin(), idx.end());
    return gather(ds, idx, "");
}

SampleDataset unseen_subset(const SampleDataset& ds, const SplitPlan& plan) {
    std::vector<int> idx;
    for (const auto& [subject, indices] : ds.subjects)
        if (std::binary_search(plan.unseen_subjects.begin(), plan.unseen_subjects.end(), subject))
            idx.insert(idx.end(), indices.begin(), indices.end());
    std::sort(idx.begin(), idx.end());
    return gather(ds, idx, "");
}

}  // namespace somn
