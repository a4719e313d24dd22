#pragma once

#include <map>
#include <string>
#include <vector>

#include "somn/tasks.hpp"

namespace somn {

// Subject-first split of one dataset: 25% of subjects held out entirely, the
// remaining subjects' samples split 75/25 into train and eval-seen.
struct SplitPlan {
    std::vector<std::string> unseen_subjects;
    // seen subject -> (train sample indices, eval sample indices)
    std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> seen;
};

SplitPlan subject_split(const SampleDataset& ds, double ratio, Rng& rng);

// Subject-split with an explicitly chosen unseen set (the fold rotation of
// cross-validation); the within-seen sample split still follows ratio.
SplitPlan subject_split_with_unseen(const SampleDataset& ds,
                                    const std::vector<std::string>& unseen, double ratio,
                                    Rng& rng);

// Partition subjects into k disjoint folds (each subject unseen exactly
// once). Requires at least k subjects.
std::vector<std::vector<std::string>> subject_folds(const SampleDataset& ds, int k, Rng& rng);

// Materialized split groups (samples are cheap shared-pointer copies).
SampleDataset train_subset(const SampleDataset& ds, const SplitPlan& plan);
SampleDataset eval_seen_subset(const SampleDataset& ds, const SplitPlan& plan);
SampleDataset unseen_subset(const SampleDataset& ds, const SplitPlan& plan);

}  // namespace somn
