#pragma once

#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "somn/model.hpp"
#include "somn/sample.hpp"

namespace somn {

// One dataset of preprocessed samples with a per-subject index. Tasks hold
// raw pointers into `samples`, so the dataset must outlive the tasks drawn
// from it.
struct SampleDataset {
    std::string dataset_id;
    std::vector<Sample> samples;
    // subject -> sample indices, sorted by subject id for determinism.
    std::vector<std::pair<std::string, std::vector<int>>> subjects;

    void index();
    static SampleDataset from_samples(std::string id, std::vector<Sample> samples);
};

// N_s signal/label pairs from a single subject of a single dataset.
struct Task {
    std::string subject_id;
    std::string dataset_id;
    std::vector<const Sample*> pairs;
};

struct TaskBatch {
    std::vector<Task> tasks;
    int k_datasets = 0;
    int n_tasks_per = 0;
};

struct MetaSplit {
    std::vector<Task> train;  // T^tr
    std::vector<Task> val;    // T^val
};

// Uniformly picks a subject, then draws task_size of its samples (without
// replacement when it has enough, with replacement otherwise).
Task sample_task(const SampleDataset& ds, Rng& rng, int task_size = 8);

// n_tasks tasks from each of the K datasets.
TaskBatch sample_task_batch(std::span<const SampleDataset> datasets, int n_tasks, Rng& rng,
                            int task_size = 8);

// Uniform random partition into two equal halves; |T| must be even.
MetaSplit split_meta(const TaskBatch& batch, Rng& rng);

// PhaseSwap: per channel, the spectral magnitude of x recombined with the
// spectral phase of xp through the real FFT, so the output is exactly real.
// All-zero (dummy) channels stay all-zero.
TensorF phase_swap(const TensorF& x, const TensorF& xp);
// Same, but reads the samples' cached spectra.
std::shared_ptr<const TensorF> phase_swap(const Sample& x, const Sample& xp);

struct SslPair {
    std::shared_ptr<const TensorF> x;
    int label = 0;  // 0 = original, 1 = phase-swapped
};

struct SslTask {
    std::vector<SslPair> pairs;
};

// For each (x, y) of t: emit (x, 0) and (phase_swap(x, x'), 1) with the
// partner x' drawn uniformly from the other samples of the same task.
SslTask generate_ssl_task(const Task& t, Rng& rng);

// Loss-op views.
TaskView task_view(const Task& t);
std::vector<TaskView> task_views(std::span<const Task> tasks);
TaskView ssl_task_view(const SslTask& t);
std::vector<TaskView> ssl_task_views(std::span<const SslTask> tasks);

}  // namespace somn
