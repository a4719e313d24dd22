#include "somn/tasks.hpp"

#include <algorithm>
#include <map>

#include "somn/fft.hpp"

namespace somn {

void SampleDataset::index() {
    std::map<std::string, std::vector<int>> by_subject;
    for (size_t i = 0; i < samples.size(); ++i)
        by_subject[samples[i].subject_id].push_back(static_cast<int>(i));
    subjects.assign(by_subject.begin(), by_subject.end());
}

SampleDataset SampleDataset::from_samples(std::string id, std::vector<Sample> s) {
    SampleDataset ds;
    ds.dataset_id = std::move(id);
    ds.samples = std::move(s);
    ds.index();
    return ds;
}

Task sample_task(const SampleDataset& ds, Rng& rng, int task_size) {
    if (task_size < 1) throw UsageError("sample_task: task_size must be >= 1");
    if (ds.subjects.empty())
        throw DataError("sample_task: dataset '" + ds.dataset_id + "' has no subjects");

    const auto& [subject, indices] =
        ds.subjects[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(ds.subjects.size()) - 1))];
    if (indices.empty())
        throw InternalError("sample_task: subject '" + subject + "' has no samples");

    Task t;
    t.subject_id = subject;
    t.dataset_id = ds.dataset_id;
    t.pairs.reserve(static_cast<size_t>(task_size));
    if (static_cast<int>(indices.size()) >= task_size) {
        std::vector<int> pool = indices;
        rng.shuffle(pool.begin(), pool.end());
        for (int i = 0; i < task_size; ++i)
            t.pairs.push_back(&ds.samples[static_cast<size_t>(pool[static_cast<size_t>(i)])]);
    } else {
        for (int i = 0; i < task_size; ++i) {
            int pick = indices[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(indices.size()) - 1))];
            t.pairs.push_back(&ds.samples[static_cast<size_t>(pick)]);
        }
    }
    return t;
}

TaskBatch sample_task_batch(std::span<const SampleDataset> datasets, int n_tasks, Rng& rng,
                            int task_size) {
    if (datasets.empty()) throw DataError("sample_task_batch: no datasets");
    if (n_tasks < 1) throw UsageError("sample_task_batch: n_tasks must be >= 1");
    TaskBatch batch;
    batch.k_datasets = static_cast<int>(datasets.size());
    batch.n_tasks_per = n_tasks;
    batch.tasks.reserve(datasets.size() * static_cast<size_t>(n_tasks));
    for (const auto& ds : datasets)
        for (int i = 0; i < n_tasks; ++i) batch.tasks.push_back(sample_task(ds, rng, task_size));
    return batch;
}

MetaSplit split_meta(const TaskBatch& batch, Rng& rng) {
    const size_t n = batch.tasks.size();
    if (n == 0 || n % 2 != 0)
        throw UsageError("split_meta: task count " + std::to_string(n) +
                         " is not a positive even number");
    std::vector<size_t> perm(n);
    for (size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm.begin(), perm.end());

    MetaSplit split;
    split.train.reserve(n / 2);
    split.val.reserve(n / 2);
    for (size_t i = 0; i < n / 2; ++i) split.train.push_back(batch.tasks[perm[i]]);
    for (size_t i = n / 2; i < n; ++i) split.val.push_back(batch.tasks[perm[i]]);
    return split;
}

namespace {

// Shared combine: |X| of x with the phase of x', Hermitian inverse per
// channel. Spectra are float; the transform runs in double.
TensorF combine_spectra(const SampleSpectra& sx, const SampleSpectra& sp, int channels, int n) {
    if (sx.channels != channels || sp.channels != channels || sx.bins != sp.bins)
        throw ShapeError("phase_swap: spectra shapes differ");

    TensorF out({channels, n});
    const int bins = sx.bins;
    SpectralPair half;
    half.magnitude.resize(static_cast<size_t>(bins));
    half.phase.resize(static_cast<size_t>(bins));
    for (int c = 0; c < channels; ++c) {
        const float* mag = sx.magnitude.data() + static_cast<size_t>(c) * bins;
        const float* ph = sp.phase.data() + static_cast<size_t>(c) * bins;
        bool all_zero = true;
        for (int k = 0; k < bins; ++k) {
            half.magnitude[static_cast<size_t>(k)] = static_cast<double>(mag[k]);
            half.phase[static_cast<size_t>(k)] = static_cast<double>(ph[k]);
            if (mag[k] != 0.0f) all_zero = false;
        }
        float* dst = out.data() + static_cast<size_t>(c) * n;
        if (all_zero) continue;  // dummy channels stay exactly zero
        std::vector<double> row = irfft(half, n);
        for (int i = 0; i < n; ++i) dst[i] = static_cast<float>(row[static_cast<size_t>(i)]);
    }
    return out;
}

SampleSpectra spectra_of(const TensorF& x) {
    SampleSpectra sp;
    sp.channels = x.dim(0);
    const int n = x.dim(1);
    sp.bins = rfft_bins(n);
    sp.magnitude.resize(static_cast<size_t>(sp.channels) * sp.bins);
    sp.phase.resize(static_cast<size_t>(sp.channels) * sp.bins);
    for (int c = 0; c < sp.channels; ++c) {
        std::span<const float> row(x.data() + static_cast<size_t>(c) * n, static_cast<size_t>(n));
        SpectralPair pair = rfft(row);
        for (int k = 0; k < sp.bins; ++k) {
            sp.magnitude[static_cast<size_t>(c) * sp.bins + k] =
                static_cast<float>(pair.magnitude[static_cast<size_t>(k)]);
            sp.phase[static_cast<size_t>(c) * sp.bins + k] =
                static_cast<float>(pair.phase[static_cast<size_t>(k)]);
        }
    }
    return sp;
}

}  // namespace

TensorF phase_swap(const TensorF& x, const TensorF& xp) {
    if (x.rank() != 2 || !x.same_shape(xp))
        throw ShapeError("phase_swap: shapes " + x.shape_str() + " and " + xp.shape_str() +
                         " must match (C,L)");
    SampleSpectra sx = spectra_of(x);
    SampleSpectra sp = spectra_of(xp);
    return combine_spectra(sx, sp, x.dim(0), x.dim(1));
}

std::shared_ptr<const TensorF> phase_swap(const Sample& x, const Sample& xp) {
    if (!x.x || !xp.x || !x.x->same_shape(*xp.x))
        throw ShapeError("phase_swap: sample signal shapes must match");
    const SampleSpectra& sx = sample_spectra(x);
    const SampleSpectra& sp = sample_spectra(xp);
    return std::make_shared<const TensorF>(
        combine_spectra(sx, sp, x.x->dim(0), x.x->dim(1)));
}

SslTask generate_ssl_task(const Task& t, Rng& rng) {
    SslTask out;
    const size_t n = t.pairs.size();
    if (n == 0) return out;
    out.pairs.reserve(2 * n);
    for (size_t i = 0; i < n; ++i) {
        size_t j = i;
        if (n > 1) {
            // Uniform over the other samples of the same task.
            int64_t r = rng.uniform_int(0, static_cast<int64_t>(n) - 2);
            j = static_cast<size_t>(r) + (static_cast<size_t>(r) >= i ? 1 : 0);
        }
        out.pairs.push_back({t.pairs[i]->x, 0});
        out.pairs.push_back({phase_swap(*t.pairs[i], *t.pairs[j]), 1});
    }
    return out;
}

TaskView task_view(const Task& t) {
    TaskView v;
    v.signals.reserve(t.pairs.size());
    v.labels.reserve(t.pairs.size());
    for (const Sample* s : t.pairs) {
        v.signals.push_back(s->x.get());
        v.labels.push_back(s->label);
    }
    return v;
}

std::vector<TaskView> task_views(std::span<const Task> tasks) {
    std::vector<TaskView> out;
    out.reserve(tasks.size());
    for (const auto& t : tasks) out.push_back(task_view(t));
    return out;
}

TaskView ssl_task_view(const SslTask& t) {
    TaskView v;
    v.signals.reserve(t.pairs.size());
    v.labels.reserve(t.pairs.size());
    for (const auto& p : t.pairs) {
        v.signals.push_back(p.x.get());
        v.labels.push_back(p.label);
    }
    return v;
}

std::vector<TaskView> ssl_task_views(std::span<const SslTask> tasks) {
    std::vector<TaskView> out;
    out.reserve(tasks.size());
    for (const auto& t : tasks) out.push_back(ssl_task_view(t));
    return out;
}

}  // namespace somn
