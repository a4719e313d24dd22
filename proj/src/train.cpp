#include "somn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

namespace somn {

const char* train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::kS2Maml: return "s2maml";
        case TrainMode::kMaml: return "maml";
        case TrainMode::kSl: return "sl";
    }
    return "sl";
}

TrainMode train_mode_from_name(std::string_view name) {
    if (name == "s2maml") return TrainMode::kS2Maml;
    if (name == "maml") return TrainMode::kMaml;
    if (name == "sl") return TrainMode::kSl;
    throw UsageError("unknown training mode '" + std::string(name) +
                     "' (expected s2maml, maml or sl)");
}

void MetaConfig::validate() const {
    if (lambda_in <= 0 || lambda_out <= 0) throw UsageError("learning rates must be > 0");
    if (n_in < 0) throw UsageError("n_in must be >= 0");
    if (n_tasks < 1 || task_size < 1) throw UsageError("n_tasks and task_size must be >= 1");
    if (training_epochs < 1 && max_updates == 0)
        throw UsageError("either training_epochs or max_updates must set a budget");
    if (max_updates < 0) throw UsageError("max_updates must be >= 0");
    if (smoothing < 0 || smoothing >= 1) throw UsageError("smoothing must be in [0, 1)");
    if (sl_batch < 1) throw UsageError("sl_batch must be >= 1");
    if (chunk_rows < 1) throw UsageError("chunk_rows must be >= 1");
}

void TrainHistory::write(std::ostream& os, TrainMode mode, uint64_t seed) const {
    char buf[64];
    for (const auto& r : records) {
        os << r.iter << ",";
        if (!std::isnan(r.loss_in)) {
            std::snprintf(buf, sizeof buf, "%.17g", r.loss_in);
            os << buf;
        }
        std::snprintf(buf, sizeof buf, "%.17g", r.loss_out);
        os << "," << buf << "," << train_mode_name(mode) << "," << seed << "\n";
    }
}

// ---------------------------------------------------------------------------

template <typename T>
ParamSet<T> inner_loop(const ParamSet<T>& encoder, ParamSet<T>& inner_head,
                       MetaObjective<T>& obj, std::span<const Task> t_tr, double lambda_in,
                       int n_in, Rng& rng, double* inner_loss, OptKind opt) {
    ParamSet<T> adapted = copy_params(encoder);
    double last = std::numeric_limits<double>::quiet_NaN();

    // Adam state, when selected, lives only for this adaptation.
    AdamState<T> enc_state, head_state;
    for (int i = 0; i < n_in; ++i) {
        adapted.zero_grads();
        inner_head.zero_grads();
        last = obj.inner_grad(adapted, inner_head, t_tr, rng);
        if (opt == OptKind::kSgd) {
            sgd_step(adapted, static_cast<T>(lambda_in));
            sgd_step(inner_head, static_cast<T>(lambda_in));
        } else {
            adam_step(adapted, enc_state, static_cast<T>(lambda_in));
            adam_step(inner_head, head_state, static_cast<T>(lambda_in));
        }
    }
    if (inner_loss) *inner_loss = last;
    return adapted;
}

template <typename T>
double outer_step(ParamSet<T>& encoder, ParamSet<T>& sl_head, ParamSet<T>& adapted_encoder,
                  MetaObjective<T>& obj, std::span<const Task> t_val, double lambda_out,
                  OptKind opt, AdamState<T>& encoder_state, AdamState<T>& head_state, Rng& rng) {
    adapted_encoder.zero_grads();
    sl_head.zero_grads();
    const double loss = obj.outer_grad(adapted_encoder, sl_head, t_val, rng);

    // First-order rule: the gradient evaluated at the adapted point drives
    // the source parameters.
    encoder.zero_grads();
    encoder.add_grads_from(adapted_encoder);
    if (opt == OptKind::kSgd) {
        sgd_step(encoder, static_cast<T>(lambda_out));
        sgd_step(sl_head, static_cast<T>(lambda_out));
    } else {
        adam_step(encoder, encoder_state, static_cast<T>(lambda_out));
        adam_step(sl_head, head_state, static_cast<T>(lambda_out));
    }
    return loss;
}

// ---------------------------------------------------------------------------

template <typename T>
double SleepnetObjective<T>::inner_grad(ParamSet<T>& encoder, ParamSet<T>& inner_head,
                                        std::span<const Task> t_tr, Rng& rng) {
    if (mode_ == TrainMode::kS2Maml) {
        std::vector<SslTask> ssl;
        ssl.reserve(t_tr.size());
        for (const auto& t : t_tr) ssl.push_back(generate_ssl_task(t, rng));
        auto views = ssl_task_views(ssl);
        return task_loss(cfg_, encoder, inner_head, kSslClasses, views, smoothing_, true, &rng,
                         true, chunk_rows_);
    }
    auto views = task_views(t_tr);
    return task_loss(cfg_, encoder, inner_head, kSlClasses, views, smoothing_, true, &rng, true,
                     chunk_rows_);
}

template <typename T>
double SleepnetObjective<T>::outer_grad(ParamSet<T>& encoder, ParamSet<T>& sl_head,
                                        std::span<const Task> t_val, Rng& rng) {
    auto views = task_views(t_val);
    return task_loss(cfg_, encoder, sl_head, kSlClasses, views, smoothing_, true, &rng, true,
                     chunk_rows_);
}

// ---------------------------------------------------------------------------

namespace {

void audit_batch(const TaskBatch& batch, TrainAudit* audit) {
    if (!audit) return;
    audit->tasks_sampled += static_cast<int64_t>(batch.tasks.size());
    if (audit->allowed.empty()) return;
    for (const auto& t : batch.tasks)
        if (!audit->allowed.count({t.dataset_id, t.subject_id}))
            throw InternalError("split audit: task drawn from out-of-split subject '" +
                                t.subject_id + "' of dataset '" + t.dataset_id + "'");
}

int infer_input_len(std::span<const SampleDataset> datasets) {
    for (const auto& ds : datasets)
        if (!ds.samples.empty()) return ds.samples.front().x->dim(1);
    return kSamplePoints;
}

template <typename T>
std::pair<ModelBundle<T>, TrainHistory> train_sl(std::span<const SampleDataset> datasets,
                                                 const MetaConfig& cfg,
                                                 const EncoderConfig& model_cfg,
                                                 TrainAudit* audit) {
    Rng rng(cfg.seed);
    ModelBundle<T> bundle = init_model<T>(model_cfg, rng, infer_input_len(datasets));

    std::vector<const Sample*> pool;
    for (const auto& ds : datasets)
        for (const auto& s : ds.samples) pool.push_back(&s);
    if (pool.empty()) throw DataError("train: no samples in the datasets");
    if (audit && !audit->allowed.empty())
        for (const Sample* s : pool)
            if (!audit->allowed.count({s->dataset_id, s->subject_id}))
                throw InternalError("split audit: pooled sample from out-of-split subject '" +
                                    s->subject_id + "'");

    const int64_t per_epoch =
        (static_cast<int64_t>(pool.size()) + cfg.sl_batch - 1) / cfg.sl_batch;
    const int64_t budget = cfg.max_updates > 0
                               ? cfg.max_updates
                               : per_epoch * static_cast<int64_t>(cfg.training_epochs);

    AdamState<T> enc_state, head_state;
    TrainHistory history;
    int64_t iter = 0;
    const auto t0 = std::chrono::steady_clock::now();
    while (iter < budget) {
        rng.shuffle(pool.begin(), pool.end());
        for (size_t base = 0; base < pool.size() && iter < budget;
             base += static_cast<size_t>(cfg.sl_batch)) {
            const size_t end = std::min(pool.size(), base + static_cast<size_t>(cfg.sl_batch));
            TaskView batch;
            for (size_t i = base; i < end; ++i) {
                batch.signals.push_back(pool[i]->x.get());
                batch.labels.push_back(pool[i]->label);
            }
            bundle.encoder.zero_grads();
            bundle.sl_head.zero_grads();
            double loss = task_loss(bundle.config, bundle.encoder, bundle.sl_head, kSlClasses,
                                    std::span<const TaskView>(&batch, 1), cfg.smoothing, true,
                                    &rng, true, cfg.chunk_rows);
            if (cfg.outer_opt == OptKind::kSgd) {
                sgd_step(bundle.encoder, static_cast<T>(cfg.lambda_out));
                sgd_step(bundle.sl_head, static_cast<T>(cfg.lambda_out));
            } else {
                adam_step(bundle.encoder, enc_state, static_cast<T>(cfg.lambda_out));
                adam_step(bundle.sl_head, head_state, static_cast<T>(cfg.lambda_out));
            }
            ++iter;
            history.records.push_back(
                {iter, std::numeric_limits<double>::quiet_NaN(), loss,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
        }
    }
    return {std::move(bundle), std::move(history)};
}

}  // namespace

template <typename T>
std::pair<ModelBundle<T>, TrainHistory> train(std::span<const SampleDataset> datasets,
                                              const MetaConfig& cfg,
                                              const EncoderConfig& model_cfg,
                                              TrainAudit* audit) {
    cfg.validate();
    if (datasets.empty()) throw DataError("train: no datasets");
    for (const auto& ds : datasets)
        if (ds.subjects.empty())
            throw DataError("train: dataset '" + ds.dataset_id + "' has no subjects");

    if (cfg.mode == TrainMode::kSl) return train_sl<T>(datasets, cfg, model_cfg, audit);

    Rng rng(cfg.seed);
    ModelBundle<T> bundle = init_model<T>(model_cfg, rng, infer_input_len(datasets));
    SleepnetObjective<T> objective(model_cfg, cfg.mode, cfg.smoothing, cfg.chunk_rows);

    int64_t total_samples = 0;
    for (const auto& ds : datasets) total_samples += static_cast<int64_t>(ds.samples.size());
    const int64_t per_iter = static_cast<int64_t>(datasets.size()) * cfg.n_tasks * cfg.task_size;
    const int64_t per_epoch = std::max<int64_t>(1, (total_samples + per_iter - 1) / per_iter);
    const int64_t budget = cfg.max_updates > 0
                               ? cfg.max_updates
                               : per_epoch * static_cast<int64_t>(cfg.training_epochs);

    const int64_t batch_count =
        static_cast<int64_t>(datasets.size()) * static_cast<int64_t>(cfg.n_tasks);
    if (batch_count % 2 != 0)
        throw UsageError("train: K*n_tasks = " + std::to_string(batch_count) +
                         " must be even for the meta split");

    AdamState<T> enc_state, head_state;
    TrainHistory history;
    const auto t0 = std::chrono::steady_clock::now();
    for (int64_t iter = 0; iter < budget; ++iter) {
        TaskBatch batch = sample_task_batch(datasets, cfg.n_tasks, rng, cfg.task_size);
        audit_batch(batch, audit);
        MetaSplit split = split_meta(batch, rng);

        ParamSet<T>& inner_head =
            cfg.mode == TrainMode::kS2Maml ? bundle.ssl_head : bundle.sl_head;
        double loss_in = std::numeric_limits<double>::quiet_NaN();
        ParamSet<T> adapted = inner_loop(bundle.encoder, inner_head, objective, split.train,
                                         cfg.lambda_in, cfg.n_in, rng, &loss_in, cfg.inner_opt);
        double loss_out = outer_step(bundle.encoder, bundle.sl_head, adapted, objective,
                                     split.val, cfg.lambda_out, cfg.outer_opt, enc_state,
                                     head_state, rng);
        if (audit) ++audit->outer_iterations;
        history.records.push_back(
            {iter + 1, loss_in, loss_out,
             std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
    }
    return {std::move(bundle), std::move(history)};
}

template class SleepnetObjective<float>;
template class SleepnetObjective<double>;

template ParamSet<float> inner_loop<float>(const ParamSet<float>&, ParamSet<float>&,
                                           MetaObjective<float>&, std::span<const Task>, double,
                                           int, Rng&, double*, OptKind);
template ParamSet<double> inner_loop<double>(const ParamSet<double>&, ParamSet<double>&,
                                             MetaObjective<double>&, std::span<const Task>,
                                             double, int, Rng&, double*, OptKind);
template double outer_step<float>(ParamSet<float>&, ParamSet<float>&, ParamSet<float>&,
                                  MetaObjective<float>&, std::span<const Task>, double, OptKind,
                                  AdamState<float>&, AdamState<float>&, Rng&);
template double outer_step<double>(ParamSet<double>&, ParamSet<double>&, ParamSet<double>&,
                                   MetaObjective<double>&, std::span<const Task>, double,
                                   OptKind, AdamState<double>&, AdamState<double>&, Rng&);
template std::pair<ModelBundle<float>, TrainHistory> train<float>(std::span<const SampleDataset>,
                                                                  const MetaConfig&,
                                                                  const EncoderConfig&,
                                                                  TrainAudit*);
template std::pair<ModelBundle<double>, TrainHistory> train<double>(
    std::span<const SampleDataset>, const MetaConfig&, const EncoderConfig&, TrainAudit*);

}  // namespace somn
