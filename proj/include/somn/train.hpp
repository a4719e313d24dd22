#pragma once

#include <cstdint>
#include <ostream>
#include <set>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "somn/params.hpp"
#include "somn/tasks.hpp"

namespace somn {

enum class TrainMode { kS2Maml, kMaml, kSl };
enum class OptKind { kSgd, kAdam };

const char* train_mode_name(TrainMode m);
TrainMode train_mode_from_name(std::string_view name);

struct MetaConfig {
    double lambda_in = 5e-5;   // inner learning rate
    double lambda_out = 1e-4;  // outer learning rate
    int n_in = 1;              // inner iterations
    int n_tasks = 32;          // tasks per dataset per outer iteration
    int task_size = 8;         // samples per task
    int training_epochs = 20;  // passes over all databases
    int64_t max_updates = 0;   // fixed gradient-update budget; 0 keeps the epoch bound
    TrainMode mode = TrainMode::kS2Maml;
    uint64_t seed = 0;
    double smoothing = 0.1;    // label smoothing alpha
    OptKind inner_opt = OptKind::kSgd;
    OptKind outer_opt = OptKind::kAdam;
    int sl_batch = 64;         // minibatch for the plain supervised baseline
    int chunk_rows = 16;       // rows per tape in the loss

    void validate() const;
};

struct TrainRecord {
    int64_t iter = 0;
    double loss_in = 0.0;   // NaN when the mode has no inner loss
    double loss_out = 0.0;
    double wall_s = 0.0;    // diagnostic only; excluded from determinism
};

struct TrainHistory {
    std::vector<TrainRecord> records;

    // Line-delimited records: iter,loss_in,loss_out,mode,seed (loss_in blank
    // when the mode has no inner problem).
    void write(std::ostream& os, TrainMode mode, uint64_t seed) const;
};

// The bilevel objective. The production implementation wraps the network
// loss; analytic oracles in tests substitute closed-form models (their data
// lives in the objective, so they ignore the task arguments).
template <typename T>
class MetaObjective {
public:
    virtual ~MetaObjective() = default;
    // Inner (adaptation) loss at (encoder, inner_head); writes gradients.
    virtual double inner_grad(ParamSet<T>& encoder, ParamSet<T>& inner_head,
                              std::span<const Task> t_tr, Rng& rng) = 0;
    // Outer (generalization) loss at (encoder, sl_head); writes gradients.
    virtual double outer_grad(ParamSet<T>& encoder, ParamSet<T>& sl_head,
                              std::span<const Task> t_val, Rng& rng) = 0;
};

// Adaptation: copy the encoder, run n_in inner steps on (copy, inner_head).
// The source encoder is never touched; the inner head updates in place and
// persists across outer iterations. Plain SGD by default; an Adam inner
// optimizer keeps per-adaptation state only.
template <typename T>
ParamSet<T> inner_loop(const ParamSet<T>& encoder, ParamSet<T>& inner_head,
                       MetaObjective<T>& obj, std::span<const Task> t_tr, double lambda_in,
                       int n_in, Rng& rng, double* inner_loss = nullptr,
                       OptKind opt = OptKind::kSgd);

// First-order outer update: gradients are taken at the adapted encoder and
// applied to the source encoder; the supervised head updates with its own
// gradient. Returns the outer loss.
template <typename T>
double outer_step(ParamSet<T>& encoder, ParamSet<T>& sl_head, ParamSet<T>& adapted_encoder,
                  MetaObjective<T>& obj, std::span<const Task> t_val, double lambda_out,
                  OptKind opt, AdamState<T>& encoder_state, AdamState<T>& head_state, Rng& rng);

// Production objective over a model bundle. S2MAML generates fresh
// phase-swap tasks from T^tr on every inner call; MAML runs the supervised
// loss on T^tr instead.
template <typename T>
class SleepnetObjective : public MetaObjective<T> {
public:
    SleepnetObjective(EncoderConfig cfg, TrainMode mode, double smoothing, int chunk_rows)
        : cfg_(std::move(cfg)), mode_(mode), smoothing_(smoothing), chunk_rows_(chunk_rows) {}

    double inner_grad(ParamSet<T>& encoder, ParamSet<T>& inner_head, std::span<const Task> t_tr,
                      Rng& rng) override;
    double outer_grad(ParamSet<T>& encoder, ParamSet<T>& sl_head, std::span<const Task> t_val,
                      Rng& rng) override;

private:
    EncoderConfig cfg_;
    TrainMode mode_;
    double smoothing_;
    int chunk_rows_;
};

// Training-time instrumentation. `allowed` (when non-empty) is the split
// audit: every sampled task's (dataset, subject) must be in it.
struct TrainAudit {
    std::set<std::pair<std::string, std::string>> allowed;
    int64_t tasks_sampled = 0;
    int64_t outer_iterations = 0;
};

// Runs the configured procedure over the datasets and returns the trained
// bundle plus the per-iteration history. Deterministic per (datasets, cfg).
template <typename T>
std::pair<ModelBundle<T>, TrainHistory> train(std::span<const SampleDataset> datasets,
                                              const MetaConfig& cfg,
                                              const EncoderConfig& model_cfg,
                                              TrainAudit* audit = nullptr);

extern template class SleepnetObjective<float>;
extern template class SleepnetObjective<double>;

}  // namespace somn
