#pragma once

#include <span>
#include <string>
#include <vector>

#include "somn/autodiff.hpp"
#include "somn/params.hpp"
#include "somn/sample.hpp"

namespace somn {

constexpr int kSlClasses = 5;
constexpr int kSslClasses = 2;

// One conv block of a branch: conv (valid padding) -> relu -> optional
// max-pool (pool size 1 disables pooling; window == stride == pool).
struct ConvBlockConfig {
    int filters = 1;
    int kernel = 1;
    int stride = 1;
    int pool = 1;
};

// Dual-branch encoder: a small-filter branch resolving waveform detail and a
// large-filter branch resolving slower rhythms. Branch outputs are flattened
// and concatenated into the feature vector h, with dropout before the heads.
struct EncoderConfig {
    std::vector<ConvBlockConfig> small_branch;
    std::vector<ConvBlockConfig> large_branch;
    double dropout = 0.5;
    int in_channels = kSampleChannels;

    // First-layer kernels around fs/2 and 4*fs, two blocks per branch.
    static EncoderConfig paper_default();
    // A slimmed preset for minutes-scale CPU runs; same topology.
    static EncoderConfig compact();

    // Shape propagation without running the network.
    int branch_out_len(const std::vector<ConvBlockConfig>& branch, int input_len) const;
    int feature_dim(int input_len = kSamplePoints) const;
    void validate(int input_len = kSamplePoints) const;
};

template <typename T>
struct ModelBundle {
    EncoderConfig config;
    int input_len = kSamplePoints;  // signal length the heads were sized for
    ParamSet<T> encoder;
    ParamSet<T> sl_head;   // feature -> 5 logits
    ParamSet<T> ssl_head;  // feature -> 2 logits
};

// He-uniform weights, zero biases, drawn from rng in a fixed order.
template <typename T>
ModelBundle<T> init_model(const EncoderConfig& cfg, Rng& rng, int input_len = kSamplePoints);

// Tracks which param entries were bound onto a tape so gradients can be
// pulled back after backward().
template <typename T>
struct TapeBinding {
    std::vector<std::pair<typename ParamSet<T>::Entry*, typename Tape<T>::Var>> bound;

    typename Tape<T>::Var bind(Tape<T>& tape, typename ParamSet<T>::Entry& e) {
        auto var = tape.leaf(&e.value, true);
        bound.push_back({&e, var});
        return var;
    }

    void accumulate_grads(const Tape<T>& tape) {
        for (auto& [entry, var] : bound) {
            const Tensor<T>& g = tape.grad(var);
            for (int64_t i = 0; i < g.numel(); ++i) entry->grad[i] += g[i];
        }
    }
};

// Builds the dual-branch encoder forward pass; x is (N, C, L). Returns the
// feature node (N, feature_dim). The encoder parameter set is explicit so the
// adaptation loop can run the same graph against a parameter copy.
template <typename T>
typename Tape<T>::Var encode_on_tape(Tape<T>& tape, const EncoderConfig& cfg,
                                     ParamSet<T>& encoder, typename Tape<T>::Var x, bool train,
                                     Rng* rng, TapeBinding<T>& binding);

// dense -> softmax head over features.
template <typename T>
typename Tape<T>::Var head_on_tape(Tape<T>& tape, ParamSet<T>& head,
                                   typename Tape<T>::Var features, TapeBinding<T>& binding);

// Inference helpers (no dropout, no gradients).
template <typename T>
Tensor<T> encode(ModelBundle<T>& bundle, const Tensor<T>& x);
template <typename T>
Tensor<T> classify(ModelBundle<T>& bundle, ParamSet<T>& head, const Tensor<T>& features);

// One task's worth of signal/label pairs flattened for the loss; signals stay
// float32 regardless of the compute precision.
struct TaskView {
    std::vector<const TensorF*> signals;
    std::vector<int> labels;
};

// Task-averaged cross-entropy with label smoothing: mean over pairs inside
// each task, then mean over tasks. Probabilities are clamped at 1e-12 before
// the log. When with_grads is set, gradients accumulate into the encoder and
// head parameter sets. Batches are processed in fixed-size chunks.
template <typename T>
double task_loss(const EncoderConfig& cfg, ParamSet<T>& encoder, ParamSet<T>& head,
                 int n_classes, std::span<const TaskView> tasks, double smoothing, bool train,
                 Rng* rng, bool with_grads, int chunk_rows = 16);

template <typename T>
double task_loss(ModelBundle<T>& bundle, ParamSet<T>& head, int n_classes,
                 std::span<const TaskView> tasks, double smoothing, bool train, Rng* rng,
                 bool with_grads, int chunk_rows = 16) {
    return task_loss(bundle.config, bundle.encoder, head, n_classes, tasks, smoothing, train,
                     rng, with_grads, chunk_rows);
}

// Arg-max class prediction for a batch of samples (chunked, eval mode).
template <typename T>
std::vector<int> predict(ModelBundle<T>& bundle, std::span<const Sample> samples,
                         int chunk_rows = 32);

// Checkpoint round-trip for a float bundle (+ run seed and a config snapshot
// in the metadata line).
void save_bundle(const std::string& path, const ModelBundle<float>& bundle, uint64_t seed,
                 const std::string& meta);
ModelBundle<float> load_bundle(const std::string& path, uint64_t* seed = nullptr,
                               std::string* meta = nullptr);

// Config (de)serialization used by the run-config file and checkpoints.
std::string encoder_config_to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const std::string& json_text);

extern template struct ModelBundle<float>;
extern template struct ModelBundle<double>;

}  // namespace somn
