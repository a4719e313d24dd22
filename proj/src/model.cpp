#include "somn/model.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "somn/checkpoint.hpp"

namespace somn {

EncoderConfig EncoderConfig::paper_default() {
    EncoderConfig cfg;
    // First-layer kernels ~fs/2 and ~4*fs at 102.4 Hz.
    cfg.small_branch = {{64, 51, 6, 8}, {128, 8, 1, 4}};
    cfg.large_branch = {{64, 410, 51, 4}, {128, 6, 1, 2}};
    cfg.dropout = 0.5;
    return cfg;
}

EncoderConfig EncoderConfig::compact() {
    EncoderConfig cfg;
    cfg.small_branch = {{8, 25, 12, 8}, {12, 6, 1, 4}};
    cfg.large_branch = {{8, 128, 64, 4}, {12, 6, 1, 2}};
    cfg.dropout = 0.5;
    return cfg;
}

int EncoderConfig::branch_out_len(const std::vector<ConvBlockConfig>& branch,
                                  int input_len) const {
    int len = input_len;
    for (const auto& b : branch) {
        if (b.kernel < 1 || b.stride < 1 || b.pool < 1 || b.filters < 1)
            throw UsageError("encoder config: kernel/stride/pool/filters must be >= 1");
        if (len < b.kernel)
            throw UsageError("encoder config: kernel " + std::to_string(b.kernel) +
                             " exceeds remaining length " + std::to_string(len));
        len = (len - b.kernel) / b.stride + 1;
        if (b.pool > 1) {
            if (len < b.pool)
                throw UsageError("encoder config: pool " + std::to_string(b.pool) +
                                 " exceeds remaining length " + std::to_string(len));
            len = (len - b.pool) / b.pool + 1;
        }
    }
    return len;
}

int EncoderConfig::feature_dim(int input_len) const {
    validate(input_len);
    int small = branch_out_len(small_branch, input_len) * small_branch.back().filters;
    int large = branch_out_len(large_branch, input_len) * large_branch.back().filters;
    return small + large;
}

void EncoderConfig::validate(int input_len) const {
    if (small_branch.empty() || large_branch.empty())
        throw UsageError("encoder config: both branches need at least one block");
    if (dropout < 0.0 || dropout >= 1.0)
        throw UsageError("encoder config: dropout must be in [0, 1)");
    if (in_channels < 1) throw UsageError("encoder config: in_channels must be >= 1");
    (void)branch_out_len(small_branch, input_len);
    (void)branch_out_len(large_branch, input_len);
}

namespace {

template <typename T>
void add_branch_params(ParamSet<T>& ps, const std::vector<ConvBlockConfig>& branch,
                       const std::string& prefix, int in_channels, Rng& rng) {
    int c = in_channels;
    for (size_t i = 0; i < branch.size(); ++i) {
        const auto& b = branch[i];
        auto& w = ps.add(prefix + std::to_string(i) + ".w", {b.filters, c, b.kernel},
                         ParamGroup::kEncoder);
        he_uniform_init(w.value, static_cast<int64_t>(c) * b.kernel, rng);
        ps.add(prefix + std::to_string(i) + ".b", {b.filters}, ParamGroup::kEncoder);
        c = b.filters;
    }
}

template <typename T>
void add_head_params(ParamSet<T>& ps, int features, int classes, ParamGroup group, Rng& rng) {
    auto& w = ps.add("w", {features, classes}, group);
    he_uniform_init(w.value, features, rng);
    ps.add("b", {classes}, group);
}

}  // namespace

template <typename T>
ModelBundle<T> init_model(const EncoderConfig& cfg, Rng& rng, int input_len) {
    cfg.validate(input_len);
    ModelBundle<T> m;
    m.config = cfg;
    m.input_len = input_len;
    add_branch_params(m.encoder, cfg.small_branch, "small", cfg.in_channels, rng);
    add_branch_params(m.encoder, cfg.large_branch, "large", cfg.in_channels, rng);
    const int feat = cfg.feature_dim(input_len);
    add_head_params(m.sl_head, feat, kSlClasses, ParamGroup::kSlHead, rng);
    add_head_params(m.ssl_head, feat, kSslClasses, ParamGroup::kSslHead, rng);
    return m;
}

namespace {

template <typename T>
typename Tape<T>::Var branch_on_tape(Tape<T>& tape, ParamSet<T>& encoder,
                                     const std::vector<ConvBlockConfig>& branch,
                                     const std::string& prefix, typename Tape<T>::Var x,
                                     TapeBinding<T>& binding) {
    auto cur = x;
    for (size_t i = 0; i < branch.size(); ++i) {
        const auto& b = branch[i];
        auto* we = encoder.find(prefix + std::to_string(i) + ".w");
        auto* be = encoder.find(prefix + std::to_string(i) + ".b");
        if (!we || !be) throw InternalError("encoder params missing block " + prefix);
        auto wv = binding.bind(tape, *we);
        auto bv = binding.bind(tape, *be);
        cur = tape.conv1d(cur, wv, bv, b.stride, Pad::kValid);
        cur = tape.relu(cur);
        if (b.pool > 1) cur = tape.maxpool1d(cur, b.pool, b.pool);
    }
    return tape.flatten(cur);
}

}  // namespace

template <typename T>
typename Tape<T>::Var encode_on_tape(Tape<T>& tape, const EncoderConfig& cfg,
                                     ParamSet<T>& encoder, typename Tape<T>::Var x, bool train,
                                     Rng* rng, TapeBinding<T>& binding) {
    auto small = branch_on_tape(tape, encoder, cfg.small_branch, "small", x, binding);
    auto large = branch_on_tape(tape, encoder, cfg.large_branch, "large", x, binding);
    auto h = tape.concat_cols(small, large);
    if (train && cfg.dropout > 0.0) {
        if (!rng) throw UsageError("encode_on_tape: training mode needs an rng for dropout");
        h = tape.dropout(h, cfg.dropout, *rng, true);
    }
    return h;
}

template <typename T>
typename Tape<T>::Var head_on_tape(Tape<T>& tape, ParamSet<T>& head,
                                   typename Tape<T>::Var features, TapeBinding<T>& binding) {
    auto* we = head.find("w");
    auto* be = head.find("b");
    if (!we || !be) throw InternalError("head params missing w/b");
    auto logits = tape.dense(features, binding.bind(tape, *we), binding.bind(tape, *be));
    return tape.softmax(logits);
}

template <typename T>
Tensor<T> encode(ModelBundle<T>& bundle, const Tensor<T>& x) {
    Tape<T> tape;
    TapeBinding<T> binding;
    auto xv = tape.leaf(&x, false);
    auto h = encode_on_tape(tape, bundle.config, bundle.encoder, xv, false, nullptr, binding);
    return tape.val(h);
}

template <typename T>
Tensor<T> classify(ModelBundle<T>& bundle, ParamSet<T>& head, const Tensor<T>& features) {
    (void)bundle;
    Tape<T> tape;
    TapeBinding<T> binding;
    auto fv = tape.leaf(&features, false);
    auto probs = head_on_tape(tape, head, fv, binding);
    return tape.val(probs);
}

template <typename T>
double task_loss(const EncoderConfig& cfg, ParamSet<T>& encoder, ParamSet<T>& head,
                 int n_classes, std::span<const TaskView> tasks, double smoothing, bool train,
                 Rng* rng, bool with_grads, int chunk_rows) {
    if (tasks.empty()) throw UsageError("task_loss: empty task set");
    if (chunk_rows < 1) throw UsageError("task_loss: chunk_rows must be >= 1");
    const auto* head_w = head.find("w");
    if (!head_w || head_w->value.dim(1) != n_classes)
        throw ShapeError("task_loss: head does not produce " + std::to_string(n_classes) +
                         " classes");

    // Flatten (task, pair) rows; each row weighs 1/(|T| * |t|), the two
    // nested averages.
    struct Row {
        const TensorF* x;
        int label;
        double weight;
    };
    std::vector<Row> rows;
    for (const auto& t : tasks) {
        if (t.signals.empty()) throw UsageError("task_loss: a task has no pairs");
        if (t.signals.size() != t.labels.size())
            throw UsageError("task_loss: signals/labels size mismatch");
        const double w = 1.0 / (static_cast<double>(tasks.size()) *
                                static_cast<double>(t.signals.size()));
        for (size_t i = 0; i < t.signals.size(); ++i) {
            if (t.labels[i] < 0 || t.labels[i] >= n_classes)
                throw UsageError("task_loss: label " + std::to_string(t.labels[i]) +
                                 " out of range for " + std::to_string(n_classes) + " classes");
            rows.push_back({t.signals[i], t.labels[i], w});
        }
    }

    const int channels = rows.front().x->dim(0);
    const int len = rows.front().x->dim(1);
    const double off_target = smoothing / static_cast<double>(n_classes);
    const double on_target = 1.0 - smoothing + off_target;

    double total = 0.0;
    for (size_t base = 0; base < rows.size(); base += static_cast<size_t>(chunk_rows)) {
        const int b = static_cast<int>(
            std::min<size_t>(static_cast<size_t>(chunk_rows), rows.size() - base));

        Tensor<T> x({b, channels, len});
        Tensor<T> targets({b, n_classes});
        std::vector<T> weights(static_cast<size_t>(b));
        for (int r = 0; r < b; ++r) {
            const Row& row = rows[base + static_cast<size_t>(r)];
            if (row.x->dim(0) != channels || row.x->dim(1) != len)
                throw ShapeError("task_loss: inconsistent signal shapes in batch");
            const float* src = row.x->data();
            T* dst = &x.at3(r, 0, 0);
            for (int64_t i = 0; i < row.x->numel(); ++i) dst[i] = static_cast<T>(src[i]);
            for (int c = 0; c < n_classes; ++c)
                targets.at2(r, c) = static_cast<T>(c == row.label ? on_target : off_target);
            weights[static_cast<size_t>(r)] = static_cast<T>(row.weight);
        }

        Tape<T> tape;
        TapeBinding<T> binding;
        auto xv = tape.leaf(&x, false);
        auto h = encode_on_tape(tape, cfg, encoder, xv, train, rng, binding);
        auto probs = head_on_tape(tape, head, h, binding);
        auto loss = tape.cross_entropy(probs, std::move(targets), std::move(weights));
        total += static_cast<double>(tape.val(loss)[0]);
        if (with_grads) {
            tape.backward(loss);
            binding.accumulate_grads(tape);
        }
    }
    return total;
}

template <typename T>
std::vector<int> predict(ModelBundle<T>& bundle, std::span<const Sample> samples,
                         int chunk_rows) {
    std::vector<int> out;
    out.reserve(samples.size());
    if (samples.empty()) return out;
    const int channels = samples.front().x->dim(0);
    const int len = samples.front().x->dim(1);

    for (size_t base = 0; base < samples.size(); base += static_cast<size_t>(chunk_rows)) {
        const int b = static_cast<int>(
            std::min<size_t>(static_cast<size_t>(chunk_rows), samples.size() - base));
        Tensor<T> x({b, channels, len});
        for (int r = 0; r < b; ++r) {
            const auto& s = samples[base + static_cast<size_t>(r)];
            const float* src = s.x->data();
            T* dst = &x.at3(r, 0, 0);
            for (int64_t i = 0; i < s.x->numel(); ++i) dst[i] = static_cast<T>(src[i]);
        }
        Tape<T> tape;
        TapeBinding<T> binding;
        auto xv = tape.leaf(&x, false);
        auto h = encode_on_tape(tape, bundle.config, bundle.encoder, xv, false, nullptr, binding);
        auto probs = head_on_tape(tape, bundle.sl_head, h, binding);
        const Tensor<T>& p = tape.val(probs);
        for (int r = 0; r < b; ++r) {
            int best = 0;
            for (int c = 1; c < kSlClasses; ++c)
                if (p.at2(r, c) > p.at2(r, best)) best = c;
            out.push_back(best);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string encoder_config_to_json(const EncoderConfig& cfg) {
    nlohmann::json j;
    auto branch = [](const std::vector<ConvBlockConfig>& blocks) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& b : blocks)
            arr.push_back({{"filters", b.filters},
                           {"kernel", b.kernel},
                           {"stride", b.stride},
                           {"pool", b.pool}});
        return arr;
    };
    j["small_branch"] = branch(cfg.small_branch);
    j["large_branch"] = branch(cfg.large_branch);
    j["dropout"] = cfg.dropout;
    j["in_channels"] = cfg.in_channels;
    return j.dump();
}

EncoderConfig encoder_config_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    EncoderConfig cfg;
    auto branch = [](const nlohmann::json& arr) {
        std::vector<ConvBlockConfig> blocks;
        for (const auto& b : arr)
            blocks.push_back({b.at("filters").get<int>(), b.at("kernel").get<int>(),
                              b.at("stride").get<int>(), b.at("pool").get<int>()});
        return blocks;
    };
    cfg.small_branch = branch(j.at("small_branch"));
    cfg.large_branch = branch(j.at("large_branch"));
    cfg.dropout = j.at("dropout").get<double>();
    cfg.in_channels = j.value("in_channels", kSampleChannels);
    return cfg;
}

void save_bundle(const std::string& path, const ModelBundle<float>& bundle, uint64_t seed,
                 const std::string& meta) {
    nlohmann::json j;
    j["config"] = nlohmann::json::parse(encoder_config_to_json(bundle.config));
    j["input_len"] = bundle.input_len;
    if (!meta.empty()) j["meta"] = meta;

    std::vector<std::pair<std::string, const TensorF*>> tensors;
    auto collect = [&](const ParamSet<float>& ps, const std::string& prefix) {
        for (const auto& e : ps.entries()) tensors.push_back({prefix + "/" + e.name, &e.value});
    };
    collect(bundle.encoder, "encoder");
    collect(bundle.sl_head, "sl_head");
    collect(bundle.ssl_head, "ssl_head");
    save_named_tensors(path, seed, j.dump(), tensors);
}

ModelBundle<float> load_bundle(const std::string& path, uint64_t* seed, std::string* meta) {
    LoadedTensors lt = load_named_tensors(path);
    nlohmann::json j = nlohmann::json::parse(lt.meta);

    Rng throwaway(0);
    EncoderConfig cfg = encoder_config_from_json(j.at("config").dump());
    const int input_len = j.value("input_len", kSamplePoints);
    ModelBundle<float> bundle = init_model<float>(cfg, throwaway, input_len);

    auto restore = [&](ParamSet<float>& ps, const std::string& prefix) {
        for (auto& e : ps.entries()) {
            auto it = lt.tensors.find(prefix + "/" + e.name);
            if (it == lt.tensors.end())
                throw DataError("checkpoint missing tensor " + prefix + "/" + e.name);
            if (it->second.shape() != e.value.shape())
                throw DataError("checkpoint shape mismatch for " + prefix + "/" + e.name);
            e.value = it->second;
        }
    };
    restore(bundle.encoder, "encoder");
    restore(bundle.sl_head, "sl_head");
    restore(bundle.ssl_head, "ssl_head");

    if (seed) *seed = lt.seed;
    if (meta && j.contains("meta")) *meta = j.at("meta").get<std::string>();
    else if (meta) meta->clear();
    return bundle;
}

template struct ModelBundle<float>;
template struct ModelBundle<double>;

template ModelBundle<float> init_model<float>(const EncoderConfig&, Rng&, int);
template ModelBundle<double> init_model<double>(const EncoderConfig&, Rng&, int);

template struct TapeBinding<float>;
template struct TapeBinding<double>;

template Tape<float>::Var encode_on_tape<float>(Tape<float>&, const EncoderConfig&,
                                                ParamSet<float>&, Tape<float>::Var, bool, Rng*,
                                                TapeBinding<float>&);
template Tape<double>::Var encode_on_tape<double>(Tape<double>&, const EncoderConfig&,
                                                  ParamSet<double>&, Tape<double>::Var, bool,
                                                  Rng*, TapeBinding<double>&);
template Tape<float>::Var head_on_tape<float>(Tape<float>&, ParamSet<float>&, Tape<float>::Var,
                                              TapeBinding<float>&);
template Tape<double>::Var head_on_tape<double>(Tape<double>&, ParamSet<double>&,
                                                Tape<double>::Var, TapeBinding<double>&);
template Tensor<float> encode<float>(ModelBundle<float>&, const Tensor<float>&);
template Tensor<double> encode<double>(ModelBundle<double>&, const Tensor<double>&);
template Tensor<float> classify<float>(ModelBundle<float>&, ParamSet<float>&,
                                       const Tensor<float>&);
template Tensor<double> classify<double>(ModelBundle<double>&, ParamSet<double>&,
                                         const Tensor<double>&);
template double task_loss<float>(const EncoderConfig&, ParamSet<float>&, ParamSet<float>&, int,
                                 std::span<const TaskView>, double, bool, Rng*, bool, int);
template double task_loss<double>(const EncoderConfig&, ParamSet<double>&, ParamSet<double>&,
                                  int, std::span<const TaskView>, double, bool, Rng*, bool, int);
template std::vector<int> predict<float>(ModelBundle<float>&, std::span<const Sample>, int);
template std::vector<int> predict<double>(ModelBundle<double>&, std::span<const Sample>, int);

}  // namespace somn
