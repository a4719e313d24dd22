#pragma once

#include <cmath>
#include <deque>
#include <string>
#include <vector>

#include "somn/common.hpp"
#include "somn/tensor.hpp"

namespace somn {

enum class ParamGroup { kEncoder, kSlHead, kSslHead };

const char* param_group_name(ParamGroup g);

// Named parameter tensors with matching gradient slots. Entries keep
// insertion order; names are unique. Value semantics: copies are deep and
// fully isolated from their source.
template <typename T>
class ParamSet {
public:
    struct Entry {
        std::string name;
        Tensor<T> value;
        Tensor<T> grad;
        ParamGroup group = ParamGroup::kEncoder;
    };

    Entry& add(const std::string& name, std::vector<int> shape, ParamGroup group) {
        if (find(name)) throw UsageError("ParamSet: duplicate parameter '" + name + "'");
        Entry e;
        e.name = name;
        e.value = Tensor<T>(shape);
        e.grad = Tensor<T>(shape);
        e.group = group;
        entries_.push_back(std::move(e));
        return entries_.back();
    }

    Entry* find(const std::string& name) {
        for (auto& e : entries_)
            if (e.name == name) return &e;
        return nullptr;
    }
    const Entry* find(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.name == name) return &e;
        return nullptr;
    }

    std::deque<Entry>& entries() { return entries_; }
    const std::deque<Entry>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    void zero_grads() {
        for (auto& e : entries_) e.grad.fill(T(0));
    }

    int64_t total_values() const {
        int64_t n = 0;
        for (const auto& e : entries_) n += e.value.numel();
        return n;
    }

    // Elementwise copy of parameter values from a structurally identical set.
    void assign_from(const ParamSet& src) {
        check_same_structure(src, "assign_from");
        for (size_t i = 0; i < entries_.size(); ++i)
            entries_[i].value = src.entries_[i].value;
    }

    // grads += src.grads; the transfer step that applies gradients taken at
    // the adapted parameters to the source parameters.
    void add_grads_from(const ParamSet& src) {
        check_same_structure(src, "add_grads_from");
        for (size_t i = 0; i < entries_.size(); ++i) {
            const auto& g = src.entries_[i].grad;
            auto& mine = entries_[i].grad;
            for (int64_t k = 0; k < g.numel(); ++k) mine[k] += g[k];
        }
    }

    void check_same_structure(const ParamSet& o, const char* op) const {
        if (o.entries_.size() != entries_.size())
            throw UsageError(std::string(op) + ": parameter count mismatch");
        for (size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].name != o.entries_[i].name)
                throw UsageError(std::string(op) + ": parameter name mismatch '" +
                                 entries_[i].name + "' vs '" + o.entries_[i].name + "'");
            if (entries_[i].value.shape() != o.entries_[i].value.shape())
                throw ShapeError(std::string(op) + ": shape mismatch for '" + entries_[i].name +
                                 "'");
        }
    }

private:
    std::deque<Entry> entries_;
};

// Deep value copy; updates to the copy never touch the source.
template <typename T>
ParamSet<T> copy_params(const ParamSet<T>& src) {
    return src;
}

template <typename T>
void assign_params(ParamSet<T>& dst, const ParamSet<T>& src) {
    dst.assign_from(src);
}

// p <- p - lr * g for every parameter.
template <typename T>
void sgd_step(ParamSet<T>& params, T lr) {
    for (auto& e : params.entries())
        for (int64_t i = 0; i < e.value.numel(); ++i) e.value[i] -= lr * e.grad[i];
}

// Adam state: first/second moments per parameter plus one shared step
// counter. Defaults are the standard (0.9, 0.999, 1e-8).
template <typename T>
struct AdamState {
    struct Slot {
        Tensor<T> m, v;
    };
    std::vector<Slot> slots;
    int64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
void adam_step(ParamSet<T>& params, AdamState<T>& state, T lr) {
    if (state.slots.empty()) {
        state.slots.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.slots[i].m = Tensor<T>(params.entries()[i].value.shape());
            state.slots[i].v = Tensor<T>(params.entries()[i].value.shape());
        }
    }
    if (state.slots.size() != params.size())
        throw UsageError("adam_step: state does not match parameter set");

    state.t += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& e = params.entries()[i];
        auto& m = state.slots[i].m;
        auto& v = state.slots[i].v;
        for (int64_t k = 0; k < e.value.numel(); ++k) {
            const double g = static_cast<double>(e.grad[k]);
            double mk = b1 * static_cast<double>(m[k]) + (1.0 - b1) * g;
            double vk = b2 * static_cast<double>(v[k]) + (1.0 - b2) * g * g;
            m[k] = static_cast<T>(mk);
            v[k] = static_cast<T>(vk);
            const double update = (mk / c1) / (std::sqrt(vk / c2) + state.eps);
            e.value[k] -= static_cast<T>(static_cast<double>(lr) * update);
        }
    }
}

// He-uniform initialization for a weight tensor whose fan-in is given;
// biases stay zero.
template <typename T>
void he_uniform_init(Tensor<T>& w, int64_t fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(std::max<int64_t>(fan_in, 1)));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.uniform(-limit, limit));
}

}  // namespace somn
