#include "somn/gradsuite.hpp"

#include <cmath>
#include <functional>

#include "somn/autodiff.hpp"
#include "somn/model.hpp"

namespace somn {

namespace {

using TapeD = Tape<double>;
using VarD = TapeD::Var;

TensorD rand_tensor(std::vector<int> shape, Rng& rng, double lo = -1, double hi = 1) {
    TensorD t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

struct Suite {
    GradSuiteResult result;
    std::ostream* log;

    void merge(const char* name, const GradCheckReport& rep) {
        if (log)
            *log << "  " << name << ": max rel err " << rep.max_rel_err << " (" << rep.checked
                 << " checked, " << rep.skipped << " skipped)\n";
        result.checked += rep.checked;
        result.skipped += rep.skipped;
        if (rep.max_rel_err > result.max_rel_err) {
            result.max_rel_err = rep.max_rel_err;
            result.worst_case = name;
        }
    }
};

std::function<double(bool)> bound_objective(
    ParamSet<double>& ps, std::function<VarD(TapeD&, std::vector<VarD>&)> build) {
    return [&ps, build](bool with_grads) {
        TapeD tape;
        std::vector<VarD> leaves;
        for (auto& e : ps.entries()) leaves.push_back(tape.leaf(&e.value, true));
        VarD loss = build(tape, leaves);
        double value = tape.val(loss)[0];
        if (with_grads) {
            tape.backward(loss);
            for (size_t i = 0; i < ps.size(); ++i) {
                const auto& g = tape.grad(leaves[i]);
                auto& dst = ps.entries()[i].grad;
                for (int64_t k = 0; k < g.numel(); ++k) dst[k] += g[k];
            }
        }
        return value;
    };
}

void check_conv(Suite& suite, Rng& rng, Pad pad) {
    const int n = static_cast<int>(rng.uniform_int(1, 3));
    const int c = static_cast<int>(rng.uniform_int(1, 3));
    const int l = static_cast<int>(rng.uniform_int(8, 20));
    const int o = static_cast<int>(rng.uniform_int(1, 4));
    const int k = static_cast<int>(rng.uniform_int(1, std::min(l, 6)));
    const int stride = static_cast<int>(rng.uniform_int(1, 3));

    ParamSet<double> ps;
    auto& w = ps.add("w", {o, c, k}, ParamGroup::kEncoder);
    auto& b = ps.add("b", {o}, ParamGroup::kEncoder);
    he_uniform_init(w.value, static_cast<int64_t>(c) * k, rng);
    for (int64_t i = 0; i < b.value.numel(); ++i) b.value[i] = rng.uniform(-0.2, 0.2);

    TensorD x = rand_tensor({n, c, l}, rng);
    const int lp = pad == Pad::kSame
                       ? l + std::max(0, ((l + stride - 1) / stride - 1) * stride + k - l)
                       : l;
    const int lout = (lp - k) / stride + 1;
    TensorD coeffs = rand_tensor({n, o, lout}, rng);

    auto f = bound_objective(ps, [&, pad, stride](TapeD& t, std::vector<VarD>& leaves) {
        auto xv = t.leaf(&x, false);
        return t.weighted_sum(t.conv1d(xv, leaves[0], leaves[1], stride, pad), coeffs);
    });
    suite.merge(pad == Pad::kValid ? "conv1d(valid)" : "conv1d(same)", grad_check(f, ps, 1e-5));
}

void check_dense(Suite& suite, Rng& rng) {
    const int n = static_cast<int>(rng.uniform_int(1, 4));
    const int feat = static_cast<int>(rng.uniform_int(1, 8));
    const int o = static_cast<int>(rng.uniform_int(1, 6));
    ParamSet<double> ps;
    auto& w = ps.add("w", {feat, o}, ParamGroup::kEncoder);
    ps.add("b", {o}, ParamGroup::kEncoder);
    he_uniform_init(w.value, feat, rng);
    TensorD x = rand_tensor({n, feat}, rng);
    TensorD coeffs = rand_tensor({n, o}, rng);
    auto f = bound_objective(ps, [&](TapeD& t, std::vector<VarD>& leaves) {
        auto xv = t.leaf(&x, false);
        return t.weighted_sum(t.dense(xv, leaves[0], leaves[1]), coeffs);
    });
    suite.merge("dense", grad_check(f, ps, 1e-5));
}

void check_relu_pool(Suite& suite, Rng& rng) {
    const int n = static_cast<int>(rng.uniform_int(1, 2));
    const int c = static_cast<int>(rng.uniform_int(1, 3));
    const int l = static_cast<int>(rng.uniform_int(6, 16));
    const int window = static_cast<int>(rng.uniform_int(1, 3));
    ParamSet<double> ps;
    auto& x = ps.add("x", {n, c, l}, ParamGroup::kEncoder);
    x.value = rand_tensor({n, c, l}, rng);
    const int lout = (l - window) / window + 1;
    TensorD coeffs = rand_tensor({n, c, lout}, rng);
    auto f = bound_objective(ps, [&, window](TapeD& t, std::vector<VarD>& leaves) {
        return t.weighted_sum(t.maxpool1d(t.relu(leaves[0]), window), coeffs);
    });
    suite.merge("relu+maxpool1d", grad_check(f, ps, 1e-5));
}

void check_softmax_ce(Suite& suite, Rng& rng) {
    const int n = static_cast<int>(rng.uniform_int(1, 4));
    const int c = static_cast<int>(rng.uniform_int(2, 5));
    ParamSet<double> ps;
    auto& x = ps.add("logits", {n, c}, ParamGroup::kSlHead);
    x.value = rand_tensor({n, c}, rng, -2, 2);
    TensorD targets({n, c});
    for (int i = 0; i < n; ++i) targets.at2(i, rng.uniform_int(0, c - 1)) = 1.0;
    std::vector<double> weights(static_cast<size_t>(n), 1.0 / n);
    auto f = bound_objective(ps, [&](TapeD& t, std::vector<VarD>& leaves) {
        return t.cross_entropy(t.softmax(leaves[0]), targets, weights);
    });
    suite.merge("softmax+cross_entropy", grad_check(f, ps, 1e-5));
}

void check_dropout(Suite& suite, Rng& rng) {
    const int n = static_cast<int>(rng.uniform_int(1, 3));
    const int c = static_cast<int>(rng.uniform_int(2, 8));
    const uint64_t mask_seed = rng.next_u64();
    ParamSet<double> ps;
    auto& x = ps.add("x", {n, c}, ParamGroup::kEncoder);
    x.value = rand_tensor({n, c}, rng);
    TensorD coeffs = rand_tensor({n, c}, rng);
    // The mask must be identical across evaluations: a fresh generator with a
    // fixed seed per call makes the dropout a fixed linear map.
    auto f = bound_objective(ps, [&, mask_seed](TapeD& t, std::vector<VarD>& leaves) {
        Rng mask_rng(mask_seed);
        return t.weighted_sum(t.dropout(leaves[0], 0.4, mask_rng, true), coeffs);
    });
    suite.merge("dropout", grad_check(f, ps, 1e-5));
}

void check_concat_flatten(Suite& suite, Rng& rng) {
    const int n = static_cast<int>(rng.uniform_int(1, 3));
    const int c = static_cast<int>(rng.uniform_int(1, 3));
    const int l = static_cast<int>(rng.uniform_int(2, 6));
    ParamSet<double> ps;
    auto& a = ps.add("a", {n, c, l}, ParamGroup::kEncoder);
    auto& b = ps.add("b", {n, c, l}, ParamGroup::kEncoder);
    a.value = rand_tensor({n, c, l}, rng);
    b.value = rand_tensor({n, c, l}, rng);
    TensorD coeffs = rand_tensor({n, 2 * c * l}, rng);
    auto f = bound_objective(ps, [&](TapeD& t, std::vector<VarD>& leaves) {
        return t.weighted_sum(t.concat_cols(t.flatten(leaves[0]), t.flatten(leaves[1])), coeffs);
    });
    suite.merge("flatten+concat", grad_check(f, ps, 1e-5));
}

// The full dual-branch loss on a 2-sample batch with both heads engaged.
void check_full_model(Suite& suite, Rng& rng) {
    EncoderConfig cfg;
    cfg.small_branch = {{2, 5, 2, 2}};
    cfg.large_branch = {{2, 9, 4, 2}};
    cfg.dropout = 0.0;
    const int len = 48;
    auto bundle = init_model<double>(cfg, rng, len);

    TensorF x0({kSampleChannels, len}), x1({kSampleChannels, len});
    for (int64_t i = 0; i < x0.numel(); ++i) x0[i] = static_cast<float>(rng.normal());
    for (int64_t i = 0; i < x1.numel(); ++i) x1[i] = static_cast<float>(rng.normal());
    TaskView sl_task{{&x0, &x1}, {static_cast<int>(rng.uniform_int(0, 4)),
                                  static_cast<int>(rng.uniform_int(0, 4))}};
    TaskView ssl_task{{&x1, &x0}, {0, 1}};

    ParamSet<double> all;
    for (auto& e : bundle.encoder.entries()) all.add("enc/" + e.name, e.value.shape(), e.group).value = e.value;
    for (auto& e : bundle.sl_head.entries()) all.add("sl/" + e.name, e.value.shape(), e.group).value = e.value;
    for (auto& e : bundle.ssl_head.entries()) all.add("ssl/" + e.name, e.value.shape(), e.group).value = e.value;

    auto f = [&](bool with_grads) {
        for (auto& e : bundle.encoder.entries()) e.value = all.find("enc/" + e.name)->value;
        for (auto& e : bundle.sl_head.entries()) e.value = all.find("sl/" + e.name)->value;
        for (auto& e : bundle.ssl_head.entries()) e.value = all.find("ssl/" + e.name)->value;
        bundle.encoder.zero_grads();
        bundle.sl_head.zero_grads();
        bundle.ssl_head.zero_grads();
        double l = task_loss(cfg, bundle.encoder, bundle.sl_head, kSlClasses,
                             std::span<const TaskView>(&sl_task, 1), 0.1, false, nullptr,
                             with_grads) +
                   task_loss(cfg, bundle.encoder, bundle.ssl_head, kSslClasses,
                             std::span<const TaskView>(&ssl_task, 1), 0.1, false, nullptr,
                             with_grads);
        if (with_grads) {
            for (auto& e : bundle.encoder.entries()) all.find("enc/" + e.name)->grad = e.grad;
            for (auto& e : bundle.sl_head.entries()) all.find("sl/" + e.name)->grad = e.grad;
            for (auto& e : bundle.ssl_head.entries()) all.find("ssl/" + e.name)->grad = e.grad;
        }
        return l;
    };
    suite.merge("sleepnet-loss", grad_check(f, all, 1e-5));
}

}  // namespace

GradSuiteResult run_gradient_suite(int seeds, std::ostream* log) {
    if (seeds < 1) throw UsageError("run_gradient_suite: seeds must be >= 1");
    Suite suite;
    suite.log = log;
    for (int s = 0; s < seeds; ++s) {
        if (log) *log << "seed " << s << ":\n";
        Rng rng(0xC0FFEE + static_cast<uint64_t>(s));
        check_conv(suite, rng, Pad::kValid);
        check_conv(suite, rng, Pad::kSame);
        check_dense(suite, rng);
        check_relu_pool(suite, rng);
        check_softmax_ce(suite, rng);
        check_dropout(suite, rng);
        check_concat_flatten(suite, rng);
        check_full_model(suite, rng);
    }
    return suite.result;
}

}  // namespace somn
