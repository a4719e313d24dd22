#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "somn/gradcheck.hpp"
#include "somn/model.hpp"

using namespace somn;

namespace {

// A deliberately tiny encoder over short inputs; keeps double-precision
// finite differences affordable.
EncoderConfig tiny_config() {
    EncoderConfig cfg;
    cfg.small_branch = {{2, 5, 2, 2}};
    cfg.large_branch = {{2, 9, 4, 2}};
    cfg.dropout = 0.0;
    return cfg;
}

constexpr int kTinyLen = 64;

TensorF rand_signal(int channels, int len, Rng& rng) {
    TensorF x({channels, len});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal());
    return x;
}

}  // namespace

TEST_CASE("all-zero input with zero biases encodes to the zero feature vector") {
    Rng rng(1);
    auto bundle = init_model<float>(tiny_config(), rng, kTinyLen);
    TensorF x({1, kSampleChannels, kTinyLen});  // zeros
    TensorF h = encode(bundle, x);
    REQUIRE(h.dim(1) == bundle.config.feature_dim(kTinyLen));
    for (int64_t i = 0; i < h.numel(); ++i) CHECK(h[i] == 0.0f);
}

TEST_CASE("encoding is bitwise deterministic for a fixed seed and input") {
    Rng rng_x(7);
    TensorF row = rand_signal(kSampleChannels, kTinyLen, rng_x);
    TensorF x({1, kSampleChannels, kTinyLen}, row.values());

    Rng rng_a(123), rng_b(123);
    auto m1 = init_model<float>(tiny_config(), rng_a, kTinyLen);
    auto m2 = init_model<float>(tiny_config(), rng_b, kTinyLen);
    TensorF h1 = encode(m1, x);
    TensorF h2 = encode(m2, x);
    REQUIRE(h1.numel() == h2.numel());
    for (int64_t i = 0; i < h1.numel(); ++i) CHECK(h1[i] == h2[i]);
}

TEST_CASE("feature length from shape propagation matches the actual forward pass") {
    Rng rng(3);
    for (auto cfg : {EncoderConfig::paper_default(), EncoderConfig::compact()}) {
        auto bundle = init_model<float>(cfg, rng);
        TensorF x({1, kSampleChannels, kSamplePoints});
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.uniform(-1, 1));
        TensorF h = encode(bundle, x);
        CHECK(h.dim(1) == cfg.feature_dim());
    }
}

TEST_CASE("classify with zero head weights is uniform over the classes") {
    Rng rng(5);
    auto bundle = init_model<float>(tiny_config(), rng, kTinyLen);
    bundle.sl_head.find("w")->value.fill(0.0f);
    bundle.sl_head.find("b")->value.fill(0.0f);
    bundle.ssl_head.find("w")->value.fill(0.0f);
    bundle.ssl_head.find("b")->value.fill(0.0f);

    TensorF x({1, kSampleChannels, kTinyLen}, rand_signal(kSampleChannels, kTinyLen, rng).values());
    TensorF h = encode(bundle, x);
    TensorF sl = classify(bundle, bundle.sl_head, h);
    TensorF ssl = classify(bundle, bundle.ssl_head, h);
    for (int c = 0; c < kSlClasses; ++c) CHECK(sl[c] == doctest::Approx(0.2).epsilon(1e-6));
    for (int c = 0; c < kSslClasses; ++c) CHECK(ssl[c] == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("a dominant logit wins with probability above 0.99") {
    Rng rng(6);
    auto bundle = init_model<float>(tiny_config(), rng, kTinyLen);
    bundle.sl_head.find("w")->value.fill(0.0f);
    auto& b = bundle.sl_head.find("b")->value;
    b.fill(0.0f);
    b[0] = 10.0f;

    TensorF h({1, bundle.config.feature_dim(kTinyLen)});
    TensorF probs = classify(bundle, bundle.sl_head, h);
    CHECK(probs[0] > 0.99f);
    int best = 0;
    for (int c = 1; c < kSlClasses; ++c)
        if (probs[c] > probs[best]) best = c;
    CHECK(best == 0);
}

TEST_CASE("classify outputs stay on the probability simplex") {
    Rng rng(8);
    auto bundle = init_model<float>(tiny_config(), rng, kTinyLen);
    for (int trial = 0; trial < 20; ++trial) {
        TensorF x({2, kSampleChannels, kTinyLen});
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.uniform(-3, 3));
        TensorF h = encode(bundle, x);
        TensorF probs = classify(bundle, bundle.sl_head, h);
        for (int r = 0; r < 2; ++r) {
            double sum = 0.0;
            for (int c = 0; c < kSlClasses; ++c) {
                CHECK(probs.at2(r, c) >= 0.0f);
                sum += probs.at2(r, c);
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("uniform predictions give loss ln(5) regardless of labels") {
    Rng rng(9);
    auto bundle = init_model<float>(tiny_config(), rng, kTinyLen);
    bundle.sl_head.find("w")->value.fill(0.0f);
    bundle.sl_head.find("b")->value.fill(0.0f);

    TensorF x0 = rand_signal(kSampleChannels, kTinyLen, rng);
    TensorF x1 = rand_signal(kSampleChannels, kTinyLen, rng);
    TaskView t;
    t.signals = {&x0, &x1};
    t.labels = {0, 3};
    double loss = task_loss(bundle, bundle.sl_head, kSlClasses, std::span<const TaskView>(&t, 1),
                            0.0, false, nullptr, false);
    CHECK(loss == doctest::Approx(std::log(5.0)).epsilon(1e-6));
}

TEST_CASE("near-one-hot predictions give near-zero loss and vanishing logit gradient") {
    Rng rng(10);
    auto bundle = init_model<double>(tiny_config(), rng, kTinyLen);
    bundle.sl_head.find("w")->value.fill(0.0);
    auto& bias = bundle.sl_head.find("b")->value;
    bias.fill(0.0);
    bias[2] = 60.0;  // softmax saturates to the one-hot for class 2

    TensorD xd({kSampleChannels, kTinyLen});
    TensorF x0({kSampleChannels, kTinyLen});
    for (int64_t i = 0; i < x0.numel(); ++i) x0[i] = static_cast<float>(rng.normal());
    (void)xd;
    TaskView t;
    t.signals = {&x0};
    t.labels = {2};

    bundle.encoder.zero_grads();
    bundle.sl_head.zero_grads();
    double loss = task_loss(bundle, bundle.sl_head, kSlClasses, std::span<const TaskView>(&t, 1),
                            0.0, false, nullptr, true);
    CHECK(loss < 1e-12);
    // dL/dlogits lands in the head bias gradient.
    const auto& bg = bundle.sl_head.find("b")->grad;
    for (int c = 0; c < kSlClasses; ++c) CHECK(std::abs(bg[c]) < 1e-10);
}

TEST_CASE("the loss is the mean of per-task means, hand-assembled") {
    Rng rng(11);
    auto bundle = init_model<float>(tiny_config(), rng, kTinyLen);
    TensorF a0 = rand_signal(kSampleChannels, kTinyLen, rng);
    TensorF a1 = rand_signal(kSampleChannels, kTinyLen, rng);
    TensorF a2 = rand_signal(kSampleChannels, kTinyLen, rng);
    TensorF b0 = rand_signal(kSampleChannels, kTinyLen, rng);

    TaskView ta;  // three pairs
    ta.signals = {&a0, &a1, &a2};
    ta.labels = {0, 1, 4};
    TaskView tb;  // one pair: unequal sizes exercise the nested average
    tb.signals = {&b0};
    tb.labels = {2};

    const double alpha = 0.1;
    double la = task_loss(bundle, bundle.sl_head, kSlClasses, std::span<const TaskView>(&ta, 1),
                          alpha, false, nullptr, false);
    double lb = task_loss(bundle, bundle.sl_head, kSlClasses, std::span<const TaskView>(&tb, 1),
                          alpha, false, nullptr, false);
    TaskView both[2] = {ta, tb};
    double lab = task_loss(bundle, bundle.sl_head, kSlClasses, std::span<const TaskView>(both, 2),
                           alpha, false, nullptr, false);
    CHECK(lab == doctest::Approx((la + lb) / 2.0).epsilon(1e-9));

    // Permutation invariance across tasks and within-task pair order.
    TaskView ta_perm;
    ta_perm.signals = {&a2, &a0, &a1};
    ta_perm.labels = {4, 0, 1};
    TaskView both_perm[2] = {tb, ta_perm};
    double lab_perm = task_loss(bundle, bundle.sl_head, kSlClasses,
                                std::span<const TaskView>(both_perm, 2), alpha, false, nullptr,
                                false);
    CHECK(lab_perm == doctest::Approx(lab).epsilon(1e-9));
}

TEST_CASE("loss gradients for all three parameter groups pass finite differences") {
    Rng rng(12);
    auto bundle = init_model<double>(tiny_config(), rng, kTinyLen);

    TensorF x0 = rand_signal(kSampleChannels, kTinyLen, rng);
    TensorF x1 = rand_signal(kSampleChannels, kTinyLen, rng);
    TaskView sl_task;
    sl_task.signals = {&x0, &x1};
    sl_task.labels = {1, 3};
    TaskView ssl_task;
    ssl_task.signals = {&x1, &x0};
    ssl_task.labels = {0, 1};

    // One combined parameter set driving both heads: the objective sums the
    // supervised and self-supervised losses so every group gets a gradient.
    ParamSet<double> all;
    for (auto& e : bundle.encoder.entries()) {
        auto& n = all.add("enc/" + e.name, e.value.shape(), e.group);
        n.value = e.value;
    }
    for (auto& e : bundle.sl_head.entries()) {
        auto& n = all.add("sl/" + e.name, e.value.shape(), e.group);
        n.value = e.value;
    }
    for (auto& e : bundle.ssl_head.entries()) {
        auto& n = all.add("ssl/" + e.name, e.value.shape(), e.group);
        n.value = e.value;
    }

    auto push_values = [&]() {
        for (auto& e : bundle.encoder.entries()) e.value = all.find("enc/" + e.name)->value;
        for (auto& e : bundle.sl_head.entries()) e.value = all.find("sl/" + e.name)->value;
        for (auto& e : bundle.ssl_head.entries()) e.value = all.find("ssl/" + e.name)->value;
    };

    auto f = [&](bool with_grads) {
        push_values();
        bundle.encoder.zero_grads();
        bundle.sl_head.zero_grads();
        bundle.ssl_head.zero_grads();
        double l1 = task_loss(bundle, bundle.sl_head, kSlClasses,
                              std::span<const TaskView>(&sl_task, 1), 0.1, false, nullptr,
                              with_grads);
        double l2 = task_loss(bundle, bundle.ssl_head, kSslClasses,
                              std::span<const TaskView>(&ssl_task, 1), 0.1, false, nullptr,
                              with_grads);
        if (with_grads) {
            for (auto& e : bundle.encoder.entries())
                all.find("enc/" + e.name)->grad = e.grad;
            for (auto& e : bundle.sl_head.entries()) all.find("sl/" + e.name)->grad = e.grad;
            for (auto& e : bundle.ssl_head.entries()) all.find("ssl/" + e.name)->grad = e.grad;
        }
        return l1 + l2;
    };

    auto rep = grad_check(f, all, 1e-5);
    CHECK(rep.checked > 100);
    CHECK(rep.max_rel_err < 1e-5);
    MESSAGE("sleepnet loss gradcheck: max rel err " << rep.max_rel_err << ", "
            << rep.checked << " checked, " << rep.skipped << " skipped");
}

TEST_CASE("bundle checkpoints round-trip bitwise with seed and metadata") {
    Rng rng(13);
    auto bundle = init_model<float>(tiny_config(), rng, kTinyLen);
    auto path = (std::filesystem::temp_directory_path() / "somn_bundle_test.ckpt").string();
    save_bundle(path, bundle, 9001, "unit-test");

    uint64_t seed = 0;
    std::string meta;
    auto back = load_bundle(path, &seed, &meta);
    CHECK(seed == 9001);
    CHECK(meta == "unit-test");
    CHECK(back.config.feature_dim(kTinyLen) == bundle.config.feature_dim(kTinyLen));

    auto same = [](const ParamSet<float>& a, const ParamSet<float>& b) {
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) {
            const auto& ea = a.entries()[i];
            const auto& eb = b.entries()[i];
            REQUIRE(ea.name == eb.name);
            REQUIRE(ea.value.numel() == eb.value.numel());
            for (int64_t k = 0; k < ea.value.numel(); ++k) CHECK(ea.value[k] == eb.value[k]);
        }
    };
    same(bundle.encoder, back.encoder);
    same(bundle.sl_head, back.sl_head);
    same(bundle.ssl_head, back.ssl_head);
    std::filesystem::remove(path);
}

TEST_CASE("encoder config serialization round-trips") {
    EncoderConfig cfg = EncoderConfig::paper_default();
    EncoderConfig back = encoder_config_from_json(encoder_config_to_json(cfg));
    CHECK(back.feature_dim() == cfg.feature_dim());
    CHECK(back.dropout == cfg.dropout);
    REQUIRE(back.small_branch.size() == cfg.small_branch.size());
    CHECK(back.small_branch[0].kernel == cfg.small_branch[0].kernel);
    CHECK(back.large_branch[0].stride == cfg.large_branch[0].stride);
}
