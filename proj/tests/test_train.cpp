#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "somn/train.hpp"

using namespace somn;

namespace {

// Closed-form bilevel model used by the analytic oracles:
//   inner:  L_in(theta, psi)  = 0.5|theta - a|^2 + 0.5(psi - d)^2
//   outer:  L_out(theta, phi) = 0.5|theta - b|^2 + 0.5(phi - c)^2
// Gradients are linear, so the first-order update has a hand-derivable form.
class QuadraticObjective : public MetaObjective<double> {
public:
    double a0 = 1.0, a1 = -2.0;  // inner encoder target
    double d = 0.5;              // inner head target
    double b0 = -1.0, b1 = 3.0;  // outer encoder target
    double c = 2.0;              // outer head target

    double inner_grad(ParamSet<double>& enc, ParamSet<double>& head, std::span<const Task>,
                      Rng&) override {
        auto& t = enc.entries()[0];
        t.grad[0] += t.value[0] - a0;
        t.grad[1] += t.value[1] - a1;
        auto& h = head.entries()[0];
        h.grad[0] += h.value[0] - d;
        double l = 0.5 * ((t.value[0] - a0) * (t.value[0] - a0) +
                          (t.value[1] - a1) * (t.value[1] - a1)) +
                   0.5 * (h.value[0] - d) * (h.value[0] - d);
        return l;
    }

    double outer_grad(ParamSet<double>& enc, ParamSet<double>& head, std::span<const Task>,
                      Rng&) override {
        auto& t = enc.entries()[0];
        t.grad[0] += t.value[0] - b0;
        t.grad[1] += t.value[1] - b1;
        auto& h = head.entries()[0];
        h.grad[0] += h.value[0] - c;
        return 0.5 * ((t.value[0] - b0) * (t.value[0] - b0) +
                      (t.value[1] - b1) * (t.value[1] - b1)) +
               0.5 * (h.value[0] - c) * (h.value[0] - c);
    }
};

ParamSet<double> two_param_encoder(double v0, double v1) {
    ParamSet<double> ps;
    auto& e = ps.add("theta", {2}, ParamGroup::kEncoder);
    e.value[0] = v0;
    e.value[1] = v1;
    return ps;
}

ParamSet<double> one_param_head(double v, ParamGroup g) {
    ParamSet<double> ps;
    ps.add("w", {1}, g).value[0] = v;
    return ps;
}

// Synthetic separable data over tiny signals: class c has mean level
// (c - 2) * 0.8 plus noise on every live channel.
SampleDataset separable_dataset(const std::string& id, int subjects, int per_subject,
                                int classes, uint64_t seed, int len = 64) {
    Rng rng(seed);
    std::vector<Sample> samples;
    for (int s = 0; s < subjects; ++s) {
        for (int i = 0; i < per_subject; ++i) {
            int label = i % classes;
            auto x = std::make_shared<TensorF>(std::vector<int>{kSampleChannels, len});
            for (int ch = 0; ch < kSampleChannels; ++ch)
                for (int t = 0; t < len; ++t)
                    (*x)[static_cast<int64_t>(ch) * len + t] = static_cast<float>(
                        (label - 2) * 0.8 + 0.25 * rng.normal());
            Sample sample;
            sample.x = std::move(x);
            sample.label = label;
            sample.subject_id = id + "-s" + std::to_string(s);
            sample.dataset_id = id;
            samples.push_back(std::move(sample));
        }
    }
    return SampleDataset::from_samples(id, std::move(samples));
}

EncoderConfig tiny_config() {
    EncoderConfig cfg;
    cfg.small_branch = {{2, 5, 2, 2}};
    cfg.large_branch = {{2, 9, 4, 2}};
    cfg.dropout = 0.0;
    return cfg;
}

bool same_values(const ParamSet<float>& a, const ParamSet<float>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        const auto& ea = a.entries()[i];
        const auto& eb = b.entries()[i];
        if (ea.value.numel() != eb.value.numel()) return false;
        for (int64_t k = 0; k < ea.value.numel(); ++k)
            if (ea.value[k] != eb.value[k]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("hyperparameter defaults match the training recipe") {
    MetaConfig cfg;
    CHECK(cfg.n_tasks == 32);
    CHECK(cfg.n_in == 1);
    CHECK(cfg.lambda_out == 1e-4);
    CHECK(cfg.lambda_in == 5e-5);
    CHECK(cfg.task_size == 8);
    CHECK(cfg.training_epochs == 20);
}

TEST_CASE("inner_loop with n_in = 0 returns the encoder unchanged, bitwise") {
    QuadraticObjective obj;
    Rng rng(1);
    auto enc = two_param_encoder(0.7, -0.3);
    auto head = one_param_head(0.1, ParamGroup::kSslHead);
    double loss = 123.0;
    auto adapted = inner_loop(enc, head, obj, {}, 0.01, 0, rng, &loss);
    CHECK(adapted.entries()[0].value[0] == enc.entries()[0].value[0]);
    CHECK(adapted.entries()[0].value[1] == enc.entries()[0].value[1]);
    CHECK(std::isnan(loss));
    CHECK(head.entries()[0].value[0] == 0.1);
}

TEST_CASE("inner_loop leaves the source encoder bitwise untouched") {
    QuadraticObjective obj;
    Rng rng(2);
    auto enc = two_param_encoder(0.7, -0.3);
    auto head = one_param_head(0.1, ParamGroup::kSslHead);
    auto before = copy_params(enc);
    (void)inner_loop(enc, head, obj, {}, 0.05, 3, rng);
    CHECK(enc.entries()[0].value[0] == before.entries()[0].value[0]);
    CHECK(enc.entries()[0].value[1] == before.entries()[0].value[1]);
}

TEST_CASE("inner_loop matches the hand-traced SGD recursion for n_in in {0,1,2}") {
    QuadraticObjective obj;
    const double lin = 0.05;
    for (int n_in : {0, 1, 2}) {
        Rng rng(3);
        auto enc = two_param_encoder(0.4, 1.2);
        auto head = one_param_head(-0.6, ParamGroup::kSslHead);
        auto adapted = inner_loop(enc, head, obj, {}, lin, n_in, rng);

        double t0 = 0.4, t1 = 1.2, psi = -0.6;
        for (int i = 0; i < n_in; ++i) {
            double g0 = t0 - obj.a0, g1 = t1 - obj.a1, gp = psi - obj.d;
            t0 -= lin * g0;
            t1 -= lin * g1;
            psi -= lin * gp;
        }
        CHECK(std::abs(adapted.entries()[0].value[0] - t0) < 1e-10);
        CHECK(std::abs(adapted.entries()[0].value[1] - t1) < 1e-10);
        CHECK(std::abs(head.entries()[0].value[0] - psi) < 1e-10);
    }
}

TEST_CASE("outer_step applies the first-order update taken at the adapted point") {
    QuadraticObjective obj;
    const double lin = 0.05, lout = 0.1;
    for (int n_in : {0, 1, 2}) {
        Rng rng(4);
        auto enc = two_param_encoder(0.4, 1.2);
        auto ssl = one_param_head(-0.6, ParamGroup::kSslHead);
        auto sl = one_param_head(0.9, ParamGroup::kSlHead);

        auto adapted = inner_loop(enc, ssl, obj, {}, lin, n_in, rng);
        AdamState<double> s1, s2;
        (void)outer_step(enc, sl, adapted, obj, {}, lout, OptKind::kSgd, s1, s2, rng);

        // theta' = theta - lambda_out * grad L_out(theta_in)
        double t0 = 0.4, t1 = 1.2;
        double i0 = t0, i1 = t1;
        for (int i = 0; i < n_in; ++i) {
            i0 -= lin * (i0 - obj.a0);
            i1 -= lin * (i1 - obj.a1);
        }
        double want0 = t0 - lout * (i0 - obj.b0);
        double want1 = t1 - lout * (i1 - obj.b1);
        double want_head = 0.9 - lout * (0.9 - obj.c);
        CHECK(std::abs(enc.entries()[0].value[0] - want0) < 1e-10);
        CHECK(std::abs(enc.entries()[0].value[1] - want1) < 1e-10);
        CHECK(std::abs(sl.entries()[0].value[0] - want_head) < 1e-10);
    }
}

TEST_CASE("with n_in = 0 the outer step is exactly a supervised step on T^val") {
    QuadraticObjective obj;
    Rng rng(5);
    auto enc = two_param_encoder(0.4, 1.2);
    auto ssl = one_param_head(-0.6, ParamGroup::kSslHead);
    auto sl = one_param_head(0.9, ParamGroup::kSlHead);
    auto adapted = inner_loop(enc, ssl, obj, {}, 0.05, 0, rng);
    AdamState<double> s1, s2;
    (void)outer_step(enc, sl, adapted, obj, {}, 0.1, OptKind::kSgd, s1, s2, rng);

    // A plain supervised step from the same start.
    auto enc2 = two_param_encoder(0.4, 1.2);
    auto sl2 = one_param_head(0.9, ParamGroup::kSlHead);
    enc2.zero_grads();
    sl2.zero_grads();
    Rng rng2(6);
    (void)obj.outer_grad(enc2, sl2, {}, rng2);
    sgd_step(enc2, 0.1);
    sgd_step(sl2, 0.1);

    CHECK(enc.entries()[0].value[0] == enc2.entries()[0].value[0]);
    CHECK(enc.entries()[0].value[1] == enc2.entries()[0].value[1]);
    CHECK(sl.entries()[0].value[0] == sl2.entries()[0].value[0]);
}

TEST_CASE("a zero outer gradient leaves the encoder unchanged in SGD mode") {
    QuadraticObjective obj;
    Rng rng(7);
    // Start exactly at the outer optimum: gradient vanishes.
    auto enc = two_param_encoder(obj.b0, obj.b1);
    auto ssl = one_param_head(0.0, ParamGroup::kSslHead);
    auto sl = one_param_head(obj.c, ParamGroup::kSlHead);
    auto adapted = inner_loop(enc, ssl, obj, {}, 0.0, 0, rng);
    AdamState<double> s1, s2;
    (void)outer_step(enc, sl, adapted, obj, {}, 0.1, OptKind::kSgd, s1, s2, rng);
    CHECK(enc.entries()[0].value[0] == obj.b0);
    CHECK(enc.entries()[0].value[1] == obj.b1);
    CHECK(sl.entries()[0].value[0] == obj.c);
}

TEST_CASE("SL training halves the loss on a separable problem within 200 updates") {
    auto ds = separable_dataset("d0", 4, 40, 2, 11);
    MetaConfig cfg;
    cfg.mode = TrainMode::kSl;
    cfg.seed = 21;
    cfg.lambda_out = 1e-3;
    cfg.sl_batch = 16;
    cfg.max_updates = 200;
    auto [bundle, history] = train<float>(std::span<const SampleDataset>(&ds, 1), cfg,
                                          tiny_config());
    REQUIRE(history.records.size() == 200);
    double first = history.records.front().loss_out;
    double last = history.records.back().loss_out;
    CHECK(last < 0.5 * first);
}

TEST_CASE("same seed and data give a bitwise identical history and final bundle") {
    auto ds = separable_dataset("d0", 4, 24, 5, 13);
    for (TrainMode mode : {TrainMode::kSl, TrainMode::kS2Maml, TrainMode::kMaml}) {
        MetaConfig cfg;
        cfg.mode = mode;
        cfg.seed = 99;
        cfg.n_tasks = 2;
        cfg.task_size = 4;
        cfg.max_updates = 5;
        auto [b1, h1] = train<float>(std::span<const SampleDataset>(&ds, 1), cfg, tiny_config());
        auto [b2, h2] = train<float>(std::span<const SampleDataset>(&ds, 1), cfg, tiny_config());

        std::ostringstream s1, s2;
        h1.write(s1, mode, cfg.seed);
        h2.write(s2, mode, cfg.seed);
        CHECK(s1.str() == s2.str());
        CHECK(same_values(b1.encoder, b2.encoder));
        CHECK(same_values(b1.sl_head, b2.sl_head));
        CHECK(same_values(b1.ssl_head, b2.ssl_head));
    }
}

TEST_CASE("the inner loop touches only its own head: ssl for S2MAML, sl for MAML") {
    auto ds = separable_dataset("d0", 3, 24, 5, 17);
    Rng rng(3);
    EncoderConfig cfg = tiny_config();
    auto bundle = init_model<float>(cfg, rng, 64);

    TaskBatch batch = sample_task_batch(std::span<const SampleDataset>(&ds, 1), 4, rng, 4);
    MetaSplit split = split_meta(batch, rng);

    for (TrainMode mode : {TrainMode::kS2Maml, TrainMode::kMaml}) {
        auto before_sl = copy_params(bundle.sl_head);
        auto before_ssl = copy_params(bundle.ssl_head);
        SleepnetObjective<float> obj(cfg, mode, 0.1, 16);
        ParamSet<float>& inner_head =
            mode == TrainMode::kS2Maml ? bundle.ssl_head : bundle.sl_head;
        (void)inner_loop(bundle.encoder, inner_head, obj, split.train, 1e-2, 1, rng);

        bool sl_changed = !same_values(bundle.sl_head, before_sl);
        bool ssl_changed = !same_values(bundle.ssl_head, before_ssl);
        if (mode == TrainMode::kS2Maml) {
            CHECK(!sl_changed);
            CHECK(ssl_changed);
        } else {
            CHECK(sl_changed);
            CHECK(!ssl_changed);
        }
        bundle.sl_head.assign_from(before_sl);
        bundle.ssl_head.assign_from(before_ssl);
    }
}

TEST_CASE("S2MAML with n_in = 0 and SGD outer walks the SL trajectory on the same batches") {
    auto ds = separable_dataset("d0", 3, 30, 5, 19);
    EncoderConfig cfg = tiny_config();

    Rng init_a(7), init_b(7);
    auto meta_bundle = init_model<float>(cfg, init_a, 64);
    auto sl_bundle = init_model<float>(cfg, init_b, 64);

    Rng sampler(33);
    SleepnetObjective<float> obj(cfg, TrainMode::kS2Maml, 0.1, 16);
    AdamState<float> s1, s2;
    const double lout = 1e-3;

    for (int iter = 0; iter < 4; ++iter) {
        TaskBatch batch = sample_task_batch(std::span<const SampleDataset>(&ds, 1), 4, sampler, 4);
        MetaSplit split = split_meta(batch, sampler);

        // Meta path, degenerate inner loop.
        Rng rng_meta(1000 + iter);
        auto adapted = inner_loop(meta_bundle.encoder, meta_bundle.ssl_head, obj, split.train,
                                  1e-2, 0, rng_meta);
        (void)outer_step(meta_bundle.encoder, meta_bundle.sl_head, adapted, obj, split.val, lout,
                         OptKind::kSgd, s1, s2, rng_meta);

        // Supervised path on the identical T^val batch.
        Rng rng_sl(1000 + iter);
        auto views = task_views(split.val);
        sl_bundle.encoder.zero_grads();
        sl_bundle.sl_head.zero_grads();
        (void)task_loss(cfg, sl_bundle.encoder, sl_bundle.sl_head, kSlClasses, views, 0.1, true,
                        &rng_sl, true, 16);
        sgd_step(sl_bundle.encoder, static_cast<float>(lout));
        sgd_step(sl_bundle.sl_head, static_cast<float>(lout));

        CHECK(same_values(meta_bundle.encoder, sl_bundle.encoder));
        CHECK(same_values(meta_bundle.sl_head, sl_bundle.sl_head));
    }
}

TEST_CASE("every outer iteration consumes exactly K*n_tasks fresh tasks, audited") {
    std::vector<SampleDataset> datasets;
    datasets.push_back(separable_dataset("d0", 3, 24, 5, 23));
    datasets.push_back(separable_dataset("d1", 3, 24, 5, 29));

    MetaConfig cfg;
    cfg.mode = TrainMode::kS2Maml;
    cfg.seed = 5;
    cfg.n_tasks = 3;
    cfg.task_size = 4;
    cfg.max_updates = 4;

    TrainAudit audit;
    for (const auto& ds : datasets)
        for (const auto& [subject, idx] : ds.subjects) audit.allowed.insert({ds.dataset_id, subject});
    auto [bundle, history] = train<float>(datasets, cfg, tiny_config(), &audit);
    CHECK(audit.outer_iterations == 4);
    CHECK(audit.tasks_sampled == 4 * 2 * 3);
    REQUIRE(history.records.size() == 4);
    for (const auto& r : history.records) CHECK(std::isfinite(r.loss_out));
}

TEST_CASE("the split audit rejects a task from an out-of-split subject") {
    auto ds = separable_dataset("d0", 3, 24, 5, 31);
    MetaConfig cfg;
    cfg.mode = TrainMode::kMaml;
    cfg.seed = 5;
    cfg.n_tasks = 2;
    cfg.task_size = 4;
    cfg.max_updates = 3;

    TrainAudit audit;
    audit.allowed.insert({"d0", "d0-s0"});  // subjects s1/s2 are off-limits
    CHECK_THROWS_AS((void)train<float>(std::span<const SampleDataset>(&ds, 1), cfg, tiny_config(),
                                       &audit),
                    InternalError);
}

TEST_CASE("history lines carry iteration, losses, mode and seed") {
    TrainHistory h;
    h.records.push_back({1, 0.5, 1.25, 0.0});
    h.records.push_back({2, std::numeric_limits<double>::quiet_NaN(), 1.0, 0.0});
    std::ostringstream os;
    h.write(os, TrainMode::kS2Maml, 42);
    CHECK(os.str() == "1,0.5,1.25,s2maml,42\n2,,1,s2maml,42\n");
}
