#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "somn/autodiff.hpp"
#include "somn/common.hpp"
#include "somn/gradcheck.hpp"
#include "somn/params.hpp"

using namespace somn;
using TapeD = Tape<double>;
using VarD = TapeD::Var;

namespace {

TensorD rand_tensor(std::vector<int> shape, Rng& rng, double lo = -1, double hi = 1) {
    TensorD t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Builds f(with_grads) for grad_check from a tape builder: the builder binds
// every param entry as a leaf (in order) and returns the scalar loss.
std::function<double(bool)> objective(
    ParamSet<double>& ps,
    std::function<VarD(TapeD&, std::vector<VarD>&)> build) {
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

}  // namespace

TEST_CASE("conv1d with the identity kernel reproduces the input") {
    TapeD tape;
    TensorD x({1, 1, 3}, {1, 2, 3});
    TensorD w({1, 1, 1}, {1});
    TensorD b({1}, {0});
    auto y = tape.conv1d(tape.leaf(&x, false), tape.leaf(&w, false), tape.leaf(&b, false));
    const auto& out = tape.val(y);
    REQUIRE(out.shape() == std::vector<int>{1, 1, 3});
    CHECK(out[0] == 1);
    CHECK(out[1] == 2);
    CHECK(out[2] == 3);
}

TEST_CASE("conv1d sliding dot product matches the hand computation") {
    TapeD tape;
    TensorD x({1, 1, 4}, {1, 2, 3, 4});
    TensorD w({1, 1, 2}, {1, 1});
    TensorD b({1}, {0});
    auto y = tape.conv1d(tape.leaf(&x, false), tape.leaf(&w, false), tape.leaf(&b, false));
    const auto& out = tape.val(y);
    REQUIRE(out.numel() == 3);
    CHECK(out[0] == 3);
    CHECK(out[1] == 5);
    CHECK(out[2] == 7);
}

TEST_CASE("conv1d rejects channel mismatches with a structured message") {
    TapeD tape;
    TensorD x({1, 2, 8});
    TensorD w({4, 3, 3});
    TensorD b({4});
    try {
        tape.conv1d(tape.leaf(&x, false), tape.leaf(&w, false), tape.leaf(&b, false));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("conv1d") != std::string::npos);
        CHECK(msg.find("2") != std::string::npos);
        CHECK(msg.find("3") != std::string::npos);
    }
}

TEST_CASE("softmax of a constant row is uniform") {
    TapeD tape;
    TensorD x({1, 5}, {0, 0, 0, 0, 0});
    auto y = tape.softmax(tape.leaf(&x, false));
    for (int i = 0; i < 5; ++i) CHECK(tape.val(y)[i] == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("backward of w*w at w=3 accumulates gradient 6") {
    TensorD w({1, 1}, {3.0});
    TensorD b({1}, {0.0});
    TapeD tape;
    // The same tensor bound twice: dense(x=w, W=w) = w^2.
    auto xv = tape.leaf(&w, true);
    auto wv = tape.leaf(&w, true);
    auto bv = tape.leaf(&b, false);
    auto y = tape.dense(xv, wv, bv);
    auto loss = tape.weighted_sum(y, TensorD({1, 1}, {1.0}));
    CHECK(tape.val(loss)[0] == 9.0);
    tape.backward(loss);
    CHECK(tape.grad(xv)[0] + tape.grad(wv)[0] == 6.0);
}

TEST_CASE("a parameter the loss never touches gets an exactly zero gradient") {
    TensorD used({1, 1}, {2.0});
    TensorD unused({1, 1}, {5.0});
    TensorD b({1}, {0.0});
    TapeD tape;
    auto uv = tape.leaf(&used, true);
    auto nv = tape.leaf(&unused, true);
    auto bv = tape.leaf(&b, false);
    auto x = tape.constant(TensorD({1, 1}, {1.5}));
    auto y = tape.dense(x, uv, bv);
    auto loss = tape.weighted_sum(y, TensorD({1, 1}, {1.0}));
    tape.backward(loss);
    CHECK(tape.grad(uv)[0] == 1.5);
    CHECK(tape.grad(nv)[0] == 0.0);
    (void)nv;
}

TEST_CASE("backward without a forward pass is an error") {
    TapeD tape;
    CHECK_THROWS_AS(tape.backward(VarD{}), UsageError);
}

TEST_CASE("a tape cannot be extended or re-differentiated after backward") {
    TensorD w({1, 1}, {1.0});
    TensorD b({1}, {0.0});
    TapeD tape;
    auto wv = tape.leaf(&w, true);
    auto bv = tape.leaf(&b, false);
    auto x = tape.constant(TensorD({1, 1}, {1.0}));
    auto y = tape.dense(x, wv, bv);
    auto loss = tape.weighted_sum(y, TensorD({1, 1}, {1.0}));
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), UsageError);
    CHECK_THROWS_AS((void)tape.relu(y), UsageError);
}

TEST_CASE("dropout is the identity when off and zeroes ~p of entries when on") {
    Rng rng(31);
    TensorD x({1, 1000});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = 1.0;

    {
        TapeD tape;
        auto v = tape.dropout(tape.leaf(&x, false), 0.5, rng, /*train=*/false);
        for (int64_t i = 0; i < x.numel(); ++i) CHECK(tape.val(v)[i] == 1.0);
    }

    const double p = 0.3;
    int64_t zeros = 0, total = 0;
    for (int rep = 0; rep < 100; ++rep) {  // 1e5 draws total
        TapeD tape;
        auto v = tape.dropout(tape.leaf(&x, false), p, rng, /*train=*/true);
        for (int64_t i = 0; i < x.numel(); ++i) {
            ++total;
            if (tape.val(v)[i] == 0.0) ++zeros;
            else CHECK(tape.val(v)[i] == doctest::Approx(1.0 / (1.0 - p)));
        }
    }
    double frac = static_cast<double>(zeros) / static_cast<double>(total);
    CHECK(std::abs(frac - p) < 0.02);
}

TEST_CASE("sgd_step implements p - lr*g exactly") {
    ParamSet<double> ps;
    auto& e = ps.add("w", {2}, ParamGroup::kEncoder);
    e.value[0] = 1.0;
    e.value[1] = -2.0;
    e.grad[0] = 2.0;
    e.grad[1] = 4.0;

    ParamSet<double> frozen = copy_params(ps);
    sgd_step(frozen, 0.0);
    CHECK(frozen.entries()[0].value[0] == 1.0);
    CHECK(frozen.entries()[0].value[1] == -2.0);

    sgd_step(ps, 0.1);
    CHECK(ps.entries()[0].value[0] == 1.0 - 0.1 * 2.0);
    CHECK(ps.entries()[0].value[1] == -2.0 - 0.1 * 4.0);
}

TEST_CASE("two hand-traced SGD steps on a 2-parameter model") {
    // loss(a, b) = (a*b - 1)^2, analytic gradients traced by hand.
    double a = 2.0, b = 0.25, lr = 0.05;
    ParamSet<double> ps;
    ps.add("a", {1}, ParamGroup::kEncoder).value[0] = a;
    ps.add("b", {1}, ParamGroup::kEncoder).value[0] = b;
    for (int step = 0; step < 2; ++step) {
        double av = ps.entries()[0].value[0], bv = ps.entries()[1].value[0];
        double r = av * bv - 1.0;
        ps.entries()[0].grad[0] = 2.0 * r * bv;
        ps.entries()[1].grad[0] = 2.0 * r * av;
        sgd_step(ps, lr);

        double r2 = a * b - 1.0;
        double na = a - lr * 2.0 * r2 * b;
        double nb = b - lr * 2.0 * r2 * a;
        a = na;
        b = nb;
        CHECK(ps.entries()[0].value[0] == doctest::Approx(a).epsilon(1e-10));
        CHECK(ps.entries()[1].value[0] == doctest::Approx(b).epsilon(1e-10));
    }
}

TEST_CASE("adam_step with zero gradients and fresh state is the identity") {
    ParamSet<double> ps;
    auto& e = ps.add("w", {3}, ParamGroup::kEncoder);
    e.value[0] = 1.0;
    e.value[1] = -0.5;
    e.value[2] = 7.0;
    AdamState<double> st;
    adam_step(ps, st, 1e-3);
    CHECK(e.value[0] == 1.0);
    CHECK(e.value[1] == -0.5);
    CHECK(e.value[2] == 7.0);
    CHECK(st.t == 1);
}

TEST_CASE("adam first step: bias corrections cancel, step is -lr*g/(|g|+eps)") {
    ParamSet<double> ps;
    auto& e = ps.add("w", {1}, ParamGroup::kEncoder);
    e.value[0] = 0.0;
    e.grad[0] = 0.5;
    AdamState<double> st;
    adam_step(ps, st, 1e-4);
    const double want = -1e-4 * (0.5 / (0.5 + 1e-8));
    CHECK(e.value[0] == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("two adam steps with constant gradient match an independent scalar trace") {
    const double g = 0.32, lr = 2e-3;
    ParamSet<double> ps;
    auto& e = ps.add("w", {1}, ParamGroup::kEncoder);
    e.value[0] = 1.0;
    AdamState<double> st;

    // Independent scalar oracle.
    double p = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
        e.grad[0] = g;
        adam_step(ps, st, lr);

        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        double mh = m / (1.0 - std::pow(0.9, t));
        double vh = v / (1.0 - std::pow(0.999, t));
        p -= lr * mh / (std::sqrt(vh) + 1e-8);
        CHECK(std::abs(e.value[0] - p) < 1e-12);
    }
}

TEST_CASE("copy_params isolates the copy from the source") {
    ParamSet<double> ps;
    auto& e = ps.add("enc/w", {2, 2}, ParamGroup::kEncoder);
    for (int64_t i = 0; i < 4; ++i) e.value[i] = static_cast<double>(i);

    ParamSet<double> cp = copy_params(ps);
    cp.entries()[0].grad.fill(1.0);
    sgd_step(cp, 0.5);
    for (int64_t i = 0; i < 4; ++i) CHECK(ps.entries()[0].value[i] == static_cast<double>(i));

    assign_params(ps, cp);
    for (int64_t i = 0; i < 4; ++i) CHECK(ps.entries()[0].value[i] == cp.entries()[0].value[i]);

    ParamSet<double> empty1, empty2;
    ParamSet<double> empty_copy = copy_params(empty1);
    CHECK(empty_copy.empty());
    CHECK_NOTHROW(assign_params(empty2, empty_copy));

    ParamSet<double> other;
    other.add("different", {2, 2}, ParamGroup::kEncoder);
    CHECK_THROWS_AS(assign_params(ps, other), UsageError);
    ParamSet<double> badshape;
    badshape.add("enc/w", {2, 3}, ParamGroup::kEncoder);
    CHECK_THROWS_AS(assign_params(ps, badshape), ShapeError);
}

TEST_CASE("grad_check on a linear function is exact to 1e-10") {
    Rng rng(5);
    ParamSet<double> ps;
    ps.add("w", {1, 6}, ParamGroup::kEncoder);
    for (int64_t i = 0; i < 6; ++i) ps.entries()[0].value[i] = rng.uniform(-2, 2);
    TensorD coeffs = rand_tensor({1, 6}, rng);

    auto f = objective(ps, [coeffs](TapeD& tape, std::vector<VarD>& leaves) {
        return tape.weighted_sum(leaves[0], coeffs);
    });
    // Central differences are exact for a linear map at any h; a moderate h
    // keeps the subtraction noise far below the bound.
    auto rep = grad_check(f, ps, 1e-3);
    CHECK(rep.checked == 6);
    CHECK(rep.skipped == 0);
    CHECK(rep.max_rel_err < 1e-10);
}

TEST_CASE("grad_check reports relu kink coordinates as skipped") {
    ParamSet<double> ps;
    auto& e = ps.add("w", {1, 3}, ParamGroup::kEncoder);
    e.value[0] = 0.0;  // exactly at the kink
    e.value[1] = 1.0;
    e.value[2] = -1.0;

    auto f = objective(ps, [](TapeD& tape, std::vector<VarD>& leaves) {
        auto r = tape.relu(leaves[0]);
        return tape.weighted_sum(r, TensorD({1, 3}, {1.0, 1.0, 1.0}));
    });
    auto rep = grad_check(f, ps, 1e-5);
    CHECK(rep.skipped == 1);
    CHECK(rep.checked == 2);
    CHECK(rep.max_rel_err < 1e-8);
}

TEST_CASE("every primitive passes finite differences on randomized shapes") {
    Rng rng(101);
    double worst = 0.0;

    for (int seed = 0; seed < 6; ++seed) {
        // conv1d + relu + maxpool + flatten + dense + softmax + cross_entropy:
        // one randomized composite per seed exercises every primitive's
        // backward together; per-primitive failures localize via worst_param.
        const int n = static_cast<int>(rng.uniform_int(1, 3));
        const int c_in = static_cast<int>(rng.uniform_int(1, 3));
        const int l = static_cast<int>(rng.uniform_int(12, 24));
        const int c1 = static_cast<int>(rng.uniform_int(1, 4));
        const int k1 = static_cast<int>(rng.uniform_int(1, 5));
        const int stride = static_cast<int>(rng.uniform_int(1, 3));
        const int classes = static_cast<int>(rng.uniform_int(2, 5));

        ParamSet<double> ps;
        auto& w1 = ps.add("conv.w", {c1, c_in, k1}, ParamGroup::kEncoder);
        auto& b1 = ps.add("conv.b", {c1}, ParamGroup::kEncoder);
        he_uniform_init(w1.value, c_in * k1, rng);
        for (int64_t i = 0; i < b1.value.numel(); ++i) b1.value[i] = rng.uniform(-0.1, 0.1);

        const int lc = (l - k1) / stride + 1;
        const int lp = lc >= 2 ? (lc - 2) / 2 + 1 : 0;
        if (lp < 1) continue;
        const int feat = c1 * lp;

        auto& w2 = ps.add("dense.w", {feat, classes}, ParamGroup::kSlHead);
        auto& b2 = ps.add("dense.b", {classes}, ParamGroup::kSlHead);
        he_uniform_init(w2.value, feat, rng);

        TensorD x = rand_tensor({n, c_in, l}, rng);
        TensorD targets({n, classes});
        for (int i = 0; i < n; ++i)
            targets.at2(i, rng.uniform_int(0, classes - 1)) = 1.0;
        std::vector<double> weights(static_cast<size_t>(n), 1.0 / n);

        auto f = objective(ps, [&](TapeD& tape, std::vector<VarD>& leaves) {
            auto xv = tape.leaf(&x, false);
            auto conv = tape.conv1d(xv, leaves[0], leaves[1], stride, Pad::kValid);
            auto act = tape.relu(conv);
            auto pool = tape.maxpool1d(act, 2, 2);
            auto flat = tape.flatten(pool);
            auto logits = tape.dense(flat, leaves[2], leaves[3]);
            auto probs = tape.softmax(logits);
            return tape.cross_entropy(probs, targets, weights);
        });

        auto rep = grad_check(f, ps, 1e-5);
        CHECK(rep.checked > 0);
        CHECK(rep.max_rel_err < 1e-6);
        worst = std::max(worst, rep.max_rel_err);
    }
    MESSAGE("composite primitive gradcheck worst rel err: " << worst);
}

TEST_CASE("padding mode kSame preserves length at stride 1 and differentiates") {
    Rng rng(77);
    ParamSet<double> ps;
    auto& w = ps.add("w", {2, 1, 5}, ParamGroup::kEncoder);
    auto& b = ps.add("b", {2}, ParamGroup::kEncoder);
    he_uniform_init(w.value, 5, rng);
    TensorD x = rand_tensor({1, 1, 9}, rng);

    TapeD tape;
    auto y = tape.conv1d(tape.leaf(&x, false), tape.leaf(&w.value, true),
                         tape.leaf(&b.value, true), 1, Pad::kSame);
    CHECK(tape.val(y).shape() == std::vector<int>{1, 2, 9});

    TensorD coeffs = rand_tensor({1, 2, 9}, rng);
    auto f = objective(ps, [&](TapeD& t, std::vector<VarD>& leaves) {
        auto xv = t.leaf(&x, false);
        auto conv = t.conv1d(xv, leaves[0], leaves[1], 1, Pad::kSame);
        return t.weighted_sum(conv, coeffs);
    });
    auto rep = grad_check(f, ps, 1e-5);
    CHECK(rep.max_rel_err < 1e-8);
}

TEST_CASE("checked mode flags non-finite values with the op name") {
    TensorD x({1, 2}, {1.0, std::numeric_limits<double>::infinity()});
    TapeD tape(/*checked=*/true);
    auto xv = tape.leaf(&x, false);
    CHECK_THROWS_AS((void)tape.relu(xv), InternalError);
}

TEST_CASE("identical seeds give bitwise identical dropout masks and inits") {
    TensorD a({64});
    TensorD b({64});
    {
        Rng r1(99);
        he_uniform_init(a, 16, r1);
    }
    {
        Rng r2(99);
        he_uniform_init(b, 16, r2);
    }
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}
