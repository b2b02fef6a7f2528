#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "ircoco/tensor.hpp"
#include "oracles.hpp"

using namespace ircoco;

namespace {

TensorPtr random_tensor(int r, int c, Rng& rng, bool rg = true, double scale = 1.0) {
    auto t = make_tensor(r, c, rg);
    for (auto& v : t->data) v = float(rng.normal() * scale);
    return t;
}

// Checks one primitive's backward rule: builds loss = sum(g0 . f(inputs)),
// runs backward, and compares a handful of input-gradient entries against
// central differences of the same loss.
void check_primitive_gradient(
    const std::function<TensorPtr(Tape&, const std::vector<TensorPtr>&)>& fwd,
    const std::vector<TensorPtr>& inputs, Rng& rng, double eps = 1e-2, double tol = 5e-2) {
    Tape probe_tape;
    probe_tape.recording = false;
    auto probe = fwd(probe_tape, inputs);
    auto g0 = make_tensor(probe->rows, probe->cols);
    for (auto& v : g0->data) v = float(rng.normal());

    auto loss_value = [&]() -> double {
        Tape t;
        t.recording = false;
        auto out = fwd(t, inputs);
        double acc = 0.0;
        for (size_t i = 0; i < out->data.size(); ++i) acc += double(out->data[i]) * double(g0->data[i]);
        return acc;
    };

    for (auto& in : inputs) in->zero_grad();
    Tape tape;
    auto out = fwd(tape, inputs);
    // Weighted sum via mul + matmul against columns of ones keeps the loss
    // scalar inside the primitive set.
    auto weighted = mul(tape, out, g0);
    auto colsum = matmul(tape, weighted, full_tensor(out->cols, 1, 1.0f));
    auto total = matmul(tape, full_tensor(1, out->rows, 1.0f), colsum);
    tape.backward(total);

    for (const auto& in : inputs) {
        if (!in->requires_grad) continue;
        // Probe the largest-gradient entries plus one random entry.
        std::vector<size_t> order(in->data.size());
        std::iota(order.begin(), order.end(), size_t(0));
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            return std::fabs(in->grad[a]) > std::fabs(in->grad[b]);
        });
        std::vector<size_t> picks(order.begin(), order.begin() + std::min<size_t>(4, order.size()));
        picks.push_back(order[rng.uniform_int(order.size())]);
        for (const size_t idx : picks) {
            const float saved = in->data[idx];
            const float up_v = float(double(saved) + eps);
            const float down_v = float(double(saved) - eps);
            in->data[idx] = up_v;
            const double up = loss_value();
            in->data[idx] = down_v;
            const double down = loss_value();
            in->data[idx] = saved;
            const double numeric = (up - down) / (double(up_v) - double(down_v));
            const double rel = std::fabs(double(in->grad[idx]) - numeric) / (std::fabs(numeric) + 1e-8);
            INFO("entry " << idx << " analytic " << in->grad[idx] << " numeric " << numeric);
            CHECK(rel <= tol);
        }
    }
}

}  // namespace

TEST_CASE("matmul matches the naive oracle") {
    Tape tape;
    auto a = tensor_of({{1, 2}, {3, 4}});
    auto b = tensor_of({{5, 6}, {7, 8}});
    auto c = matmul(tape, a, b);
    CHECK(c->at(0, 0) == 19.0f);
    CHECK(c->at(0, 1) == 22.0f);
    CHECK(c->at(1, 0) == 43.0f);
    CHECK(c->at(1, 1) == 50.0f);

    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        const int m = 1 + int(rng.uniform_int(6)), k = 1 + int(rng.uniform_int(6)),
                  n = 1 + int(rng.uniform_int(6));
        auto x = random_tensor(m, k, rng, false);
        auto y = random_tensor(k, n, rng, false);
        std::vector<double> xd(x->data.begin(), x->data.end());
        std::vector<double> yd(y->data.begin(), y->data.end());
        const auto want = oracle::matmul(xd, yd, m, k, n);
        Tape t;
        auto got = matmul(t, x, y);
        for (size_t i = 0; i < got->data.size(); ++i)
            CHECK(std::fabs(double(got->data[i]) - want[i]) < 1e-4);
    }
}

TEST_CASE("matmul rejects mismatched shapes") {
    Tape tape;
    auto a = make_tensor(2, 3);
    auto b = make_tensor(2, 3);
    CHECK_THROWS_AS(matmul(tape, a, b), ContractViolation);
}

TEST_CASE("softmax rows is a distribution and symmetric on equal logits") {
    Tape tape;
    auto s = softmax_rows(tape, tensor_of({{0, 0}}));
    CHECK(s->data[0] == Catch::Approx(0.5).margin(1e-7));
    CHECK(s->data[1] == Catch::Approx(0.5).margin(1e-7));

    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        auto x = random_tensor(1 + int(rng.uniform_int(5)), 2 + int(rng.uniform_int(8)), rng, false, 3.0);
        Tape t;
        auto y = softmax_rows(t, x);
        for (int i = 0; i < y->rows; ++i) {
            double sum = 0.0;
            for (int j = 0; j < y->cols; ++j) {
                CHECK(y->at(i, j) >= 0.0f);
                sum += y->at(i, j);
            }
            CHECK(std::fabs(sum - 1.0) <= 1e-5);
        }
    }
}

TEST_CASE("layer_norm output rows have mean 0 and unit variance") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = random_tensor(1 + int(rng.uniform_int(4)), 4 + int(rng.uniform_int(12)), rng, false, 2.0);
        Tape t;
        auto y = layer_norm(t, x);
        for (int i = 0; i < y->rows; ++i) {
            double mean = 0.0, var = 0.0;
            for (int j = 0; j < y->cols; ++j) mean += y->at(i, j);
            mean /= y->cols;
            for (int j = 0; j < y->cols; ++j) var += (y->at(i, j) - mean) * (y->at(i, j) - mean);
            var /= y->cols;
            CHECK(std::fabs(mean) <= 1e-5);
            CHECK(std::fabs(var - 1.0) <= 1e-3);
        }
    }
}

TEST_CASE("mse of [0.5] vs [0.7] is 0.04") {
    Tape tape;
    auto v = mse(tape, tensor_of({{0.5f}}), tensor_of({{0.7f}}));
    CHECK(v->data[0] == Catch::Approx(0.04).margin(1e-7));
}

TEST_CASE("embed_lookup rejects out-of-range ids") {
    Tape tape;
    auto table = make_tensor(4, 3);
    const std::vector<int> bad{0, 4};
    CHECK_THROWS_AS(embed_lookup(tape, table, bad), IndexError);
}

TEST_CASE("non-finite primitive output raises a numeric error") {
    Tape tape;
    auto big = full_tensor(1, 2, 3e38f);
    CHECK_THROWS_AS(add(tape, big, big), NumericError);
}

TEST_CASE("backward of x*x at x=3 gives 6") {
    auto x = scalar_tensor(3.0f, true);
    Tape tape;
    auto y = mul(tape, x, x);
    tape.backward(y);
    CHECK(x->grad[0] == Catch::Approx(6.0).margin(1e-6));
}

TEST_CASE("fan-out accumulates additively: y = x + x has dy/dx = 2") {
    auto x = scalar_tensor(1.5f, true);
    Tape tape;
    auto y = add(tape, x, x);
    tape.backward(y);
    CHECK(x->grad[0] == 2.0f);
}

TEST_CASE("a parameter with no path to the loss keeps gradient zero") {
    auto x = scalar_tensor(2.0f, true);
    auto unused = scalar_tensor(5.0f, true);
    Tape tape;
    auto y = mul(tape, x, x);
    auto z = mul(tape, unused, unused);  // on tape, but not part of the loss
    (void)z;
    tape.backward(y);
    CHECK(unused->grad[0] == 0.0f);
}

TEST_CASE("backward rejects a loss from another tape") {
    auto x = scalar_tensor(2.0f, true);
    Tape a;
    auto y = mul(a, x, x);
    Tape b;
    CHECK_THROWS_AS(b.backward(y), ContractViolation);
}

TEST_CASE("cross-entropy after softmax matches finite differences tightly") {
    // Gradient of mean CE over random logits, probed at eps = 1e-3.
    Rng rng(123);
    auto logits = random_tensor(3, 6, rng, true, 0.5);
    const std::vector<int> targets{1, 4, 0};

    auto loss_value = [&]() -> double {
        Tape t;
        t.recording = false;
        auto ce = cross_entropy_rows(t, logits, targets);
        double acc = 0.0;
        for (const float v : ce->data) acc += double(v);
        return acc / double(ce->rows);
    };

    logits->zero_grad();
    Tape tape;
    auto ce = cross_entropy_rows(tape, logits, targets);
    auto total = matmul(tape, full_tensor(1, 3, 1.0f / 3.0f), ce);
    tape.backward(total);

    const double eps = 1e-3;
    double max_rel = 0.0;
    for (size_t idx = 0; idx < logits->data.size(); ++idx) {
        const float saved = logits->data[idx];
        logits->data[idx] = float(double(saved) + eps);
        const double up = loss_value();
        logits->data[idx] = float(double(saved) - eps);
        const double down = loss_value();
        logits->data[idx] = saved;
        const double numeric = (up - down) / (2.0 * eps);
        if (std::fabs(numeric) < 1e-4) continue;  // below f32 probe resolution
        max_rel = std::max(max_rel, std::fabs(double(logits->grad[idx]) - numeric) / (std::fabs(numeric) + 1e-8));
    }
    CHECK(max_rel <= 1e-3);
}

TEST_CASE("every primitive passes randomized finite-difference trials") {
    Rng rng(2024);
    const int trials = 10;  // 10 shapes x 11 primitives x >=5 probes each

    for (int trial = 0; trial < trials; ++trial) {
        const int r = 2 + int(rng.uniform_int(4));
        const int c = 2 + int(rng.uniform_int(5));
        const int k = 2 + int(rng.uniform_int(4));
        INFO("trial " << trial << " r=" << r << " c=" << c << " k=" << k);

        {
            auto a = random_tensor(r, k, rng);
            auto b = random_tensor(k, c, rng);
            check_primitive_gradient(
                [](Tape& t, const std::vector<TensorPtr>& in) { return matmul(t, in[0], in[1]); },
                {a, b}, rng);
        }
        {
            auto a = random_tensor(r, c, rng);
            auto b = random_tensor(r, c, rng);
            check_primitive_gradient(
                [](Tape& t, const std::vector<TensorPtr>& in) { return add(t, in[0], in[1]); },
                {a, b}, rng);
            auto row = random_tensor(1, c, rng);
            check_primitive_gradient(
                [](Tape& t, const std::vector<TensorPtr>& in) { return add(t, in[0], in[1]); },
                {a, row}, rng);
        }
        {
            auto a = random_tensor(r, c, rng);
            auto b = random_tensor(r, c, rng);
            check_primitive_gradient(
                [](Tape& t, const std::vector<TensorPtr>& in) { return mul(t, in[0], in[1]); },
                {a, b}, rng);
            auto s = random_tensor(1, 1, rng);
            check_primitive_gradient(
                [](Tape& t, const std::vector<TensorPtr>& in) { return mul(t, in[0], in[1]); },
                {a, s}, rng);
        }
        {
            auto a = random_tensor(r, c, rng);
            check_primitive_gradient(
                [](Tape& t, const std::vector<TensorPtr>& in) { return softmax_rows(t, in[0]); },
                {a}, rng, 1e-2, 5e-2);
        }
        {
            auto a = random_tensor(r, 4 + c, rng);
            check_primitive_gradient(
                [](Tape& t, const std::vector<TensorPtr>& in) { return layer_norm(t, in[0]); },
                {a}, rng, 1e-2, 5e-2);
        }
        {
            auto a = random_tensor(r, c, rng);
            check_primitive_gradient(
                [](Tape& t, const std::vector<TensorPtr>& in) { return gelu(t, in[0]); }, {a}, rng);
        }
        {
            auto a = random_tensor(r, c, rng);
            check_primitive_gradient(
                [](Tape& t, const std::vector<TensorPtr>& in) { return logistic(t, in[0]); }, {a}, rng);
        }
        {
            auto table = random_tensor(6, c, rng);
            std::vector<int> ids;
            for (int i = 0; i < r + 1; ++i) ids.push_back(int(rng.uniform_int(6)));
            check_primitive_gradient(
                [ids](Tape& t, const std::vector<TensorPtr>& in) {
                    return embed_lookup(t, in[0], ids);
                },
                {table}, rng);
        }
        {
            auto a = random_tensor(r, c, rng);
            auto b = random_tensor(k, c, rng);
            check_primitive_gradient(
                [](Tape& t, const std::vector<TensorPtr>& in) { return concat_rows(t, in[0], in[1]); },
                {a, b}, rng);
        }
        {
            auto a = random_tensor(r + 2, c, rng);
            const int start = int(rng.uniform_int(2));
            check_primitive_gradient(
                [start, r](Tape& t, const std::vector<TensorPtr>& in) {
                    return slice_rows(t, in[0], start, r);
                },
                {a}, rng);
        }
        {
            auto logits = random_tensor(r, 4 + c, rng);
            std::vector<int> targets;
            for (int i = 0; i < r; ++i) targets.push_back(int(rng.uniform_int(4 + c)));
            check_primitive_gradient(
                [targets](Tape& t, const std::vector<TensorPtr>& in) {
                    return cross_entropy_rows(t, in[0], targets);
                },
                {logits}, rng);
        }
        {
            auto p = random_tensor(r, c, rng);
            auto q = random_tensor(r, c, rng);
            check_primitive_gradient(
                [](Tape& t, const std::vector<TensorPtr>& in) { return mse(t, in[0], in[1]); },
                {p, q}, rng);
        }
    }
}

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
    auto p = tensor_of({{1.0f, -2.0f}}, true);
    AdamState state;
    state.init({p}, AdamConfig{});
    const auto before = p->data;
    adam_step({p}, state);
    CHECK(p->data == before);
    CHECK(state.t == 1);
}

TEST_CASE("first adam step with unit gradient moves a scalar by about lr") {
    // m_hat = 1, v_hat = 1 after bias correction, so the update is
    // lr / (1 + eps) which is lr up to 1e-8.
    auto p = scalar_tensor(1.0f, true);
    p->grad[0] = 1.0f;
    AdamState state;
    AdamConfig cfg;
    cfg.lr = 0.001f;
    state.init({p}, cfg);
    adam_step({p}, state);
    CHECK(p->data[0] == Catch::Approx(1.0 - 0.001).epsilon(1e-5));
}

TEST_CASE("adam is deterministic from identical state") {
    Rng rng(5);
    auto make_run = [&](uint64_t seed) {
        Rng r(seed);
        auto p = random_tensor(4, 4, r);
        AdamState s;
        s.init({p}, AdamConfig{});
        for (int step = 0; step < 100; ++step) {
            for (size_t i = 0; i < p->data.size(); ++i)
                p->grad[i] = float(std::sin(double(step) + double(i)));
            adam_step({p}, s);
        }
        return p->data;
    };
    CHECK(make_run(99) == make_run(99));
}

TEST_CASE("finite_difference_check passes on a quadratic loss") {
    auto x = tensor_of({{0.3f, -1.2f, 0.7f}}, true);
    auto target = tensor_of({{1.0f, 0.0f, -1.0f}});
    // Gradients come from the f32 engine; the probe value is evaluated in
    // double so the central difference is exact for a quadratic.
    auto loss_fn = [&]() -> double {
        x->zero_grad();
        Tape tape;
        auto l = mse(tape, x, target);
        tape.backward(l);
        double acc = 0.0;
        for (int i = 0; i < 3; ++i) {
            const double d = double(x->data[i]) - double(target->data[i]);
            acc += d * d;
        }
        return acc / 3.0;
    };
    for (const double eps : {1e-4, 1e-3, 1e-2}) {
        auto report = finite_difference_check(loss_fn, {{"x", x}}, eps, 1e-3);
        INFO("eps " << eps << " max rel " << report.entries[0].max_rel_err);
        CHECK(report.pass);
    }
}

TEST_CASE("finite_difference_check flags a corrupted backward rule") {
    // A gelu clone whose derivative constant is deliberately off by 5%.
    auto bad_gelu = [](Tape& tape, const TensorPtr& a) {
        const float kC = 0.7978845608028654f, kA = 0.044715f;
        auto out = make_tensor(a->rows, a->cols, a->requires_grad);
        for (size_t i = 0; i < a->data.size(); ++i) {
            const float x = a->data[i];
            out->data[i] = 0.5f * x * (1.0f + std::tanh(kC * (x + kA * x * x * x)));
        }
        if (tape.recording && a->requires_grad) {
            tape.record(out, [a, out, kC, kA] {
                for (size_t i = 0; i < a->data.size(); ++i) {
                    const float x = a->data[i];
                    const float u = kC * (x + kA * x * x * x);
                    const float t = std::tanh(u);
                    const float du = kC * (1.0f + 3.0f * kA * x * x);
                    const float d = 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * du;
                    a->grad[i] += out->grad[i] * d * 1.05f;
                }
            });
        }
        return out;
    };

    auto x = tensor_of({{0.9f, -0.4f, 1.7f}}, true);
    auto loss_fn = [&]() -> double {
        x->zero_grad();
        Tape tape;
        auto y = bad_gelu(tape, x);
        auto l = mse(tape, y, full_tensor(1, 3, 0.0f));
        tape.backward(l);
        return double(l->data[0]);
    };
    auto report = finite_difference_check(loss_fn, {{"x", x}}, 1e-3, 1e-2);
    CHECK_FALSE(report.pass);
}

TEST_CASE("gradient clipping caps the global norm") {
    auto a = tensor_of({{3.0f, 4.0f}}, true);
    a->grad = {3.0f, 4.0f};  // norm 5
    const double before = clip_global_norm({a}, 1.0f);
    CHECK(before == Catch::Approx(5.0));
    double after = 0.0;
    for (const float g : a->grad) after += double(g) * g;
    CHECK(std::sqrt(after) == Catch::Approx(1.0).margin(1e-5));
}
