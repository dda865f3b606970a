#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "quadranet/autograd.hpp"
#include "quadranet/gradcheck.hpp"

using namespace quadranet;

namespace {
Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
    return t;
}
}  // namespace

TEST_CASE("backward of sum gives ones") {
    Rng rng(1);
    Tensor x = random_tensor({3, 4}, rng);
    Tape tape;
    NodeId nx = tape.leaf(x);
    tape.backward(tape.sum(nx));
    const Tensor& g = tape.grad(nx);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 1.0);
}

TEST_CASE("backward of sum(x (.) x) gives 2x exactly") {
    Rng rng(2);
    Tensor x = random_tensor({2, 3, 2, 2}, rng);
    Tape tape;
    NodeId nx = tape.leaf(x);
    tape.backward(tape.sum(tape.hadamard(nx, nx)));
    const Tensor& g = tape.grad(nx);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 2.0 * x[i]);
}

TEST_CASE("non-scalar loss is rejected") {
    Tape tape;
    NodeId nx = tape.leaf(Tensor::ones(Shape{2, 2}));
    CHECK_THROWS_WITH_AS(tape.backward(nx), doctest::Contains("scalar"), std::invalid_argument);
}

TEST_CASE("finite differences oracle") {
    SUBCASE("f = sum") {
        Rng rng(3);
        Tensor x = random_tensor({5}, rng);
        Tensor g = finite_difference_grad([](const Tensor& t) { return sum(t); }, x, 1e-5);
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::fabs(g[i] - 1.0) < 1e-9);
    }
    SUBCASE("f = 0.5 sum x^2 at [1,2]") {
        Tensor x(Shape{2}, {1.0, 2.0});
        Tensor g = finite_difference_grad([](const Tensor& t) { return 0.5 * sum(hadamard(t, t)); }, x, 1e-5);
        CHECK(std::fabs(g[0] - 1.0) < 1e-8);
        CHECK(std::fabs(g[1] - 2.0) < 1e-8);
    }
    SUBCASE("quadratic neuron forward as a tape graph") {
        // wa.x * wb.x + wc.x via hadamard of pointwise convs on a 1x1 map
        Rng rng(4);
        Tensor x = random_tensor({1, 3, 1, 1}, rng);
        Tensor wa = random_tensor({1, 3, 1, 1}, rng);
        Tensor wb = random_tensor({1, 3, 1, 1}, rng);
        Tensor wc = random_tensor({1, 3, 1, 1}, rng);

        Tape tape;
        NodeId nx = tape.leaf(x);
        NodeId nwa = tape.leaf(wa), nwb = tape.leaf(wb), nwc = tape.leaf(wc);
        NodeId out = tape.add(tape.hadamard(tape.conv2d(nx, nwa, -1, 1, 1, 0), tape.conv2d(nx, nwb, -1, 1, 1, 0)),
                              tape.conv2d(nx, nwc, -1, 1, 1, 0));
        tape.backward(tape.sum(out));

        Tensor fd = finite_difference_grad(
            [&](const Tensor& probe) {
                Tape t2;
                NodeId px = t2.leaf(probe);
                NodeId o = t2.add(
                    t2.hadamard(t2.conv2d(px, t2.leaf(wa), -1, 1, 1, 0), t2.conv2d(px, t2.leaf(wb), -1, 1, 1, 0)),
                    t2.conv2d(px, t2.leaf(wc), -1, 1, 1, 0));
                return t2.value(t2.sum(o))[0];
            },
            x, 1e-5);
        const Tensor& analytic = tape.grad(nx);
        for (std::size_t i = 0; i < fd.size(); ++i)
            CHECK(std::fabs(analytic[i] - fd[i]) / (std::fabs(analytic[i]) + 1e-8) < 1e-5);
    }
}

TEST_CASE("state reports follow the paper's accounting") {
    Rng rng(5);
    int c = 4, h = 6, w = 6;
    std::size_t e = static_cast<std::size_t>(c) * h * w;

    SUBCASE("single quadratic conv layer: forward 4E, retained 2E") {
        Tape tape;
        NodeId nx = tape.leaf(random_tensor({1, c, h, w}, rng));
        NodeId wa = tape.leaf(random_tensor({c, 1, 3, 3}, rng));
        NodeId wb = tape.leaf(random_tensor({c, 1, 3, 3}, rng));
        NodeId wc = tape.leaf(random_tensor({c, 1, 3, 3}, rng));
        tape.quad_conv(nx, wa, wb, wc, -1, c, 1, 1);
        CHECK(tape.state_total(Phase::Forward) == 4 * e);
        CHECK(tape.state_total(Phase::Backward) == 2 * e);
        auto report = tape.state_report(Phase::Backward);
        CHECK(report.size() == 2);
        CHECK(report.at("quadconv.fa") == e);
        CHECK(report.at("quadconv.fb") == e);
    }
    SUBCASE("single plain depthwise conv: forward 1E") {
        Tape tape;
        NodeId nx = tape.leaf(random_tensor({1, c, h, w}, rng));
        NodeId wk = tape.leaf(random_tensor({c, 1, 3, 3}, rng));
        tape.conv2d(nx, wk, -1, c, 1, 1);
        CHECK(tape.state_total(Phase::Forward) == e);
    }
    SUBCASE("windowed attention: (M^2+3) E") {
        int m = 3;
        Tape tape;
        NodeId nx = tape.leaf(random_tensor({1, c, h, w}, rng));
        NodeId wq = tape.leaf(random_tensor({c, c}, rng));
        NodeId wk = tape.leaf(random_tensor({c, c}, rng));
        NodeId wv = tape.leaf(random_tensor({c, c}, rng));
        NodeId wo = tape.leaf(random_tensor({c, c}, rng));
        tape.window_attention(nx, wq, wk, wv, wo, m);
        CHECK(tape.state_total(Phase::Forward) == (static_cast<std::size_t>(m) * m + 3) * e);
    }
}

TEST_CASE("released buffers are never read by the optimized backward") {
    Rng rng(6);
    int c = 3;
    Tensor x = random_tensor({2, c, 5, 5}, rng);
    Tensor wa = random_tensor({c, 1, 3, 3}, rng);
    Tensor wb = random_tensor({c, 1, 3, 3}, rng);
    Tensor wc = random_tensor({c, 1, 3, 3}, rng);

    auto run = [&](bool poison) {
        Tape tape;
        NodeId nx = tape.leaf(x);
        NodeId na = tape.leaf(wa), nb = tape.leaf(wb), nc = tape.leaf(wc);
        NodeId out = tape.quad_conv(nx, na, nb, nc, -1, c, 1, 1);
        if (poison) tape.poison_released(out);
        tape.backward(tape.sum(out));
        return std::tuple<Tensor, Tensor, Tensor, Tensor>(tape.grad(nx), tape.grad(na), tape.grad(nb),
                                                          tape.grad(nc));
    };
    auto [gx0, ga0, gb0, gc0] = run(false);
    auto [gx1, ga1, gb1, gc1] = run(true);
    CHECK(gx1.all_finite());
    CHECK(max_abs_diff(gx0, gx1) == 0.0);
    CHECK(max_abs_diff(ga0, ga1) == 0.0);
    CHECK(max_abs_diff(gb0, gb1) == 0.0);
    CHECK(max_abs_diff(gc0, gc1) == 0.0);
}

TEST_CASE("backward is deterministic") {
    Rng rng(7);
    Tensor x = random_tensor({1, 4, 6, 6}, rng);
    Tensor w = random_tensor({4, 1, 3, 3}, rng);
    Tape tape;
    NodeId nx = tape.leaf(x);
    NodeId nw = tape.leaf(w);
    NodeId y = tape.conv2d(nx, nw, -1, 4, 1, 1);
    NodeId loss = tape.sum(tape.hadamard(y, y));
    tape.backward(loss);
    Tensor g1 = tape.grad(nx);
    tape.backward(loss);
    Tensor g2 = tape.grad(nx);
    CHECK(g1.values() == g2.values());
}

TEST_CASE("fan-out accumulates gradients by addition") {
    Tensor x(Shape{2}, {3.0, -1.0});
    Tape tape;
    NodeId nx = tape.leaf(x);
    NodeId y = tape.add(nx, nx);  // y = 2x
    tape.backward(tape.sum(y));
    const Tensor& g = tape.grad(nx);
    CHECK(g[0] == 2.0);
    CHECK(g[1] == 2.0);
}

TEST_CASE("gradcheck suite passes on one quick seed") {
    GradCheckReport report = run_gradient_checks(100, 1);
    INFO(report.summary());
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-5);
}
