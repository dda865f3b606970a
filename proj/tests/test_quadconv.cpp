#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "quadranet/autograd.hpp"
#include "quadranet/quadconv.hpp"

using namespace quadranet;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
    return t;
}

QuadraticConv random_depthwise(int c, int k, Rng& rng, bool with_bias = true) {
    QuadraticConv qc;
    int pad = k / 2;
    auto mk = [&](bool bias) {
        ConvKernel kern;
        kern.weights = random_tensor({c, 1, k, k}, rng);
        kern.groups = c;
        kern.stride = 1;
        kern.padding = pad;
        if (bias) kern.bias = random_tensor({c}, rng);
        return kern;
    };
    qc.fa = mk(false);
    qc.fb = mk(false);
    qc.fc = mk(with_bias);
    return qc;
}

}  // namespace

TEST_CASE("zero f_a degenerates to the linear conv") {
    Rng rng(1);
    QuadraticConv qc = random_depthwise(3, 3, rng);
    for (std::size_t i = 0; i < qc.fa.weights.size(); ++i) qc.fa.weights[i] = 0.0;
    Tensor x = random_tensor({2, 3, 5, 5}, rng);
    Tensor y = quadconv_forward(qc, x);
    Tensor linear = conv2d(x, qc.fc);
    CHECK(max_abs_diff(y, linear) == 0.0);
}

TEST_CASE("delta kernels square the input") {
    int c = 2, k = 3;
    QuadraticConv qc;
    auto delta = [&]() {
        ConvKernel kern;
        kern.weights = Tensor::zeros(Shape{c, 1, k, k});
        for (int ci = 0; ci < c; ++ci) kern.weights.data()[(std::size_t)ci * k * k + 4] = 1.0;  // center tap
        kern.groups = c;
        kern.padding = 1;
        return kern;
    };
    qc.fa = delta();
    qc.fb = delta();
    qc.fc = delta();
    for (std::size_t i = 0; i < qc.fc.weights.size(); ++i) qc.fc.weights[i] = 0.0;
    Rng rng(2);
    Tensor x = random_tensor({1, c, 4, 4}, rng);
    Tensor y = quadconv_forward(qc, x);
    CHECK(max_abs_diff(y, hadamard(x, x)) <= 1e-15);
}

TEST_CASE("tensor form equals the per-pixel oracle") {
    Rng rng(42);
    SUBCASE("7x7 on (1,4,14,14)") {
        QuadraticConv qc = random_depthwise(4, 7, rng);
        Tensor x = random_tensor({1, 4, 14, 14}, rng);
        CHECK(max_abs_diff(quadconv_forward(qc, x), quadconv_oracle_forward(qc, x)) <= 1e-12);
    }
    SUBCASE("assorted kernels and shapes") {
        for (int k : {1, 3, 5}) {
            QuadraticConv qc = random_depthwise(3, k, rng);
            Tensor x = random_tensor({2, 3, 9, 9}, rng);
            CHECK(max_abs_diff(quadconv_forward(qc, x), quadconv_oracle_forward(qc, x)) <= 1e-12);
        }
    }
}

TEST_CASE("oracle 1x1 reduces to the elementwise neuron") {
    Rng rng(9);
    QuadraticConv qc = random_depthwise(3, 1, rng);
    Tensor x = random_tensor({1, 3, 4, 4}, rng);
    Tensor y = quadconv_oracle_forward(qc, x);
    for (int c = 0; c < 3; ++c) {
        double wa = qc.fa.weights[(std::size_t)c], wb = qc.fb.weights[(std::size_t)c],
               wc = qc.fc.weights[(std::size_t)c];
        double bias = (*qc.fc.bias)[(std::size_t)c];
        for (int h = 0; h < 4; ++h)
            for (int w = 0; w < 4; ++w) {
                double v = x.at4(0, c, h, w);
                CHECK(y.at4(0, c, h, w) == doctest::Approx((wa * v) * (wb * v) + wc * v + bias).epsilon(1e-13));
            }
    }
}

TEST_CASE("oracle on zero input returns the bias") {
    Rng rng(10);
    QuadraticConv qc = random_depthwise(2, 3, rng);
    Tensor x = Tensor::zeros(Shape{1, 2, 4, 4});
    Tensor y = quadconv_oracle_forward(qc, x);
    for (int c = 0; c < 2; ++c)
        for (int h = 0; h < 4; ++h)
            for (int w = 0; w < 4; ++w) CHECK(y.at4(0, c, h, w) == doctest::Approx((*qc.fc.bias)[(std::size_t)c]));
}

TEST_CASE("product-of-sums expansion identity") {
    // expanding the product of two k^2-tap sums equals (sum w_a x)(sum w_b x)
    Rng rng(21);
    QuadraticConv qc = random_depthwise(1, 3, rng, false);
    Tensor x = random_tensor({1, 1, 5, 5}, rng);
    QuadConvState state;
    quadconv_forward(qc, x, &state);
    Tensor quad_by_factored = hadamard(state.fa_out, state.fb_out);
    Tensor fc = conv2d(x, qc.fc);
    Tensor quad_by_double_sum = sub(quadconv_oracle_forward(qc, x), fc);
    CHECK(max_abs_diff(quad_by_factored, quad_by_double_sum) <= 1e-12);
}

TEST_CASE("input-adaptive weight map") {
    SUBCASE("constant input, all-ones taps, interior position") {
        int c = 1, k = 3;
        QuadraticConv qc;
        auto ones = [&]() {
            ConvKernel kern;
            kern.weights = Tensor::ones(Shape{c, 1, k, k});
            kern.groups = c;
            kern.padding = 1;
            return kern;
        };
        qc.fa = ones();
        qc.fb = ones();
        qc.fc = ones();
        Tensor x = Tensor::full(Shape{1, 1, 5, 5}, 0.7);
        Tensor q = input_adaptive_weight(qc, x, 0, 0, 2, 2);
        for (std::size_t i = 0; i < q.size(); ++i) CHECK(q[i] == doctest::Approx(9.0 * 0.7));
    }
    SUBCASE("zero W_b kills the adaptive weight") {
        Rng rng(4);
        QuadraticConv qc = random_depthwise(2, 3, rng);
        for (std::size_t i = 0; i < qc.fb.weights.size(); ++i) qc.fb.weights[i] = 0.0;
        Tensor x = random_tensor({1, 2, 5, 5}, rng);
        Tensor q = input_adaptive_weight(qc, x, 0, 1, 2, 3);
        for (std::size_t i = 0; i < q.size(); ++i) CHECK(q[i] == 0.0);
    }
    SUBCASE("contract: sum_j q_ij x_j equals forward minus the linear path") {
        Rng rng(5);
        int c = 3, k = 3;
        QuadraticConv qc = random_depthwise(c, k, rng);
        Tensor x = random_tensor({1, c, 6, 6}, rng);
        Tensor full = quadconv_forward(qc, x);
        Tensor linear = conv2d(x, qc.fc);
        for (int ci = 0; ci < c; ++ci)
            for (int oh = 0; oh < 6; ++oh)
                for (int ow = 0; ow < 6; ++ow) {
                    Tensor q = input_adaptive_weight(qc, x, 0, ci, oh, ow);
                    double acc = 0.0;
                    for (int kh = 0; kh < k; ++kh)
                        for (int kw = 0; kw < k; ++kw) {
                            int ih = oh + kh - 1, iw = ow + kw - 1;
                            if (ih < 0 || ih >= 6 || iw < 0 || iw >= 6) continue;
                            acc += q.at2(kh, kw) * x.at4(0, ci, ih, iw);
                        }
                    CHECK(acc == doctest::Approx(full.at4(0, ci, oh, ow) - linear.at4(0, ci, oh, ow))
                                     .epsilon(1e-10));
                }
    }
    SUBCASE("out-of-bounds position errors") {
        Rng rng(6);
        QuadraticConv qc = random_depthwise(2, 3, rng);
        Tensor x = random_tensor({1, 2, 4, 4}, rng);
        CHECK_THROWS(input_adaptive_weight(qc, x, 0, 0, 4, 0));
        CHECK_THROWS(input_adaptive_weight(qc, x, 0, 2, 0, 0));
    }
}

TEST_CASE("backward_optimized") {
    Rng rng(33);
    SUBCASE("zero upstream gives zero grads") {
        QuadraticConv qc = random_depthwise(2, 3, rng);
        Tensor x = random_tensor({1, 2, 4, 4}, rng);
        QuadConvState state;
        quadconv_forward(qc, x, &state);
        Tensor upstream = Tensor::zeros(x.shape());
        QuadConvGrads grads = quadconv_backward_optimized(qc, x, state, upstream);
        CHECK(sum(hadamard(grads.ga, grads.ga)) == 0.0);
        CHECK(sum(hadamard(grads.gx, grads.gx)) == 0.0);
        CHECK(sum(hadamard(grads.gbias, grads.gbias)) == 0.0);
    }
    SUBCASE("1x1 scalar calculus: dy/dw_a = w_b * s^2") {
        QuadraticConv qc = random_depthwise(1, 1, rng);
        double s = 1.7;
        Tensor x = Tensor::full(Shape{1, 1, 1, 1}, s);
        QuadConvState state;
        quadconv_forward(qc, x, &state);
        Tensor upstream = Tensor::ones(x.shape());
        QuadConvGrads grads = quadconv_backward_optimized(qc, x, state, upstream);
        double wb = qc.fb.weights[0];
        CHECK(grads.ga[0] == doctest::Approx(wb * s * s).epsilon(1e-13));
    }
    SUBCASE("matches the full-retention tape") {
        QuadraticConv qc = random_depthwise(3, 5, rng);
        Tensor x = random_tensor({2, 3, 8, 8}, rng);
        QuadConvState state;
        quadconv_forward(qc, x, &state);
        Tensor upstream = random_tensor(x.shape(), rng);

        QuadConvGrads fast = quadconv_backward_optimized(qc, x, state, upstream);

        // naive tape retaining all four states
        Tape tape;
        NodeId nx = tape.leaf(x);
        NodeId nwa = tape.leaf(qc.fa.weights);
        NodeId nwb = tape.leaf(qc.fb.weights);
        NodeId nwc = tape.leaf(qc.fc.weights);
        NodeId nb = tape.leaf(*qc.fc.bias);
        NodeId fa = tape.conv2d(nx, nwa, -1, 3, 1, 2);
        NodeId fb = tape.conv2d(nx, nwb, -1, 3, 1, 2);
        NodeId fc = tape.conv2d(nx, nwc, nb, 3, 1, 2);
        NodeId out = tape.add(tape.hadamard(fa, fb), fc);
        NodeId loss = tape.sum(tape.hadamard(out, tape.leaf(upstream)));
        tape.backward(loss);

        CHECK(max_abs_diff(fast.ga, tape.grad(nwa)) <= 1e-12);
        CHECK(max_abs_diff(fast.gb, tape.grad(nwb)) <= 1e-12);
        CHECK(max_abs_diff(fast.gc, tape.grad(nwc)) <= 1e-12);
        CHECK(max_abs_diff(fast.gbias, tape.grad(nb)) <= 1e-12);
        CHECK(max_abs_diff(fast.gx, tape.grad(nx)) <= 1e-12);
    }
    SUBCASE("missing retained state errors") {
        QuadraticConv qc = random_depthwise(2, 3, rng);
        Tensor x = random_tensor({1, 2, 4, 4}, rng);
        QuadConvState empty;
        CHECK_THROWS_WITH_AS(quadconv_backward_optimized(qc, x, empty, Tensor::ones(x.shape())),
                             doctest::Contains("release-rule"), std::invalid_argument);
    }
}

TEST_CASE("zeroed quadratic path matches a plain conv layer exactly") {
    Rng rng(8);
    QuadraticConv qc = random_depthwise(3, 3, rng);
    for (std::size_t i = 0; i < qc.fa.weights.size(); ++i) qc.fa.weights[i] = 0.0;
    for (std::size_t i = 0; i < qc.fb.weights.size(); ++i) qc.fb.weights[i] = 0.0;
    Tensor x = random_tensor({2, 3, 6, 6}, rng);
    QuadConvState state;
    Tensor y = quadconv_forward(qc, x, &state);
    CHECK(max_abs_diff(y, conv2d(x, qc.fc)) == 0.0);

    Tensor upstream = random_tensor(x.shape(), rng);
    QuadConvGrads grads = quadconv_backward_optimized(qc, x, state, upstream);
    Tensor gw_plain = conv2d_weight_grad(x, upstream, qc.fc.weights.shape(), 3, 1, 1);
    Tensor gx_plain = conv2d_input_grad(upstream, qc.fc.weights, x.shape(), 3, 1, 1);
    CHECK(max_abs_diff(grads.gc, gw_plain) == 0.0);
    CHECK(max_abs_diff(grads.gx, gx_plain) == 0.0);
}

TEST_CASE("quadratic pointwise parameter accounting") {
    // 3*C_in*C_out + C_out quadratic vs C_in*C_out + C_out linear
    int cin = 8, cout = 16;
    std::size_t quad_params = 3ull * cin * cout + cout;
    std::size_t linear_params = 1ull * cin * cout + cout;
    CHECK(quad_params == 400);
    CHECK(linear_params == 144);
    CHECK(quad_params - linear_params == 2ull * cin * cout);
}

TEST_CASE("mismatched kernel geometry is rejected") {
    Rng rng(3);
    QuadraticConv qc = random_depthwise(2, 3, rng);
    qc.fb.padding = 0;
    Tensor x = random_tensor({1, 2, 4, 4}, rng);
    CHECK_THROWS(quadconv_forward(qc, x));
}
