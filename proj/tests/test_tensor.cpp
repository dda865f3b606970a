#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "quadranet/tensor.hpp"

using namespace quadranet;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
    return t;
}

// independent oracle: direct cross-correlation with explicit loops over every
// index, including groups, stride and zero padding
Tensor reference_conv(const Tensor& x, const Tensor& w, const Tensor* bias, int groups, int stride, int pad) {
    int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    int cout = w.dim(0), cpg = w.dim(1), k = w.dim(2);
    int ho = (h + 2 * pad - k) / stride + 1;
    int wo = (wd + 2 * pad - k) / stride + 1;
    int cout_per_group = cout / groups;
    Tensor out(Shape{n, cout, ho, wo});
    for (int ni = 0; ni < n; ++ni)
        for (int co = 0; co < cout; ++co) {
            int g = co / cout_per_group;
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow) {
                    double acc = bias ? (*bias)[(std::size_t)co] : 0.0;
                    for (int cp = 0; cp < cpg; ++cp) {
                        int ci = g * cpg + cp;
                        if (ci >= cin) continue;
                        for (int kh = 0; kh < k; ++kh)
                            for (int kw = 0; kw < k; ++kw) {
                                int ih = oh * stride + kh - pad;
                                int iw = ow * stride + kw - pad;
                                if (ih < 0 || ih >= h || iw < 0 || iw >= wd) continue;
                                acc += w.data()[(((std::size_t)co * cpg + cp) * k + kh) * k + kw] *
                                       x.at4(ni, ci, ih, iw);
                            }
                    }
                    out.at4(ni, co, oh, ow) = acc;
                }
        }
    return out;
}

// exact Gaussian CDF by Simpson quadrature (independent of erf/tanh paths)
double gauss_cdf_quadrature(double x) {
    const double lo = -12.0;
    const int steps = 20000;
    double h = (x - lo) / steps;
    auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * 3.14159265358979323846); };
    double acc = pdf(lo) + pdf(x);
    for (int i = 1; i < steps; ++i) acc += (i % 2 ? 4.0 : 2.0) * pdf(lo + i * h);
    return acc * h / 3.0;
}

}  // namespace

TEST_CASE("tensor shape and data invariants") {
    Tensor t(Shape{2, 3, 4, 5});
    CHECK(t.size() == 120);
    CHECK_THROWS(Tensor(Shape{2, 0, 3}));
    CHECK_THROWS(Tensor(Shape{2, 2}, std::vector<double>{1.0}));

    // row-major flattening round-trips: index <-> (n,c,h,w) bijective
    std::vector<bool> seen(t.size(), false);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 5; ++w) {
                    std::size_t off = t.offset4(n, c, h, w);
                    REQUIRE(off < t.size());
                    CHECK(!seen[off]);
                    seen[off] = true;
                }
}

TEST_CASE("conv2d box filter counting") {
    // 1x1x3x3 ones, depthwise 3x3 ones kernel, padding 1 -> center 9, corners 4
    Tensor x = Tensor::ones(Shape{1, 1, 3, 3});
    ConvKernel k;
    k.weights = Tensor::ones(Shape{1, 1, 3, 3});
    k.groups = 1;
    k.stride = 1;
    k.padding = 1;
    Tensor y = conv2d(x, k);
    CHECK(y.at4(0, 0, 1, 1) == doctest::Approx(9.0));
    CHECK(y.at4(0, 0, 0, 0) == doctest::Approx(4.0));
    CHECK(y.at4(0, 0, 0, 2) == doctest::Approx(4.0));
    CHECK(y.at4(0, 0, 2, 2) == doctest::Approx(4.0));
    CHECK(y.at4(0, 0, 0, 1) == doctest::Approx(6.0));
}

TEST_CASE("conv2d identity pointwise kernel") {
    Rng rng(7);
    Tensor x = random_tensor({2, 1, 4, 4}, rng);
    ConvKernel k;
    k.weights = Tensor::ones(Shape{1, 1, 1, 1});
    Tensor y = conv2d(x, k);
    CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d equals nested-loop oracle") {
    Rng rng(123);
    SUBCASE("random depthwise") {
        Tensor x = random_tensor({2, 4, 8, 8}, rng);
        Tensor w = random_tensor({4, 1, 3, 3}, rng);
        Tensor y = conv2d_raw(x, w, nullptr, 4, 1, 1);
        Tensor ref = reference_conv(x, w, nullptr, 4, 1, 1);
        CHECK(max_abs_diff(y, ref) <= 1e-12);
    }
    SUBCASE("shapes up to (2,8,16,16), strides and groups") {
        struct Case {
            Shape xs, ws;
            int groups, stride, pad;
        };
        const Case cases[] = {
            {{2, 8, 16, 16}, {8, 1, 5, 5}, 8, 1, 2},
            {{1, 3, 9, 9}, {6, 3, 3, 3}, 1, 1, 1},
            {{2, 3, 16, 16}, {5, 3, 4, 4}, 1, 4, 0},
            {{1, 4, 8, 8}, {8, 2, 2, 2}, 2, 2, 0},
            {{2, 6, 7, 7}, {6, 1, 7, 7}, 6, 1, 3},
            {{1, 2, 5, 5}, {4, 2, 1, 1}, 1, 1, 0},
        };
        for (const Case& c : cases) {
            Tensor x = random_tensor(c.xs, rng);
            Tensor w = random_tensor(c.ws, rng);
            Tensor b = random_tensor({c.ws[0]}, rng);
            Tensor y = conv2d_raw(x, w, &b, c.groups, c.stride, c.pad);
            Tensor ref = reference_conv(x, w, &b, c.groups, c.stride, c.pad);
            CHECK(max_abs_diff(y, ref) <= 1e-12);
        }
    }
}

TEST_CASE("conv2d shape errors name the offending dimensions") {
    Tensor x = Tensor::ones(Shape{1, 3, 4, 4});
    ConvKernel k;
    k.weights = Tensor::ones(Shape{4, 2, 3, 3});
    k.groups = 1;
    CHECK_THROWS_WITH_AS(conv2d(x, k), doctest::Contains("3"), std::invalid_argument);
}

TEST_CASE("ops are pure") {
    Rng rng(5);
    Tensor x = random_tensor({1, 2, 4, 4}, rng);
    std::vector<double> before = x.values();
    Tensor w = random_tensor({2, 1, 3, 3}, rng);
    (void)conv2d_raw(x, w, nullptr, 2, 1, 1);
    (void)gelu(x);
    (void)softmax_lastdim(x);
    (void)hadamard(x, x);
    (void)layer_norm(x, Tensor::ones(Shape{2}), Tensor::zeros(Shape{2}), 1e-6);
    CHECK(x.values() == before);
}

TEST_CASE("layer_norm") {
    SUBCASE("constant input maps to beta") {
        Tensor x = Tensor::full(Shape{1, 3, 2, 2}, 4.2);
        Tensor y = layer_norm(x, Tensor::ones(Shape{3}), Tensor::zeros(Shape{3}), 1e-6);
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(0.0));
    }
    SUBCASE("two-channel symmetry") {
        Tensor x(Shape{1, 2, 1, 1}, {1.0, 3.0});
        Tensor y = layer_norm(x, Tensor::ones(Shape{2}), Tensor::zeros(Shape{2}), 1e-12);
        CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-9));
        CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("output statistics oracle") {
        Rng rng(11);
        Tensor x = random_tensor({2, 8, 4, 4}, rng, 3.0);
        Tensor y = layer_norm(x, Tensor::ones(Shape{8}), Tensor::zeros(Shape{8}), 1e-10);
        int c = 8;
        for (int n = 0; n < 2; ++n)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 4; ++w) {
                    double mean = 0, var = 0;
                    for (int ci = 0; ci < c; ++ci) mean += y.at4(n, ci, h, w);
                    mean /= c;
                    for (int ci = 0; ci < c; ++ci) {
                        double d = y.at4(n, ci, h, w) - mean;
                        var += d * d;
                    }
                    var /= c;
                    CHECK(std::fabs(mean) < 1e-10);
                    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
                }
    }
    SUBCASE("channel mismatch errors") {
        Tensor x = Tensor::ones(Shape{1, 3, 2, 2});
        CHECK_THROWS(layer_norm(x, Tensor::ones(Shape{4}), Tensor::zeros(Shape{4}), 1e-6));
    }
}

TEST_CASE("gelu") {
    Tensor zero(Shape{1}, {0.0});
    CHECK(gelu(zero)[0] == 0.0);

    Tensor big(Shape{2}, {6.0, 9.0});
    Tensor gb = gelu(big);
    CHECK(std::fabs(gb[0] - 6.0) < 1e-6);
    CHECK(std::fabs(gb[1] - 9.0) < 1e-6);

    // oracle: numeric integration of the exact Gaussian CDF
    double exact_at_1 = 1.0 * gauss_cdf_quadrature(1.0);
    CHECK(exact_at_1 == doctest::Approx(0.8413).epsilon(1e-3));
    Tensor one(Shape{1}, {1.0});
    CHECK(std::fabs(gelu(one)[0] - 0.8412) < 2e-3);
    // tanh approximation stays close to the exact CDF on a grid
    for (double x = -4.0; x <= 4.0; x += 0.5) {
        Tensor t(Shape{1}, {x});
        CHECK(std::fabs(gelu(t)[0] - x * gauss_cdf_quadrature(x)) < 2e-3);
    }
    // monotone on the tested grid (right of the dip at x ~ -0.84)
    double prev = -1e9;
    for (double x = -0.7; x <= 6.0; x += 0.1) {
        Tensor t(Shape{1}, {x});
        double v = gelu(t)[0];
        CHECK(v >= prev - 1e-12);
        prev = v;
    }
}

TEST_CASE("hadamard identities") {
    Rng rng(3);
    Tensor a = random_tensor({2, 3, 2, 2}, rng);
    Tensor ones = Tensor::ones(a.shape());
    Tensor zeros = Tensor::zeros(a.shape());
    CHECK(max_abs_diff(hadamard(a, ones), a) == 0.0);
    CHECK(max_abs_diff(hadamard(a, zeros), zeros) == 0.0);
    Tensor b = random_tensor(a.shape(), rng);
    CHECK(max_abs_diff(hadamard(a, b), hadamard(b, a)) == 0.0);
    CHECK_THROWS(hadamard(a, Tensor::ones(Shape{2, 2})));
}

TEST_CASE("softmax_lastdim") {
    Tensor uniform(Shape{1, 4}, {2.0, 2.0, 2.0, 2.0});
    Tensor u = softmax_lastdim(uniform);
    for (int j = 0; j < 4; ++j) CHECK(u.at2(0, j) == doctest::Approx(0.25).epsilon(1e-12));

    Tensor row(Shape{1, 2}, {0.0, std::log(3.0)});
    Tensor r = softmax_lastdim(row);
    CHECK(r.at2(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(r.at2(0, 1) == doctest::Approx(0.75).epsilon(1e-12));

    Rng rng(17);
    Tensor x = random_tensor({3, 7}, rng, 5.0);
    Tensor s1 = softmax_lastdim(x);
    for (int i = 0; i < 3; ++i) {
        double total = 0;
        for (int j = 0; j < 7; ++j) total += s1.at2(i, j);
        CHECK(std::fabs(total - 1.0) <= 1e-12);
    }
    // shift invariance
    Tensor shifted = x;
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 13.5;
    CHECK(max_abs_diff(softmax_lastdim(shifted), s1) <= 1e-12);
}

TEST_CASE("rng determinism") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
    Rng c(42), d(42);
    for (int i = 0; i < 10; ++i) CHECK(c.normal() == d.normal());
    for (int i = 0; i < 100; ++i) {
        int v = c.uniform_int(10);
        CHECK(v >= 0);
        CHECK(v < 10);
    }
}
