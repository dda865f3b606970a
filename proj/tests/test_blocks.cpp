#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "quadranet/blocks.hpp"

using namespace quadranet;

namespace {
Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
    return t;
}

void zero(Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
}
}  // namespace

TEST_CASE("block choice strings round-trip") {
    for (const char* s : {"Q7x4", "Q3x2", "C5x4", "SKIPx2", "ATTN7x4", "ID", "REC3k7x4"}) {
        BlockChoice c = parse_block_choice(s);
        CHECK(block_choice_str(c) == s);
    }
    CHECK_THROWS(parse_block_choice("Z9"));
    CHECK_THROWS(parse_block_choice("Q7"));
}

TEST_CASE("identity at zero mixer weights") {
    Rng rng(1);
    Tensor x = random_tensor({2, 4, 8, 8}, rng);

    SUBCASE("quadra") {
        QuadraBlockParams p = QuadraBlockParams::init(4, 3, 2, 0, rng);
        zero(p.wa);
        zero(p.wb);
        zero(p.wc);
        zero(p.qbias);
        zero(p.pw2_w);
        zero(p.pw2_b);
        CHECK(max_abs_diff(quadrablock_forward(p, x), x) == 0.0);
    }
    SUBCASE("conv") {
        ConvBlockParams p = ConvBlockParams::init(4, 3, 2, rng);
        zero(p.dw_w);
        zero(p.dw_b);
        zero(p.pw2_w);
        zero(p.pw2_b);
        CHECK(max_abs_diff(convblock_forward(p, x), x) == 0.0);
    }
    SUBCASE("skip") {
        SkipBlockParams p = SkipBlockParams::init(4, 2, rng);
        zero(p.pw2_w);
        zero(p.pw2_b);
        CHECK(max_abs_diff(skipblock_forward(p, x), x) == 0.0);
    }
    SUBCASE("attention") {
        AttnBlockParams p = AttnBlockParams::init(4, 2, 2, rng);
        zero(p.wo);
        zero(p.pw2_w);
        zero(p.pw2_b);
        CHECK(max_abs_diff(attnblock_forward(p, x), x) == 0.0);
    }
}

TEST_CASE("blocks preserve shape") {
    Rng rng(2);
    Tensor x = random_tensor({1, 8, 14, 14}, rng);
    QuadraBlockParams q = QuadraBlockParams::init(8, 7, 4, 0, rng);
    CHECK(quadrablock_forward(q, x).shape() == x.shape());
    ConvBlockParams c = ConvBlockParams::init(8, 7, 4, rng);
    CHECK(convblock_forward(c, x).shape() == x.shape());
    SkipBlockParams s = SkipBlockParams::init(8, 4, rng);
    CHECK(skipblock_forward(s, x).shape() == x.shape());
    AttnBlockParams a = AttnBlockParams::init(8, 7, 4, rng);
    CHECK(attnblock_forward(a, x).shape() == x.shape());
    CHECK_THROWS(quadrablock_forward(q, random_tensor({1, 5, 14, 14}, rng)));
}

TEST_CASE("quadra block parameter count matches the closed-form example") {
    Rng rng(3);
    QuadraBlockParams p = QuadraBlockParams::init(64, 7, 4, 0, rng);
    std::size_t count = 0;
    for (ParamRef ref : p.parameters()) count += ref.tensor->size();
    // quad 3*49*64+64 = 9472; 2 LN = 256; PW1 64*256+256 = 16640; PW2 256*64+64 = 16448
    CHECK(count == 42816);
}

TEST_CASE("skip block has zero spatial-mixer parameters") {
    Rng rng(4);
    SkipBlockParams p = SkipBlockParams::init(8, 4, rng);
    for (ParamRef ref : p.parameters()) {
        CAPTURE(ref.name);
        CHECK(ref.name.rfind("dw", 0) != 0);
        CHECK(ref.name.rfind("quad", 0) != 0);
        CHECK(ref.name.rfind("attn", 0) != 0);
    }
}

TEST_CASE("window attention behaviors") {
    Rng rng(5);
    SUBCASE("zero W_Q gives uniform attention: window-mean of V rows") {
        int c = 3, m = 2;
        AttnBlockParams p = AttnBlockParams::init(c, m, 2, rng);
        zero(p.wq);
        Tensor x = random_tensor({1, c, 4, 4}, rng);
        Tensor y = window_attention_forward(p, x);
        // expected: out = Wo * mean_of_window(V) for every token in the window
        for (int wh = 0; wh < 2; ++wh)
            for (int ww = 0; ww < 2; ++ww) {
                std::vector<double> vbar(static_cast<std::size_t>(c), 0.0);
                for (int th = 0; th < m; ++th)
                    for (int tw = 0; tw < m; ++tw)
                        for (int co = 0; co < c; ++co) {
                            double v = 0;
                            for (int ci = 0; ci < c; ++ci)
                                v += p.wv.at2(co, ci) * x.at4(0, ci, wh * m + th, ww * m + tw);
                            vbar[static_cast<std::size_t>(co)] += v / (m * m);
                        }
                for (int th = 0; th < m; ++th)
                    for (int tw = 0; tw < m; ++tw)
                        for (int co = 0; co < c; ++co) {
                            double expect = 0;
                            for (int ci = 0; ci < c; ++ci) expect += p.wo.at2(co, ci) * vbar[static_cast<std::size_t>(ci)];
                            CHECK(y.at4(0, co, wh * m + th, ww * m + tw) ==
                                  doctest::Approx(expect).epsilon(1e-12));
                        }
            }
    }
    SUBCASE("M=1 collapses to OutProj(W_V x)") {
        int c = 4;
        AttnBlockParams p = AttnBlockParams::init(c, 1, 2, rng);
        Tensor x = random_tensor({2, c, 3, 3}, rng);
        Tensor y = window_attention_forward(p, x);
        for (int n = 0; n < 2; ++n)
            for (int h = 0; h < 3; ++h)
                for (int w = 0; w < 3; ++w)
                    for (int co = 0; co < c; ++co) {
                        double v = 0;
                        for (int ci = 0; ci < c; ++ci) {
                            double vv = 0;
                            for (int cj = 0; cj < c; ++cj) vv += p.wv.at2(ci, cj) * x.at4(n, cj, h, w);
                            v += p.wo.at2(co, ci) * vv;
                        }
                        CHECK(y.at4(n, co, h, w) == doctest::Approx(v).epsilon(1e-12));
                    }
    }
    SUBCASE("indivisible window errors") {
        AttnBlockParams p = AttnBlockParams::init(3, 3, 2, rng);
        Tensor x = random_tensor({1, 3, 4, 4}, rng);
        CHECK_THROWS(window_attention_forward(p, x));
    }
}

TEST_CASE("state ordering: skip < conv < quadra < attention") {
    Rng rng(6);
    struct Shaped {
        int c, hw;
    };
    for (Shaped s : {Shaped{8, 14}, Shaped{4, 7}, Shaped{16, 28}}) {
        Tensor x = random_tensor({1, s.c, s.hw, s.hw}, rng);
        auto states_of = [&](AnyBlock block) {
            Tape tape;
            NodeId in = tape.leaf(x);
            block_forward(tape, block, in);
            return tape.state_total(Phase::Forward);
        };
        std::size_t skip = states_of(SkipBlockParams::init(s.c, 4, rng));
        std::size_t conv = states_of(ConvBlockParams::init(s.c, 7, 4, rng));
        std::size_t quad = states_of(QuadraBlockParams::init(s.c, 7, 4, 0, rng));
        std::size_t attn = states_of(AttnBlockParams::init(s.c, 7, 4, rng));
        CAPTURE(s.c);
        CHECK(skip < conv);
        CHECK(conv < quad);
        CHECK(quad < attn);
    }
}

TEST_CASE("rank identity") {
    SUBCASE("R=1 is trivial with rank <= 1") {
        auto res = rank_identity(1, 8, 0);
        CHECK(res.holds);
        CHECK(res.max_abs_diff <= 1e-12);
        CHECK(res.rank <= 1);
    }
    SUBCASE("R=n random stacks reach full rank") {
        auto res = rank_identity(6, 6, 1);
        CHECK(res.holds);
        CHECK(res.rank == 6);
    }
    SUBCASE("R=4, n=49") {
        auto res = rank_identity(4, 49, 2);
        CHECK(res.holds);
        CHECK(res.max_abs_diff <= 1e-12);
        CHECK(res.rank <= 4);
        CHECK(res.rank == 4);  // generic draws
    }
    SUBCASE("a spread of R and n") {
        for (int r : {1, 2, 3})
            for (int n : {3, 9, 16})
                for (std::uint64_t seed = 0; seed < 3; ++seed) {
                    auto res = rank_identity(r, n, seed);
                    CAPTURE(r);
                    CAPTURE(n);
                    CHECK(res.holds);
                }
    }
}

TEST_CASE("singular values of a known matrix") {
    // diag(3, 2, 1) has exactly those singular values
    Tensor m = Tensor::zeros(Shape{3, 3});
    m.at2(0, 0) = 3;
    m.at2(1, 1) = 2;
    m.at2(2, 2) = 1;
    auto sv = singular_values(m);
    REQUIRE(sv.size() == 3);
    CHECK(sv[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(sv[1] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(sv[2] == doctest::Approx(1.0).epsilon(1e-12));
}
