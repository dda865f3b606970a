#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "quadranet/data.hpp"
#include "quadranet/train.hpp"

using namespace quadranet;

TEST_CASE("clip_gradients by value") {
    std::vector<Tensor> grads{Tensor(Shape{4}, {1.0, -4.9, 7.2, -11.0})};
    clip_gradients(grads, 5.0, ClipMode::Value);
    CHECK(grads[0][0] == 1.0);
    CHECK(grads[0][1] == -4.9);
    CHECK(grads[0][2] == 5.0);
    CHECK(grads[0][3] == -5.0);
    // idempotence
    std::vector<Tensor> again = grads;
    clip_gradients(again, 5.0, ClipMode::Value);
    CHECK(again[0].values() == grads[0].values());
}

TEST_CASE("clip_gradients by global norm") {
    std::vector<Tensor> grads{Tensor(Shape{2}, {3.0, 0.0}), Tensor(Shape{1}, {4.0})};
    clip_gradients(grads, 5.0, ClipMode::Norm);  // norm exactly 5: untouched
    CHECK(grads[0][0] == 3.0);
    clip_gradients(grads, 2.5, ClipMode::Norm);  // scale by 0.5
    CHECK(grads[0][0] == doctest::Approx(1.5));
    CHECK(grads[1][0] == doctest::Approx(2.0));
}

TEST_CASE("adamw_step") {
    SUBCASE("zero grads, zero weight decay: params unchanged") {
        Tensor p(Shape{3}, {1.0, -2.0, 0.5});
        std::vector<ParamRef> params{{"p", &p}};
        AdamState state;
        state.init(params);
        OptimConfig cfg;
        cfg.lr = 0.1;
        cfg.weight_decay = 0.0;
        std::vector<Tensor> grads{Tensor::zeros(Shape{3})};
        adamw_step(params, grads, state, cfg);
        CHECK(p.values() == std::vector<double>{1.0, -2.0, 0.5});
    }
    SUBCASE("zero grads, positive decay: pure decay per step") {
        Tensor p(Shape{1}, {2.0});
        std::vector<ParamRef> params{{"p", &p}};
        AdamState state;
        state.init(params);
        OptimConfig cfg;
        cfg.lr = 0.1;
        cfg.weight_decay = 0.05;
        std::vector<Tensor> grads{Tensor::zeros(Shape{1})};
        adamw_step(params, grads, state, cfg);
        CHECK(p[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.05)).epsilon(1e-15));
        adamw_step(params, grads, state, cfg);
        CHECK(p[0] == doctest::Approx(2.0 * std::pow(1.0 - 0.1 * 0.05, 2)).epsilon(1e-15));
    }
    SUBCASE("single scalar quadratic converges") {
        // loss 0.5 (p - 3)^2, lr 0.05, 500 steps
        Tensor p(Shape{1}, {0.0});
        std::vector<ParamRef> params{{"p", &p}};
        AdamState state;
        state.init(params);
        OptimConfig cfg;
        cfg.lr = 0.05;
        cfg.weight_decay = 0.0;
        for (int step = 0; step < 500; ++step) {
            std::vector<Tensor> grads{Tensor(Shape{1}, {p[0] - 3.0})};
            adamw_step(params, grads, state, cfg);
        }
        CHECK(std::fabs(p[0] - 3.0) < 1e-3);
    }
    SUBCASE("shape mismatch errors") {
        Tensor p(Shape{2}, {0.0, 0.0});
        std::vector<ParamRef> params{{"p", &p}};
        AdamState state;
        state.init(params);
        OptimConfig cfg;
        std::vector<Tensor> grads{Tensor::zeros(Shape{3})};
        CHECK_THROWS(adamw_step(params, grads, state, cfg));
    }
}

namespace {
NetworkSpec tiny_spec(int classes = 2) {
    return NetworkSpec::uniform(8, {1, 1, 1, 1}, BlockChoice{BlockKind::Quadra, 3, 2, 7, 1}, classes, 32);
}
}  // namespace

TEST_CASE("lr=0 keeps the loss constant across epochs") {
    LabeledDataset full = gen_xor_images(10, 2.0, 32, 1);
    auto [train, val] = split_train_val(full, 5);
    Network net = Network::build(tiny_spec(), 0);
    OptimConfig cfg;
    cfg.lr = 0.0;
    cfg.weight_decay = 0.0;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 0;
    FitResult res = fit(net, train, val, cfg);
    REQUIRE(res.history.size() == 3);
    CHECK(res.history[0].loss == doctest::Approx(res.history[1].loss).epsilon(1e-12));
    CHECK(res.history[1].loss == doctest::Approx(res.history[2].loss).epsilon(1e-12));
}

TEST_CASE("lr=0 and wd=0 keep parameters bit-stable across fit") {
    LabeledDataset full = gen_xor_images(6, 2.0, 32, 2);
    auto [train, val] = split_train_val(full, 4);
    Network net = Network::build(tiny_spec(), 1);
    std::vector<std::vector<double>> before;
    for (ParamRef ref : net.parameters()) before.push_back(ref.tensor->values());
    OptimConfig cfg;
    cfg.lr = 0.0;
    cfg.weight_decay = 0.0;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    fit(net, train, val, cfg);
    std::size_t i = 0;
    for (ParamRef ref : net.parameters()) CHECK(ref.tensor->values() == before[i++]);
}

TEST_CASE("tiny QuadraNet reaches train acc 1.0 on xor images within 50 epochs") {
    LabeledDataset full = gen_xor_images(40, 2.0, 32, 3);  // 160 images
    auto [train, val] = split_train_val(full, 5);
    Network net = Network::build(tiny_spec(), 0);
    OptimConfig cfg;
    cfg.lr = 3e-3;
    cfg.epochs = 50;
    cfg.batch_size = 32;
    cfg.seed = 0;
    FitResult res = fit(net, train, val, cfg);
    bool hit = false;
    for (const EpochMetrics& row : res.history) hit = hit || row.train_acc == 1.0;
    CAPTURE(res.history.back().train_acc);
    CHECK(hit);
}

TEST_CASE("determinism: identical config and seed give identical csv bytes") {
    LabeledDataset full = gen_xor_images(8, 2.0, 32, 4);
    auto [train, val] = split_train_val(full, 4);
    OptimConfig cfg;
    cfg.lr = 1e-3;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.seed = 11;
    Network a = Network::build(tiny_spec(), 5);
    Network b = Network::build(tiny_spec(), 5);
    FitResult ra = fit(a, train, val, cfg);
    FitResult rb = fit(b, train, val, cfg);
    CHECK(ra.csv() == rb.csv());
    CHECK(ra.csv().rfind("epoch,loss,train_acc,val_acc\n", 0) == 0);
}

TEST_CASE("loss decreases over early epochs on the interaction task") {
    int wins = 0;
    const int seeds = 5;
    for (int seed = 0; seed < seeds; ++seed) {
        LabeledDataset full = gen_interaction_images(160, 32, 4, 100 + static_cast<std::uint64_t>(seed));
        auto [train, val] = split_train_val(full, 5);
        Network net = Network::build(tiny_spec(4), static_cast<std::uint64_t>(seed));
        OptimConfig cfg;
        cfg.lr = 3e-3;
        cfg.epochs = 8;
        cfg.batch_size = 32;
        cfg.seed = static_cast<std::uint64_t>(seed);
        FitResult res = fit(net, train, val, cfg);
        if (res.history.back().loss < res.history.front().loss) ++wins;
    }
    CHECK(wins >= 4);
}

TEST_CASE("config validation") {
    OptimConfig cfg;
    cfg.lr = -1;
    CHECK_THROWS(cfg.validate());
    cfg = OptimConfig{};
    cfg.grad_clip = 0;
    CHECK_THROWS(cfg.validate());
}
