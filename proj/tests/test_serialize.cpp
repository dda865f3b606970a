#include <doctest.h>

#include <cstdio>
#include <stdexcept>

#include "quadranet/serialize.hpp"

using namespace quadranet;

TEST_CASE("uniform spec json round-trip") {
    NetworkSpec spec = NetworkSpec::preset("quadranet12-xxs", 10, 64);
    json j = spec_to_json(spec);
    NetworkSpec back = spec_from_json(j);
    CHECK(back.base_channels == spec.base_channels);
    CHECK(back.stage_depths == spec.stage_depths);
    CHECK(back.num_classes == spec.num_classes);
    CHECK(back.input_size == spec.input_size);
    for (int s = 0; s < 4; ++s) CHECK(back.slots[(std::size_t)s] == spec.slots[(std::size_t)s]);
}

TEST_CASE("per-slot spec round-trips every slot unchanged") {
    NetworkSpec spec;
    spec.base_channels = 8;
    spec.stage_depths = {2, 1, 1, 0};
    spec.slots[0] = {BlockChoice{BlockKind::Quadra, 5, 2, 7, 1}, BlockChoice{BlockKind::Identity, 7, 4, 7, 1}};
    spec.slots[1] = {BlockChoice{BlockKind::Quadra, 7, 4, 7, 1}};
    spec.slots[2] = {BlockChoice{BlockKind::Conv, 3, 2, 7, 1}};
    spec.num_classes = 4;
    spec.input_size = 32;
    json j = spec_to_json(spec);
    REQUIRE(j.contains("slots"));
    auto strings = j.at("slots").get<std::vector<std::string>>();
    CHECK(strings == std::vector<std::string>{"s1.0=Q5x2", "s1.1=ID", "s2.0=Q7x4", "s3.0=C3x2"});
    NetworkSpec back = spec_from_json(j);
    for (int s = 0; s < 4; ++s) CHECK(back.slots[(std::size_t)s] == spec.slots[(std::size_t)s]);
}

TEST_CASE("unknown keys are rejected with their path") {
    json j = {{"network", {{"base_channels", 8}, {"bogus_key", 1}}}};
    CHECK_THROWS_WITH_AS(parse_config(j), doctest::Contains("network.bogus_key"), std::invalid_argument);
    json top = {{"networks", json::object()}};
    CHECK_THROWS_WITH_AS(parse_config(top), doctest::Contains("config.networks"), std::invalid_argument);
}

TEST_CASE("config sections parse with defaults") {
    json j;
    j["network"] = {{"preset", "quadranet12-xxs"}, {"num_classes", 4}, {"input_size", 32}};
    j["train"] = {{"lr", 0.005}, {"epochs", 3}, {"clip_mode", "norm"}};
    j["data"] = {{"generator", "interaction"}, {"n", 100}, {"size", 32}, {"classes", 4}, {"seed", 7}};
    j["search"] = {{"budget", 1e9}, {"slots", {1, 1, 0, 0}}};
    ConfigFile cfg = parse_config(j);
    REQUIRE(cfg.network.has_value());
    CHECK(cfg.network->base_channels == 16);
    CHECK(cfg.network->num_classes == 4);
    REQUIRE(cfg.train.has_value());
    CHECK(cfg.train->lr == 0.005);
    CHECK(cfg.train->clip_mode == ClipMode::Norm);
    CHECK(cfg.train->weight_decay == 0.05);  // paper default
    CHECK(cfg.train->grad_clip == 5.0);      // paper default
    REQUIRE(cfg.data.has_value());
    CHECK(cfg.data->generator == "interaction");
    REQUIRE(cfg.search.has_value());
    CHECK(cfg.search->budget == 1e9);
    CHECK(cfg.search->population == 16);
    CHECK(cfg.search->generations == 30);

    json bad = j;
    bad["train"]["clip_mode"] = "sideways";
    CHECK_THROWS(parse_config(bad));
}

TEST_CASE("data section loaders") {
    DataSection sec;
    sec.generator = "xor";
    sec.n = 6;
    sec.seed = 3;
    LabeledDataset xordata = sec.load();
    CHECK(xordata.count() == 24);

    sec.generator = "nonsense";
    CHECK_THROWS_WITH_AS(sec.load(), doctest::Contains("nonsense"), std::invalid_argument);
}

TEST_CASE("cost json carries the coefficients and unit") {
    CostReport rep = block_report({BlockKind::Quadra, 7, 4, 7, 1}, 8, 8, 8);
    json j = cost_to_json(rep);
    CHECK(j.at("state_unit") == "elements");
    CHECK(j.at("coefficients").at("alpha") == 1.0);
    CHECK(j.at("coefficients").at("beta") == 2.0);
    CHECK(j.at("coefficients").at("gamma") == 1e4);
    json jb = cost_to_json(rep, true);
    CHECK(jb.at("fwd_states").get<std::size_t>() == rep.fwd_states * 8);
    CHECK(jb.at("state_unit") == "bytes");
}

TEST_CASE("snapshot round-trip restores spec and exact weights") {
    NetworkSpec spec = NetworkSpec::uniform(8, {1, 1, 0, 0}, BlockChoice{BlockKind::Quadra, 3, 2, 7, 1}, 4, 32);
    Network net = Network::build(spec, 42);
    // dirty the weights so they differ from the seeded init
    Rng rng(9);
    for (ParamRef ref : net.parameters())
        for (std::size_t i = 0; i < ref.tensor->size(); ++i) (*ref.tensor)[i] += rng.uniform(-0.1, 0.1);

    const char* path = "snapshot_test.qnet";
    save_snapshot(path, net);
    Network back = load_snapshot(path);
    CHECK(back.spec().base_channels == spec.base_channels);
    CHECK(back.seed() == 42);
    auto pa = net.parameters();
    auto pb = back.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(pa[i].tensor->values() == pb[i].tensor->values());
    }
    std::remove(path);
}

TEST_CASE("snapshot magic is validated") {
    const char* path = "snapshot_bad.qnet";
    {
        FILE* f = fopen(path, "wb");
        fputs("NOPE....garbage", f);
        fclose(f);
    }
    CHECK_THROWS_WITH_AS(load_snapshot(path), doctest::Contains("QNET"), std::invalid_argument);
    std::remove(path);
}
