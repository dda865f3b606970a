#include "quadranet/serialize.hpp"

#include <cstring>
#include <fstream>
#include <set>

namespace quadranet {

namespace {

void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
    if (!j.is_object()) fail("config: expected an object at " + path);
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) fail("config: unknown key at " + path + "." + it.key());
}

template <typename T>
T get_or(const json& j, const std::string& path, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        fail("config: bad value type at " + path + "." + key);
    }
}

}  // namespace

json spec_to_json(const NetworkSpec& spec) {
    json j;
    j["base_channels"] = spec.base_channels;
    j["stage_depths"] = spec.stage_depths;
    j["num_classes"] = spec.num_classes;
    j["input_size"] = spec.input_size;
    if (spec.quad_mixer != 0) j["quad_mixer"] = spec.quad_mixer;

    bool uniform = true;
    std::optional<BlockChoice> first;
    for (const auto& stage : spec.slots)
        for (const BlockChoice& c : stage) {
            if (!first) first = c;
            if (!(c == *first)) uniform = false;
        }
    if (uniform && first) {
        json b;
        b["kind"] = block_choice_str(*first);
        j["block"] = block_choice_str(*first);
    } else {
        std::vector<std::string> slot_strings;
        for (int s = 0; s < 4; ++s)
            for (std::size_t slot = 0; slot < spec.slots[static_cast<std::size_t>(s)].size(); ++slot)
                slot_strings.push_back("s" + std::to_string(s + 1) + "." + std::to_string(slot) + "=" +
                                       block_choice_str(spec.slots[static_cast<std::size_t>(s)][slot]));
        j["slots"] = slot_strings;
    }
    return j;
}

NetworkSpec spec_from_json(const json& j, const std::string& path) {
    if (j.is_string()) {
        // preset shorthand
        return NetworkSpec::preset(j.get<std::string>());
    }
    check_keys(j, path,
               {"preset", "base_channels", "stage_depths", "block", "slots", "num_classes", "input_size",
                "quad_mixer"});
    if (j.contains("preset")) {
        NetworkSpec spec = NetworkSpec::preset(j.at("preset").get<std::string>(),
                                               get_or<int>(j, path, "num_classes", 1000),
                                               get_or<int>(j, path, "input_size", 224));
        spec.quad_mixer = get_or<int>(j, path, "quad_mixer", 0);
        for (const char* banned : {"base_channels", "stage_depths", "block", "slots"})
            if (j.contains(banned)) fail("config: " + path + ".preset cannot be combined with " + path + "." + banned);
        return spec;
    }

    NetworkSpec spec;
    spec.base_channels = get_or<int>(j, path, "base_channels", 64);
    auto depths = get_or<std::vector<int>>(j, path, "stage_depths", {3, 3, 27, 3});
    if (depths.size() != 4) fail("config: " + path + ".stage_depths must have exactly 4 entries");
    for (int s = 0; s < 4; ++s) spec.stage_depths[static_cast<std::size_t>(s)] = depths[static_cast<std::size_t>(s)];
    spec.num_classes = get_or<int>(j, path, "num_classes", 1000);
    spec.input_size = get_or<int>(j, path, "input_size", 224);
    spec.quad_mixer = get_or<int>(j, path, "quad_mixer", 0);

    if (j.contains("block") && j.contains("slots"))
        fail("config: " + path + " cannot have both 'block' and 'slots'");
    if (j.contains("slots")) {
        auto strings = j.at("slots").get<std::vector<std::string>>();
        std::size_t cursor = 0;
        for (int s = 0; s < 4; ++s) {
            for (int slot = 0; slot < spec.stage_depths[static_cast<std::size_t>(s)]; ++slot) {
                if (cursor >= strings.size()) fail("config: " + path + ".slots is shorter than stage_depths");
                const std::string& text = strings[cursor++];
                std::string expect = "s" + std::to_string(s + 1) + "." + std::to_string(slot) + "=";
                if (text.rfind(expect, 0) != 0)
                    fail("config: " + path + ".slots entry '" + text + "' does not match expected prefix '" +
                         expect + "'");
                spec.slots[static_cast<std::size_t>(s)].push_back(parse_block_choice(text.substr(expect.size())));
            }
        }
        if (cursor != strings.size()) fail("config: " + path + ".slots is longer than stage_depths");
    } else {
        BlockChoice block = j.contains("block") ? parse_block_choice(j.at("block").get<std::string>())
                                                : BlockChoice{BlockKind::Quadra, 7, 4, 7, 1};
        for (int s = 0; s < 4; ++s)
            spec.slots[static_cast<std::size_t>(s)].assign(
                static_cast<std::size_t>(spec.stage_depths[static_cast<std::size_t>(s)]), block);
    }
    spec.validate();
    return spec;
}

json cost_to_json(const CostReport& report, bool bytes) {
    json j;
    j["params"] = report.params;
    j["macs"] = report.macs;
    std::size_t mult = bytes ? 8 : 1;
    j["fwd_states"] = report.fwd_states * mult;
    j["bwd_retained_states"] = report.bwd_retained_states * mult;
    j["state_unit"] = bytes ? "bytes" : "elements";
    j["serial_depth"] = report.serial_depth;
    j["coefficients"] = {{"alpha", report.coeff.alpha}, {"beta", report.coeff.beta}, {"gamma", report.coeff.gamma}};
    j["proxy_latency"] = report.proxy_latency();
    return j;
}

LabeledDataset DataSection::load() const {
    if (!idx_images.empty() || !idx_labels.empty()) {
        if (idx_images.empty() || idx_labels.empty())
            fail("config: data.idx_images and data.idx_labels must both be set");
        return read_idx(idx_images, idx_labels);
    }
    if (generator == "xor") return gen_xor(n, spread, seed);
    if (generator == "interaction") return gen_interaction_images(n, size, classes, seed);
    if (generator == "xor_images") return gen_xor_images(n, spread, size, seed);
    fail("config: unknown data.generator '" + generator + "' (expected xor, interaction or xor_images)");
}

ConfigFile parse_config(const json& j) {
    check_keys(j, "config", {"network", "train", "search", "data"});
    ConfigFile config;
    if (j.contains("network")) config.network = spec_from_json(j.at("network"), "network");
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t, "train",
                   {"kind", "lr", "beta1", "beta2", "eps", "weight_decay", "grad_clip", "clip_mode", "epochs",
                    "batch_size", "seed", "warmup_epochs"});
        OptimConfig cfg;
        std::string kind = get_or<std::string>(t, "train", "kind", "adamw");
        if (kind == "adamw")
            cfg.kind = OptimKind::AdamW;
        else if (kind == "sgd")
            cfg.kind = OptimKind::Sgd;
        else
            fail("config: unknown train.kind '" + kind + "'");
        cfg.lr = get_or<double>(t, "train", "lr", cfg.lr);
        cfg.beta1 = get_or<double>(t, "train", "beta1", cfg.beta1);
        cfg.beta2 = get_or<double>(t, "train", "beta2", cfg.beta2);
        cfg.eps = get_or<double>(t, "train", "eps", cfg.eps);
        cfg.weight_decay = get_or<double>(t, "train", "weight_decay", cfg.weight_decay);
        cfg.grad_clip = get_or<double>(t, "train", "grad_clip", cfg.grad_clip);
        std::string clip = get_or<std::string>(t, "train", "clip_mode", "value");
        if (clip == "value")
            cfg.clip_mode = ClipMode::Value;
        else if (clip == "norm")
            cfg.clip_mode = ClipMode::Norm;
        else
            fail("config: unknown train.clip_mode '" + clip + "'");
        cfg.epochs = get_or<int>(t, "train", "epochs", cfg.epochs);
        cfg.batch_size = get_or<int>(t, "train", "batch_size", cfg.batch_size);
        cfg.seed = get_or<std::uint64_t>(t, "train", "seed", cfg.seed);
        cfg.warmup_epochs = get_or<int>(t, "train", "warmup_epochs", cfg.warmup_epochs);
        cfg.validate();
        config.train = cfg;
    }
    if (j.contains("search")) {
        const json& s = j.at("search");
        check_keys(s, "search",
                   {"budget", "population", "sample", "generations", "seed", "base_channels", "slots",
                    "train_steps", "batch_size", "lr"});
        SearchSection sec;
        if (!s.contains("budget")) fail("config: search.budget is required");
        sec.budget = s.at("budget").get<double>();
        sec.population = get_or<int>(s, "search", "population", sec.population);
        sec.sample = get_or<int>(s, "search", "sample", sec.sample);
        sec.generations = get_or<int>(s, "search", "generations", sec.generations);
        sec.seed = get_or<std::uint64_t>(s, "search", "seed", sec.seed);
        sec.base_channels = get_or<int>(s, "search", "base_channels", sec.base_channels);
        auto slots = get_or<std::vector<int>>(s, "search", "slots", {1, 1, 0, 0});
        if (slots.size() != 4) fail("config: search.slots must have exactly 4 entries");
        for (int i = 0; i < 4; ++i) sec.slot_counts[static_cast<std::size_t>(i)] = slots[static_cast<std::size_t>(i)];
        sec.train_steps = get_or<int>(s, "search", "train_steps", sec.train_steps);
        sec.batch_size = get_or<int>(s, "search", "batch_size", sec.batch_size);
        sec.lr = get_or<double>(s, "search", "lr", sec.lr);
        config.search = sec;
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        check_keys(d, "data",
                   {"generator", "n", "size", "classes", "spread", "seed", "val_stride", "idx_images",
                    "idx_labels"});
        DataSection sec;
        sec.generator = get_or<std::string>(d, "data", "generator", "");
        sec.n = get_or<int>(d, "data", "n", sec.n);
        sec.size = get_or<int>(d, "data", "size", sec.size);
        sec.classes = get_or<int>(d, "data", "classes", sec.classes);
        sec.spread = get_or<double>(d, "data", "spread", sec.spread);
        sec.seed = get_or<std::uint64_t>(d, "data", "seed", sec.seed);
        sec.val_stride = get_or<int>(d, "data", "val_stride", sec.val_stride);
        sec.idx_images = get_or<std::string>(d, "data", "idx_images", "");
        sec.idx_labels = get_or<std::string>(d, "data", "idx_labels", "");
        if (sec.generator.empty() && sec.idx_images.empty())
            fail("config: data needs either a generator or idx paths");
        config.data = sec;
    }
    return config;
}

ConfigFile load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open config file '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail("config '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

json optim_to_json(const OptimConfig& config) {
    json j;
    j["kind"] = config.kind == OptimKind::AdamW ? "adamw" : "sgd";
    j["lr"] = config.lr;
    j["beta1"] = config.beta1;
    j["beta2"] = config.beta2;
    j["eps"] = config.eps;
    j["weight_decay"] = config.weight_decay;
    j["grad_clip"] = config.grad_clip;
    j["clip_mode"] = config.clip_mode == ClipMode::Value ? "value" : "norm";
    j["epochs"] = config.epochs;
    j["batch_size"] = config.batch_size;
    j["seed"] = config.seed;
    j["warmup_epochs"] = config.warmup_epochs;
    return j;
}

namespace {

void write_u32_le(std::ofstream& out, std::uint32_t v) {
    unsigned char buf[4];
    std::memcpy(buf, &v, 4);
    out.write(reinterpret_cast<char*>(buf), 4);
}

void write_u64_le(std::ofstream& out, std::uint64_t v) {
    unsigned char buf[8];
    std::memcpy(buf, &v, 8);
    out.write(reinterpret_cast<char*>(buf), 8);
}

std::uint32_t read_u32_le(std::ifstream& in, const std::string& path) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (in.gcount() != 4) fail("snapshot '" + path + "' truncated");
    return v;
}

std::uint64_t read_u64_le(std::ifstream& in, const std::string& path) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (in.gcount() != 8) fail("snapshot '" + path + "' truncated");
    return v;
}

}  // namespace

void save_snapshot(const std::string& path, Network& net) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot open snapshot file '" + path + "' for writing");
    out.write("QNET", 4);
    write_u32_le(out, 1);
    json meta;
    meta["network"] = spec_to_json(net.spec());
    meta["seed"] = net.seed();
    std::string meta_bytes = meta.dump();
    write_u64_le(out, meta_bytes.size());
    out.write(meta_bytes.data(), static_cast<std::streamsize>(meta_bytes.size()));
    std::uint64_t count = 0;
    for (const ParamRef& ref : net.parameters()) count += ref.tensor->size();
    write_u64_le(out, count);
    for (const ParamRef& ref : net.parameters())
        out.write(reinterpret_cast<const char*>(ref.tensor->data()),
                  static_cast<std::streamsize>(ref.tensor->size() * sizeof(double)));
    if (!out) fail("snapshot write to '" + path + "' failed");
}

Network load_snapshot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open snapshot file '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "QNET", 4) != 0)
        fail("snapshot '" + path + "' has bad magic (expected \"QNET\")");
    std::uint32_t version = read_u32_le(in, path);
    if (version != 1) fail("snapshot '" + path + "' has unsupported version " + std::to_string(version));
    std::uint64_t meta_len = read_u64_le(in, path);
    std::string meta_bytes(meta_len, '\0');
    in.read(meta_bytes.data(), static_cast<std::streamsize>(meta_len));
    if (static_cast<std::uint64_t>(in.gcount()) != meta_len) fail("snapshot '" + path + "' truncated metadata");
    json meta;
    try {
        meta = json::parse(meta_bytes);
    } catch (const json::exception& e) {
        fail("snapshot '" + path + "' has invalid metadata JSON: " + e.what());
    }
    NetworkSpec spec = spec_from_json(meta.at("network"), "snapshot.network");
    std::uint64_t seed = meta.value("seed", 0ULL);
    Network net = Network::build(spec, seed);
    std::uint64_t count = read_u64_le(in, path);
    std::uint64_t expected = 0;
    for (const ParamRef& ref : net.parameters()) expected += ref.tensor->size();
    if (count != expected)
        fail("snapshot '" + path + "' holds " + std::to_string(count) + " weights but the spec builds " +
             std::to_string(expected));
    for (const ParamRef& ref : net.parameters()) {
        in.read(reinterpret_cast<char*>(ref.tensor->data()),
                static_cast<std::streamsize>(ref.tensor->size() * sizeof(double)));
        if (static_cast<std::size_t>(in.gcount()) != ref.tensor->size() * sizeof(double))
            fail("snapshot '" + path + "' truncated weight payload");
    }
    return net;
}

}  // namespace quadranet
