#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "quadranet/costmodel.hpp"
#include "quadranet/nas.hpp"
#include "quadranet/network.hpp"
#include "quadranet/train.hpp"

namespace quadranet {

using json = nlohmann::json;

// ---- network spec <-> JSON ----
// Uniform specs serialize a "block" template; per-slot specs (NAS output)
// serialize a "slots" array of "s<stage>.<slot>=Q<k>x<R>|ID" strings.
json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const json& j, const std::string& path = "network");

json cost_to_json(const CostReport& report, bool bytes = false);

// ---- config file ----

struct DataSection {
    std::string generator;          // "xor" | "interaction" | "xor_images", or empty for idx
    int n = 2500;
    int size = 32;
    int classes = 4;
    double spread = 2.0;
    std::uint64_t seed = 0;
    int val_stride = 5;
    std::string idx_images, idx_labels;

    LabeledDataset load() const;    // full dataset (callers split)
};

struct SearchSection {
    double budget = 0.0;
    int population = 16;
    int sample = 4;
    int generations = 30;
    std::uint64_t seed = 0;
    int base_channels = 8;
    std::array<int, 4> slot_counts{1, 1, 0, 0};
    int train_steps = 200;
    int batch_size = 16;
    double lr = 3e-3;
};

struct ConfigFile {
    std::optional<NetworkSpec> network;
    std::optional<OptimConfig> train;
    std::optional<SearchSection> search;
    std::optional<DataSection> data;
};

// Strict parse: unknown keys are rejected with their JSON path.
ConfigFile parse_config(const json& j);
ConfigFile load_config_file(const std::string& path);

json optim_to_json(const OptimConfig& config);

// ---- weight snapshot: "QNET", u32 version, u64 json length, json bytes
// ({"network": spec, "seed": N}), u64 count, count f64 values (little-endian).
void save_snapshot(const std::string& path, Network& net);
Network load_snapshot(const std::string& path);

}  // namespace quadranet
