// quadranet command-line tool: xor / count / train / search / gradcheck
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "quadranet/gradcheck.hpp"
#include "quadranet/quadneuron.hpp"
#include "quadranet/serialize.hpp"

using namespace quadranet;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitInputError = 2;
constexpr int kExitInfeasible = 3;

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot write '" + path.string() + "'");
    out << content;
}

struct XorArgs {
    int steps = 2000;
    double lr = 0.05;
    int points = 10;
    double spread = 2.0;
    int resolution = 64;
    std::uint64_t seed = 0;
    std::string out_dir;
};

int cmd_xor(const XorArgs& args) {
    LabeledDataset ds = gen_xor(args.points, args.spread, args.seed);
    auto pts = xor_points(ds);
    auto labels = xor_pm1_labels(ds);
    auto quad = train_xor(NeuronKind::LowRank, pts, labels, args.steps, args.lr, args.seed);
    auto linear = train_xor(NeuronKind::Linear, pts, labels, args.steps, args.lr, args.seed);
    std::printf("# seed=%llu steps=%d lr=%g points=%d spread=%g\n",
                static_cast<unsigned long long>(args.seed), args.steps, args.lr, 4 * args.points, args.spread);
    std::printf("quadratic neuron accuracy: %.4f\n", quad.accuracy);
    std::printf("linear neuron accuracy:    %.4f\n", linear.accuracy);

    if (!args.out_dir.empty()) {
        // decision-surface grid as (x,y,value) rows for external plotting
        std::string csv = "# seed=" + std::to_string(args.seed) + "\n";
        csv += "x,y,value\n";
        char buf[96];
        for (int i = 0; i < args.resolution; ++i) {
            for (int j = 0; j < args.resolution; ++j) {
                double x = -args.spread + 2 * args.spread * (i + 0.5) / args.resolution;
                double y = -args.spread + 2 * args.spread * (j + 0.5) / args.resolution;
                double v = forward_lowrank(quad.neuron, {x, y});
                std::snprintf(buf, sizeof(buf), "%.6g,%.6g,%.6g\n", x, y, v);
                csv += buf;
            }
        }
        write_file(fs::path(args.out_dir) / "xor_surface.csv", csv);
        json result;
        result["seed"] = args.seed;
        result["quadratic_accuracy"] = quad.accuracy;
        result["linear_accuracy"] = linear.accuracy;
        result["steps"] = args.steps;
        result["lr"] = args.lr;
        write_file(fs::path(args.out_dir) / "xor_result.json", result.dump(2) + "\n");
    }
    return (quad.accuracy == 1.0 && linear.accuracy < 1.0) ? kExitOk : kExitCheckFailed;
}

struct CountArgs {
    std::string preset;
    std::string spec_path;
    int input_size = 0;  // 0: keep the spec's value
    bool bytes = false;
    bool compare = false;
    bool as_json = false;
    std::string out_dir;
};

int cmd_count(const CountArgs& args) {
    if (args.compare) {
        std::string table = compare_table(64, 14, 14, 7, args.bytes);
        std::fputs(table.c_str(), stdout);
        if (!args.out_dir.empty()) write_file(fs::path(args.out_dir) / "compare.txt", table);
        return kExitOk;
    }
    NetworkSpec spec;
    if (!args.preset.empty()) {
        spec = NetworkSpec::preset(args.preset);
    } else if (!args.spec_path.empty()) {
        std::ifstream in(args.spec_path);
        if (!in) fail("cannot open spec file '" + args.spec_path + "'");
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            fail("spec file '" + args.spec_path + "' is not valid JSON: " + std::string(e.what()));
        }
        spec = j.contains("network") ? spec_from_json(j.at("network")) : spec_from_json(j);
    } else {
        fail("count needs --preset or --spec");
    }
    if (args.input_size > 0) spec.input_size = args.input_size;
    spec.validate();

    CostReport report = network_report(spec);
    if (args.as_json) {
        std::printf("%s\n", cost_to_json(report, args.bytes).dump(2).c_str());
    } else {
        std::fputs(report.table(args.bytes).c_str(), stdout);
    }
    if (!args.out_dir.empty())
        write_file(fs::path(args.out_dir) / "cost.json", cost_to_json(report, args.bytes).dump(2) + "\n");
    return kExitOk;
}

struct TrainArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::string clip_mode;
};

int cmd_train(const TrainArgs& args) {
    ConfigFile config = load_config_file(args.config_path);
    if (!config.network) fail("train config needs a 'network' section");
    if (!config.data) fail("train config needs a 'data' section");
    OptimConfig optim = config.train.value_or(OptimConfig{});
    if (args.seed) optim.seed = *args.seed;
    if (!args.clip_mode.empty()) {
        if (args.clip_mode == "value")
            optim.clip_mode = ClipMode::Value;
        else if (args.clip_mode == "norm")
            optim.clip_mode = ClipMode::Norm;
        else
            fail("--clip-mode must be 'value' or 'norm'");
    }

    LabeledDataset full = config.data->load();
    auto [train, val] = split_train_val(full, config.data->val_stride);
    Network net = Network::build(*config.network, optim.seed);

    std::printf("# seed=%llu params=%zu train=%d val=%d epochs=%d clip=%s warmup_epochs=%d\n",
                static_cast<unsigned long long>(optim.seed), net.param_count(), train.count(), val.count(),
                optim.epochs, optim.clip_mode == ClipMode::Value ? "value" : "norm", optim.warmup_epochs);
    FitResult result = fit(net, train, val, optim);
    for (const EpochMetrics& row : result.history)
        std::printf("epoch %3d  loss %.5f  train_acc %.4f  val_acc %.4f\n", row.epoch, row.loss,
                    row.train_acc, row.val_acc);

    fs::path out(args.out_dir);
    write_file(out / "metrics.csv",
               "# seed=" + std::to_string(optim.seed) + "\n" + result.csv());
    save_snapshot((out / "weights.qnet").string(), net);
    json run;
    run["seed"] = optim.seed;
    run["network"] = spec_to_json(net.spec());
    run["train"] = optim_to_json(optim);
    run["final_val_acc"] = result.final_val_acc();
    write_file(out / "run.json", run.dump(2) + "\n");
    return kExitOk;
}

struct SearchArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::optional<double> budget;
};

int cmd_search(const SearchArgs& args) {
    ConfigFile config = load_config_file(args.config_path);
    if (!config.search) fail("search config needs a 'search' section");
    if (!config.data) fail("search config needs a 'data' section");
    SearchSection section = *config.search;
    if (args.seed) section.seed = *args.seed;
    if (args.budget) section.budget = *args.budget;

    int classes = config.data->classes;
    SearchSpace space = SearchSpace::standard(section.base_channels, section.slot_counts, classes,
                                              config.data->size);
    LabeledDataset full = config.data->load();
    auto [train, val] = split_train_val(full, config.data->val_stride);
    EvalConfig eval;
    eval.train = std::move(train);
    eval.val = std::move(val);
    eval.train_steps = section.train_steps;
    eval.batch_size = section.batch_size;
    eval.lr = section.lr;
    eval.seed = config.data->seed;
    Evaluator evaluator(space, std::move(eval));

    SearchConfig sc;
    sc.budget = section.budget;
    sc.population = section.population;
    sc.sample = section.sample;
    sc.generations = section.generations;
    sc.seed = section.seed;

    Candidate best = search(space, sc, evaluator);
    json result;
    result["seed"] = sc.seed;
    result["budget"] = sc.budget;
    result["genome"] = space.genome_strings(best.genome);
    result["fitness"] = best.fitness;
    result["feasible"] = best.feasible;
    result["cost"] = cost_to_json(best.cost);
    result["evaluations"] = evaluator.cache_size();
    std::printf("%s\n", result.dump(2).c_str());
    write_file(fs::path(args.out_dir) / "search_result.json", result.dump(2) + "\n");
    return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed) {
    GradCheckReport report = run_gradient_checks(seed, 5);
    std::fputs(report.summary().c_str(), stdout);
    std::printf("# seed=%llu\n", static_cast<unsigned long long>(seed));
    return report.pass ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"QuadraNet: quadratic neural networks, cost model and architecture search"};
    app.require_subcommand(1);

    XorArgs xor_args;
    CLI::App* xr = app.add_subcommand("xor", "train quadratic vs linear neurons on generalized XOR");
    xr->add_option("--steps", xor_args.steps, "gradient descent steps");
    xr->add_option("--lr", xor_args.lr, "learning rate");
    xr->add_option("--points", xor_args.points, "points per quadrant");
    xr->add_option("--spread", xor_args.spread, "quadrant half-width");
    xr->add_option("--resolution", xor_args.resolution, "decision-surface grid resolution");
    xr->add_option("--seed", xor_args.seed, "rng seed");
    xr->add_option("--out", xor_args.out_dir, "output directory for surface csv + result json");

    CountArgs count_args;
    CLI::App* ct = app.add_subcommand("count", "analytic cost report for a preset or spec file");
    ct->add_option("--preset", count_args.preset, "preset name, e.g. quadranet36-t");
    ct->add_option("--spec", count_args.spec_path, "JSON file with a network spec");
    ct->add_option("--input-size", count_args.input_size, "override input resolution");
    ct->add_flag("--bytes", count_args.bytes, "display states in bytes (f64)");
    ct->add_flag("--compare", count_args.compare, "print the four-block comparison table");
    ct->add_flag("--json", count_args.as_json, "emit JSON to stdout");
    ct->add_option("--out", count_args.out_dir, "output directory");

    TrainArgs train_args;
    CLI::App* tr = app.add_subcommand("train", "train a network from a JSON config");
    tr->add_option("--config", train_args.config_path, "config file")->required();
    tr->add_option("--out", train_args.out_dir, "output directory");
    std::uint64_t train_seed = 0;
    CLI::Option* train_seed_opt = tr->add_option("--seed", train_seed, "override the training seed");
    tr->add_option("--clip-mode", train_args.clip_mode, "value|norm");

    SearchArgs search_args;
    CLI::App* se = app.add_subcommand("search", "hardware-aware architecture search");
    se->add_option("--config", search_args.config_path, "config file")->required();
    se->add_option("--out", search_args.out_dir, "output directory");
    std::uint64_t search_seed = 0;
    CLI::Option* search_seed_opt = se->add_option("--seed", search_seed, "override the search seed");
    double budget = 0.0;
    CLI::Option* budget_opt = se->add_option("--budget", budget, "override the latency budget");

    std::uint64_t gradcheck_seed = 0;
    CLI::App* gc = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
    gc->add_option("--seed", gradcheck_seed, "rng seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (xr->parsed()) return cmd_xor(xor_args);
        if (ct->parsed()) return cmd_count(count_args);
        if (tr->parsed()) {
            if (*train_seed_opt) train_args.seed = train_seed;
            return cmd_train(train_args);
        }
        if (se->parsed()) {
            if (*search_seed_opt) search_args.seed = search_seed;
            if (*budget_opt) search_args.budget = budget;
            return cmd_search(search_args);
        }
        if (gc->parsed()) return cmd_gradcheck(gradcheck_seed);
    } catch (const InfeasibleSearch& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInfeasible;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInputError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInputError;
    }
    return kExitInputError;
}
