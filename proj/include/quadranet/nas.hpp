#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "quadranet/costmodel.hpp"
#include "quadranet/data.hpp"
#include "quadranet/network.hpp"

namespace quadranet {

struct InfeasibleSearch : std::runtime_error {
    double skeleton_latency;
    explicit InfeasibleSearch(const std::string& msg, double skeleton) : std::runtime_error(msg), skeleton_latency(skeleton) {}
};

// Per-slot candidate set {QuadraBlock(k, R) : k in {3,5,7}, R in {2,4}} plus
// Identity; identical for every slot. The skeleton (STEM, downsamples, head)
// is fixed.
struct SearchSpace {
    int base_channels = 8;
    std::array<int, 4> slot_counts{1, 1, 0, 0};
    int num_classes = 4;
    int input_size = 32;
    std::vector<BlockChoice> candidates;
    CostCoefficients coeff;

    static SearchSpace standard(int base_channels, std::array<int, 4> slot_counts, int num_classes,
                                int input_size);
    int total_slots() const;
    int identity_index() const;  // index of the Identity candidate
    NetworkSpec spec_for(const std::vector<int>& genome) const;
    std::vector<std::string> genome_strings(const std::vector<int>& genome) const;  // "s3.2=Q7x4"
    std::vector<int> genome_from_strings(const std::vector<std::string>& strings) const;
    void validate_genome(const std::vector<int>& genome) const;
};

struct Candidate {
    std::vector<int> genome;
    double fitness = 0.0;
    CostReport cost;
    bool feasible = false;
};

struct EvalConfig {
    LabeledDataset train, val;   // proxy task
    int train_steps = 200;
    int batch_size = 16;
    double lr = 3e-3;
    double weight_decay = 0.05;
    double grad_clip = 5.0;
    std::uint64_t seed = 0;      // evaluation seed (independent of the search seed)
};

// Memoizing fitness evaluator: builds the genome's network, trains train_steps
// batches on the proxy task, returns held-out accuracy.
class Evaluator {
public:
    Evaluator(const SearchSpace& space, EvalConfig config);
    double evaluate(const std::vector<int>& genome);
    std::size_t cache_size() const { return cache_.size(); }
    const SearchSpace& space() const { return space_; }

private:
    SearchSpace space_;
    EvalConfig config_;
    std::map<std::vector<int>, double> cache_;
};

struct SearchConfig {
    double budget = 0.0;     // proxy-latency budget (hard constraint)
    int population = 16;
    int sample = 4;
    int generations = 30;
    std::uint64_t seed = 0;
};

CostReport genome_cost(const SearchSpace& space, const std::vector<int>& genome);
double skeleton_latency(const SearchSpace& space);  // all-Identity genome cost

// Exactly one slot changes, uniformly over the other candidates for that slot.
std::vector<int> mutate(const SearchSpace& space, const std::vector<int>& genome, Rng& rng);

// Regularized evolution under a hard latency budget. Deterministic per seed.
// Throws InfeasibleSearch when budget < skeleton cost.
Candidate search(const SearchSpace& space, const SearchConfig& config, Evaluator& evaluator);

// Exhaustive oracle for small spaces.
Candidate enumerate_best(const SearchSpace& space, double budget, Evaluator& evaluator);

}  // namespace quadranet
