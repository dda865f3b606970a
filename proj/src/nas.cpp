#include "quadranet/nas.hpp"

#include <algorithm>
#include <deque>

#include "quadranet/train.hpp"

namespace quadranet {

SearchSpace SearchSpace::standard(int base_channels, std::array<int, 4> slot_counts, int num_classes,
                                  int input_size) {
    SearchSpace space;
    space.base_channels = base_channels;
    space.slot_counts = slot_counts;
    space.num_classes = num_classes;
    space.input_size = input_size;
    for (int k : {3, 5, 7})
        for (int r : {2, 4}) space.candidates.push_back(BlockChoice{BlockKind::Quadra, k, r, 7, 1});
    space.candidates.push_back(BlockChoice{BlockKind::Identity, 7, 4, 7, 1});
    return space;
}

int SearchSpace::total_slots() const {
    int total = 0;
    for (int s : slot_counts) total += s;
    return total;
}

int SearchSpace::identity_index() const {
    for (std::size_t i = 0; i < candidates.size(); ++i)
        if (candidates[i].kind == BlockKind::Identity) return static_cast<int>(i);
    return -1;
}

void SearchSpace::validate_genome(const std::vector<int>& genome) const {
    if (candidates.empty()) fail("search space: candidate list must be non-empty");
    if (static_cast<int>(genome.size()) != total_slots())
        fail("genome has " + std::to_string(genome.size()) + " entries for " + std::to_string(total_slots()) +
             " slots");
    for (int g : genome)
        if (g < 0 || g >= static_cast<int>(candidates.size()))
            fail("genome index " + std::to_string(g) + " out of range");
}

NetworkSpec SearchSpace::spec_for(const std::vector<int>& genome) const {
    validate_genome(genome);
    NetworkSpec spec;
    spec.base_channels = base_channels;
    spec.num_classes = num_classes;
    spec.input_size = input_size;
    int cursor = 0;
    for (int s = 0; s < 4; ++s) {
        spec.stage_depths[static_cast<std::size_t>(s)] = slot_counts[static_cast<std::size_t>(s)];
        for (int j = 0; j < slot_counts[static_cast<std::size_t>(s)]; ++j)
            spec.slots[static_cast<std::size_t>(s)].push_back(
                candidates[static_cast<std::size_t>(genome[static_cast<std::size_t>(cursor++)])]);
    }
    return spec;
}

std::vector<std::string> SearchSpace::genome_strings(const std::vector<int>& genome) const {
    validate_genome(genome);
    std::vector<std::string> out;
    int cursor = 0;
    for (int s = 0; s < 4; ++s)
        for (int j = 0; j < slot_counts[static_cast<std::size_t>(s)]; ++j) {
            const BlockChoice& c = candidates[static_cast<std::size_t>(genome[static_cast<std::size_t>(cursor++)])];
            out.push_back("s" + std::to_string(s + 1) + "." + std::to_string(j) + "=" + block_choice_str(c));
        }
    return out;
}

std::vector<int> SearchSpace::genome_from_strings(const std::vector<std::string>& strings) const {
    if (static_cast<int>(strings.size()) != total_slots())
        fail("genome strings: " + std::to_string(strings.size()) + " entries for " +
             std::to_string(total_slots()) + " slots");
    std::vector<int> genome;
    int cursor = 0;
    for (int s = 0; s < 4; ++s)
        for (int j = 0; j < slot_counts[static_cast<std::size_t>(s)]; ++j) {
            const std::string& text = strings[static_cast<std::size_t>(cursor++)];
            std::string expect = "s" + std::to_string(s + 1) + "." + std::to_string(j) + "=";
            if (text.rfind(expect, 0) != 0)
                fail("genome string '" + text + "' does not match expected slot prefix '" + expect + "'");
            BlockChoice choice = parse_block_choice(text.substr(expect.size()));
            auto it = std::find(candidates.begin(), candidates.end(), choice);
            if (it == candidates.end()) fail("genome string '" + text + "' is not in the candidate set");
            genome.push_back(static_cast<int>(it - candidates.begin()));
        }
    return genome;
}

CostReport genome_cost(const SearchSpace& space, const std::vector<int>& genome) {
    return network_report(space.spec_for(genome), 1, space.coeff);
}

double skeleton_latency(const SearchSpace& space) {
    int id = space.identity_index();
    if (id < 0) fail("search space has no Identity candidate; skeleton cost undefined");
    std::vector<int> genome(static_cast<std::size_t>(space.total_slots()), id);
    return genome_cost(space, genome).proxy_latency();
}

std::vector<int> mutate(const SearchSpace& space, const std::vector<int>& genome, Rng& rng) {
    space.validate_genome(genome);
    if (space.candidates.size() < 2)
        fail("mutate: space has a single candidate per slot, mutation impossible");
    if (genome.empty()) fail("mutate: empty genome");
    std::vector<int> child = genome;
    int slot = rng.uniform_int(static_cast<int>(genome.size()));
    int current = genome[static_cast<std::size_t>(slot)];
    int pick = rng.uniform_int(static_cast<int>(space.candidates.size()) - 1);
    if (pick >= current) ++pick;
    child[static_cast<std::size_t>(slot)] = pick;
    return child;
}

Evaluator::Evaluator(const SearchSpace& space, EvalConfig config) : space_(space), config_(std::move(config)) {
    config_.train.validate();
    config_.val.validate();
}

double Evaluator::evaluate(const std::vector<int>& genome) {
    space_.validate_genome(genome);
    auto it = cache_.find(genome);
    if (it != cache_.end()) return it->second;

    NetworkSpec spec = space_.spec_for(genome);
    Network net = Network::build(spec, config_.seed);

    // step-based training loop; batch order cycles a seeded shuffle
    std::vector<ParamRef> params = net.parameters();
    AdamState state;
    state.init(params);
    OptimConfig opt;
    opt.lr = config_.lr;
    opt.weight_decay = config_.weight_decay;
    opt.grad_clip = config_.grad_clip;
    opt.seed = config_.seed;
    Rng rng(config_.seed);
    const LabeledDataset& train = config_.train;
    std::vector<int> order(static_cast<std::size_t>(train.count()));
    for (int i = 0; i < train.count(); ++i) order[static_cast<std::size_t>(i)] = i;
    int start = train.count();  // force initial shuffle
    for (int step = 0; step < config_.train_steps; ++step) {
        if (start >= train.count()) {
            for (int i = train.count() - 1; i > 0; --i) {
                int j = rng.uniform_int(i + 1);
                std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
            }
            start = 0;
        }
        int count = std::min(config_.batch_size, train.count() - start);
        Shape shape = train.inputs.shape();
        shape[0] = count;
        Tensor batch(shape);
        std::vector<int> labels;
        std::size_t row = train.inputs.size() / static_cast<std::size_t>(train.count());
        for (int i = 0; i < count; ++i) {
            int src = order[static_cast<std::size_t>(start + i)];
            const double* s = train.inputs.data() + static_cast<std::size_t>(src) * row;
            double* d = batch.data() + static_cast<std::size_t>(i) * row;
            for (std::size_t j = 0; j < row; ++j) d[j] = s[j];
            labels.push_back(train.labels[static_cast<std::size_t>(src)]);
        }
        start += count;

        Tape tape;
        NodeId input = tape.leaf(batch, "input");
        std::vector<NodeId> param_ids;
        NodeId logits = net.build_tape(tape, input, &param_ids);
        NodeId loss = tape.softmax_cross_entropy(logits, labels);
        tape.backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(param_ids.size());
        for (NodeId id : param_ids)
            grads.push_back(tape.has_grad(id) ? tape.grad(id) : Tensor(tape.value(id).shape()));
        clip_gradients(grads, opt.grad_clip, ClipMode::Value);
        adamw_step(params, grads, state, opt);
    }

    double fitness = evaluate_accuracy(net, config_.val, std::max(config_.batch_size, 64));
    cache_[genome] = fitness;
    return fitness;
}

namespace {

// comparator shared by evolution and enumeration so ties resolve identically:
// fitness desc, proxy latency asc, genome lex asc
bool better(const Candidate& a, const Candidate& b) {
    if (a.fitness != b.fitness) return a.fitness > b.fitness;
    double la = a.cost.proxy_latency(), lb = b.cost.proxy_latency();
    if (la != lb) return la < lb;
    return a.genome < b.genome;
}

Candidate make_candidate(const SearchSpace& space, Evaluator& evaluator, const std::vector<int>& genome,
                         double budget) {
    Candidate c;
    c.genome = genome;
    c.cost = genome_cost(space, genome);
    c.feasible = c.cost.proxy_latency() <= budget;
    c.fitness = evaluator.evaluate(genome);
    return c;
}

}  // namespace

Candidate search(const SearchSpace& space, const SearchConfig& config, Evaluator& evaluator) {
    if (space.candidates.empty()) fail("search: empty candidate set");
    if (config.population < 2 || config.sample < 1 || config.generations < 0)
        fail("search: population must be >= 2, sample >= 1, generations >= 0");
    double skeleton = skeleton_latency(space);
    if (config.budget < skeleton)
        throw InfeasibleSearch("search budget " + std::to_string(config.budget) +
                                   " is below the fixed skeleton cost " + std::to_string(skeleton) +
                                   " (all-Identity genome); no architecture can satisfy it",
                               skeleton);

    Rng rng(config.seed);
    int slots = space.total_slots();
    int ncand = static_cast<int>(space.candidates.size());
    int id_index = space.identity_index();

    auto random_feasible = [&]() {
        for (int attempt = 0; attempt < 200; ++attempt) {
            std::vector<int> genome(static_cast<std::size_t>(slots));
            for (int i = 0; i < slots; ++i) genome[static_cast<std::size_t>(i)] = rng.uniform_int(ncand);
            if (genome_cost(space, genome).proxy_latency() <= config.budget) return genome;
        }
        return std::vector<int>(static_cast<std::size_t>(slots), id_index);  // always feasible
    };

    std::deque<Candidate> population;
    Candidate best;
    bool have_best = false;
    auto consider = [&](const Candidate& c) {
        if (!c.feasible) return;
        if (!have_best || better(c, best)) {
            best = c;
            have_best = true;
        }
    };

    for (int i = 0; i < config.population; ++i) {
        Candidate c = make_candidate(space, evaluator, random_feasible(), config.budget);
        consider(c);
        population.push_back(std::move(c));
    }

    for (int gen = 0; gen < config.generations; ++gen) {
        // tournament: sample S with replacement, take the best as parent
        const Candidate* parent = nullptr;
        for (int s = 0; s < config.sample; ++s) {
            const Candidate& pick = population[static_cast<std::size_t>(rng.uniform_int(
                static_cast<int>(population.size())))];
            if (!parent || better(pick, *parent)) parent = &pick;
        }
        std::vector<int> child_genome = parent->genome;
        bool found = false;
        for (int attempt = 0; attempt < 100; ++attempt) {
            std::vector<int> mutated = mutate(space, parent->genome, rng);
            if (genome_cost(space, mutated).proxy_latency() <= config.budget) {
                child_genome = std::move(mutated);
                found = true;
                break;
            }
        }
        if (!found) child_genome = parent->genome;  // keep the loop deterministic
        Candidate child = make_candidate(space, evaluator, child_genome, config.budget);
        consider(child);
        population.push_back(std::move(child));
        population.pop_front();
    }

    if (!have_best) fail("search: no feasible candidate found (unreachable: all-Identity is feasible)");
    return best;
}

Candidate enumerate_best(const SearchSpace& space, double budget, Evaluator& evaluator) {
    double skeleton = skeleton_latency(space);
    if (budget < skeleton)
        throw InfeasibleSearch("enumeration budget " + std::to_string(budget) +
                                   " is below the fixed skeleton cost " + std::to_string(skeleton),
                               skeleton);
    int slots = space.total_slots();
    int ncand = static_cast<int>(space.candidates.size());
    std::vector<int> genome(static_cast<std::size_t>(slots), 0);
    Candidate best;
    bool have_best = false;
    while (true) {
        if (genome_cost(space, genome).proxy_latency() <= budget) {
            Candidate c = make_candidate(space, evaluator, genome, budget);
            if (!have_best || better(c, best)) {
                best = c;
                have_best = true;
            }
        }
        int pos = slots - 1;
        while (pos >= 0) {
            if (++genome[static_cast<std::size_t>(pos)] < ncand) break;
            genome[static_cast<std::size_t>(pos)] = 0;
            --pos;
        }
        if (pos < 0) break;
    }
    if (!have_best) fail("enumerate_best: no feasible candidate");
    return best;
}

}  // namespace quadranet
