#include "quadranet/quadneuron.hpp"

#include <cmath>

namespace quadranet {

namespace {
double dot(const Tensor& w, const std::vector<double>& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * x[i];
    return s;
}
}  // namespace

double forward_full(const FullRankNeuron& neuron, const std::vector<double>& x) {
    int n = neuron.n();
    if (static_cast<int>(x.size()) != n)
        fail("forward_full: input length " + std::to_string(x.size()) + " != neuron size " + std::to_string(n));
    if (neuron.wq.rank() != 2 || neuron.wq.dim(0) != n || neuron.wq.dim(1) != n)
        fail("forward_full: Wq must be (" + std::to_string(n) + "," + std::to_string(n) + ")");
    double quad = 0.0;
    for (int i = 0; i < n; ++i) {
        double row = 0.0;
        for (int j = 0; j < n; ++j) row += neuron.wq.at2(i, j) * x[static_cast<std::size_t>(j)];
        quad += x[static_cast<std::size_t>(i)] * row;
    }
    return quad + dot(neuron.wc, x) + neuron.b;
}

double forward_lowrank(const LowRankNeuron& neuron, const std::vector<double>& x) {
    int n = neuron.n();
    if (static_cast<int>(x.size()) != n)
        fail("forward_lowrank: input length " + std::to_string(x.size()) + " != neuron size " + std::to_string(n));
    if (neuron.wa.dim(0) != n || neuron.wb.dim(0) != n)
        fail("forward_lowrank: wa/wb/wc lengths differ");
    return dot(neuron.wa, x) * dot(neuron.wb, x) + dot(neuron.wc, x) + neuron.b;
}

FullRankNeuron to_full_rank(const LowRankNeuron& neuron) {
    int n = neuron.n();
    FullRankNeuron full;
    full.wq = Tensor(Shape{n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            full.wq.at2(i, j) = neuron.wa[static_cast<std::size_t>(i)] * neuron.wb[static_cast<std::size_t>(j)];
    full.wc = neuron.wc;
    full.b = neuron.b;
    return full;
}

NeuronComplexity neuron_complexity(NeuronKind kind, int n) {
    if (n < 1) fail("neuron_complexity: n must be >= 1");
    std::size_t un = static_cast<std::size_t>(n);
    switch (kind) {
        case NeuronKind::FullRank:
            return {un * un + un + 1, un * un + 2 * un};
        case NeuronKind::LowRank:
            return {3 * un + 1, 4 * un};
        case NeuronKind::Linear:
            return {un + 1, un};
    }
    fail("neuron_complexity: bad kind");
}

XorTrainResult train_xor(NeuronKind kind, const std::vector<std::array<double, 2>>& points,
                         const std::vector<int>& labels, int steps, double lr, std::uint64_t seed) {
    if (points.size() != labels.size()) fail("train_xor: points/labels size mismatch");
    if (points.empty()) fail("train_xor: empty dataset");
    for (int t : labels)
        if (t != 1 && t != -1) fail("train_xor: labels must be +-1");
    const int n = 2;
    const bool quad = (kind != NeuronKind::Linear);

    Rng rng(seed);
    LowRankNeuron neuron;
    neuron.wa = Tensor(Shape{n});
    neuron.wb = Tensor(Shape{n});
    neuron.wc = Tensor(Shape{n});
    double bound = 1.0 / std::sqrt(static_cast<double>(n));
    for (int i = 0; i < n; ++i) {
        double a = rng.uniform(-0.1, 0.1);
        double b = rng.uniform(-0.1, 0.1);
        neuron.wa[static_cast<std::size_t>(i)] = quad ? a : 0.0;
        neuron.wb[static_cast<std::size_t>(i)] = quad ? b : 0.0;
        neuron.wc[static_cast<std::size_t>(i)] = rng.uniform(-bound, bound);
    }
    neuron.b = 0.0;

    const double inv_n = 1.0 / static_cast<double>(points.size());
    for (int step = 0; step < steps; ++step) {
        double ga0 = 0, ga1 = 0, gb0 = 0, gb1 = 0, gc0 = 0, gc1 = 0, gbias = 0;
        for (std::size_t p = 0; p < points.size(); ++p) {
            const auto& x = points[p];
            double da = neuron.wa[0] * x[0] + neuron.wa[1] * x[1];
            double db = neuron.wb[0] * x[0] + neuron.wb[1] * x[1];
            double y = da * db + neuron.wc[0] * x[0] + neuron.wc[1] * x[1] + neuron.b;
            double e = 2.0 * (y - labels[p]) * inv_n;
            ga0 += e * db * x[0];
            ga1 += e * db * x[1];
            gb0 += e * da * x[0];
            gb1 += e * da * x[1];
            gc0 += e * x[0];
            gc1 += e * x[1];
            gbias += e;
        }
        if (quad) {
            neuron.wa[0] -= lr * ga0;
            neuron.wa[1] -= lr * ga1;
            neuron.wb[0] -= lr * gb0;
            neuron.wb[1] -= lr * gb1;
        }
        neuron.wc[0] -= lr * gc0;
        neuron.wc[1] -= lr * gc1;
        neuron.b -= lr * gbias;
    }

    int correct = 0;
    for (std::size_t p = 0; p < points.size(); ++p) {
        std::vector<double> x{points[p][0], points[p][1]};
        double y = forward_lowrank(neuron, x);
        int pred = y > 0.0 ? 1 : -1;
        if (pred == labels[p]) ++correct;
    }
    return {neuron, static_cast<double>(correct) / static_cast<double>(points.size())};
}

}  // namespace quadranet
