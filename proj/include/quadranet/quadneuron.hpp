#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "quadranet/tensor.hpp"

namespace quadranet {

// y = x^T Wq x + Wc x + b
struct FullRankNeuron {
    Tensor wq;   // (n, n)
    Tensor wc;   // (n)
    double b = 0.0;
    int n() const { return wc.dim(0); }
};

// y = (Wa.x)(Wb.x) + Wc.x + b
struct LowRankNeuron {
    Tensor wa;   // (n)
    Tensor wb;   // (n)
    Tensor wc;   // (n)
    double b = 0.0;
    int n() const { return wc.dim(0); }
};

double forward_full(const FullRankNeuron& neuron, const std::vector<double>& x);
double forward_lowrank(const LowRankNeuron& neuron, const std::vector<double>& x);

// Wq := Wa^T Wb (outer product), linear part copied.
FullRankNeuron to_full_rank(const LowRankNeuron& neuron);

enum class NeuronKind { FullRank, LowRank, Linear };

struct NeuronComplexity {
    std::size_t params = 0;
    std::size_t macs = 0;
};
// full-rank: (n^2+n+1, n^2+2n); low-rank: (3n+1, 4n). The +1 is the bias,
// which is excluded from the MAC count.
NeuronComplexity neuron_complexity(NeuronKind kind, int n);

struct XorTrainResult {
    LowRankNeuron neuron;
    double accuracy = 0.0;
};
// Full-batch gradient descent on mean squared error against +-1 labels,
// sign readout for accuracy. Linear kind freezes wa = wb = 0.
XorTrainResult train_xor(NeuronKind kind, const std::vector<std::array<double, 2>>& points,
                         const std::vector<int>& labels, int steps, double lr, std::uint64_t seed);

}  // namespace quadranet
