#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "quadranet/autograd.hpp"
#include "quadranet/blocks.hpp"
#include "quadranet/network.hpp"

namespace quadranet {

struct CostCoefficients {
    double alpha = 1.0;   // per MAC
    double beta = 2.0;    // per forward intermediate-state element
    double gamma = 1e4;   // per mandatorily-sequential operator group
};

struct CostReport {
    std::size_t params = 0;
    std::size_t macs = 0;
    std::size_t fwd_states = 0;
    std::size_t bwd_retained_states = 0;
    std::size_t serial_depth = 0;
    CostCoefficients coeff;

    double proxy_latency() const {
        return coeff.alpha * static_cast<double>(macs) + coeff.beta * static_cast<double>(fwd_states) +
               coeff.gamma * static_cast<double>(serial_depth);
    }
    CostReport& operator+=(const CostReport& other);

    // fixed-column text table; bytes=true multiplies state counts by 8 (f64)
    // for display only
    std::string table(bool bytes = false) const;
};

// Self-attention spatial-mixer intermediate states per the paper's bookkeeping,
// in elements for one sample:
//   global:   3HWC + (HW)^2 + (HW)^2 C
//   windowed: (M^2 + 3) HWC
std::size_t states_self_attention(int h, int w, int c, std::optional<int> window = std::nullopt);
// summary factor (HW + 3) for the global case, exposed as a convenience
std::size_t attention_summary_factor(int h, int w);

// quadratic conv: forward 4HWC, backward-retained 2HWC
std::size_t states_quadratic(int h, int w, int c, Phase phase);
// plain depthwise conv: HWC
std::size_t states_depthwise(int h, int w, int c);

// Analytic per-block report at feature-map size h x w with batch n. Mirrors
// exactly what the live tape registers for the same block.
CostReport block_report(const BlockChoice& choice, int channels, int h, int w, int batch = 1,
                        CostCoefficients coeff = {});

// Whole-network analytic report at the spec's input size.
CostReport network_report(const NetworkSpec& spec, int batch = 1, CostCoefficients coeff = {});

// The four-block comparison (Skip / Conv / Quadra / Attention) at a fixed shape.
std::string compare_table(int channels, int h, int w, int window, bool bytes = false,
                          CostCoefficients coeff = {});

}  // namespace quadranet
