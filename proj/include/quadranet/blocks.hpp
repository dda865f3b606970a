#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "quadranet/autograd.hpp"
#include "quadranet/tensor.hpp"

namespace quadranet {

enum class BlockKind { Quadra, Conv, Skip, Attention, Identity, Recursive };

// Declarative block description; `order` only matters for the cost model's
// recursive-penalty block, `window` only for attention.
struct BlockChoice {
    BlockKind kind = BlockKind::Quadra;
    int kernel = 7;
    int expansion = 4;
    int window = 7;
    int order = 1;

    bool operator==(const BlockChoice&) const = default;
};

std::string block_choice_str(const BlockChoice& choice);   // "Q7x4", "C7x4", "SKIPx4", "ATTN7x4", "ID"
BlockChoice parse_block_choice(const std::string& text);

struct ParamRef {
    std::string name;
    Tensor* tensor;
};

struct QuadraBlockParams {
    int channels = 0, kernel = 7, expansion = 4;
    int quad_mixer = 0;  // 0: linear 1x1 convs; 1: first 1x1 quadratic; 2: both
    Tensor ln1_gamma, ln1_beta;
    Tensor wa, wb, wc, qbias;          // depthwise (C,1,k,k) kernels + f_c bias
    Tensor ln2_gamma, ln2_beta;
    Tensor pw1_w, pw1_b;               // (RC, C, 1, 1)
    Tensor pw1_wa, pw1_wb;             // only when quad_mixer >= 1
    Tensor pw2_w, pw2_b;               // (C, RC, 1, 1)
    Tensor pw2_wa, pw2_wb;             // only when quad_mixer >= 2

    static QuadraBlockParams init(int channels, int kernel, int expansion, int quad_mixer, Rng& rng);
    std::vector<ParamRef> parameters();
};

struct ConvBlockParams {
    int channels = 0, kernel = 7, expansion = 4;
    Tensor ln1_gamma, ln1_beta;
    Tensor dw_w, dw_b;                 // plain depthwise conv
    Tensor ln2_gamma, ln2_beta;
    Tensor pw1_w, pw1_b, pw2_w, pw2_b;

    static ConvBlockParams init(int channels, int kernel, int expansion, Rng& rng);
    std::vector<ParamRef> parameters();
};

struct SkipBlockParams {
    int channels = 0, expansion = 4;
    Tensor ln_gamma, ln_beta;
    Tensor pw1_w, pw1_b, pw2_w, pw2_b;

    static SkipBlockParams init(int channels, int expansion, Rng& rng);
    std::vector<ParamRef> parameters();
};

struct AttnBlockParams {
    int channels = 0, window = 7, expansion = 4;
    Tensor ln1_gamma, ln1_beta;
    Tensor wq, wk, wv, wo;             // (C, C) projections
    Tensor ln2_gamma, ln2_beta;
    Tensor pw1_w, pw1_b, pw2_w, pw2_b;

    static AttnBlockParams init(int channels, int window, int expansion, Rng& rng);
    std::vector<ParamRef> parameters();
};

struct IdentityBlock {
    std::vector<ParamRef> parameters() { return {}; }
};

using AnyBlock = std::variant<IdentityBlock, QuadraBlockParams, ConvBlockParams, SkipBlockParams, AttnBlockParams>;

AnyBlock make_block(const BlockChoice& choice, int channels, Rng& rng);
std::vector<ParamRef> block_parameters(AnyBlock& block);
std::size_t block_param_count(const AnyBlock& block);
BlockChoice block_choice_of(const AnyBlock& block);

// Tape builders. Parameter leaves are pushed in `parameters()` order and their
// node ids appended to param_ids (when non-null).
NodeId block_forward(Tape& tape, AnyBlock& block, NodeId x, std::vector<NodeId>* param_ids = nullptr);

// Pure convenience forwards (build a throwaway tape).
Tensor quadrablock_forward(QuadraBlockParams& params, const Tensor& x);
Tensor convblock_forward(ConvBlockParams& params, const Tensor& x);
Tensor skipblock_forward(SkipBlockParams& params, const Tensor& x);
Tensor attnblock_forward(AttnBlockParams& params, const Tensor& x);
Tensor window_attention_forward(AttnBlockParams& params, const Tensor& x);  // the attention layer alone

// Checks sum_{r=1..R} W_ar^T W_br == W_A^T W_B exactly (stacked form) and that
// the numeric rank of the stacked product is <= R.
struct RankIdentityResult {
    double max_abs_diff = 0.0;
    int rank = 0;
    bool holds = false;
};
RankIdentityResult rank_identity(int r, int n, std::uint64_t seed);

// Singular values of a dense matrix by one-sided Jacobi (descending order).
std::vector<double> singular_values(const Tensor& m);

}  // namespace quadranet
