#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "quadranet/blocks.hpp"

namespace quadranet {

// Four-stage pyramid: STEM (4x4 stride-4 conv, 3->C), stages of blocks at
// channels [C, 2C, 4C, 8C] with LN + 2x2 stride-2 downsamples between stages,
// then global average pool + LN + linear head.
struct NetworkSpec {
    int base_channels = 64;
    std::array<int, 4> stage_depths{3, 3, 27, 3};
    std::array<std::vector<BlockChoice>, 4> slots;  // one choice per block slot
    int num_classes = 1000;
    int input_size = 224;
    int quad_mixer = 0;  // channel-mixer ablation level for Quadra blocks

    std::array<int, 4> stage_channels() const {
        return {base_channels, 2 * base_channels, 4 * base_channels, 8 * base_channels};
    }
    void validate() const;

    // uniform spec: the same block choice in every slot
    static NetworkSpec uniform(int base_channels, std::array<int, 4> depths, BlockChoice block,
                               int num_classes, int input_size);
    // "quadranet36-t" etc.: families 36 [3,3,27,3], 25 [2,3,18,2], 12 [2,2,6,2];
    // sizes xxs/xs/t/s/b -> C = 16/32/64/96/128
    static NetworkSpec preset(const std::string& name, int num_classes = 1000, int input_size = 224);
    static std::vector<std::string> preset_names();
};

class Network {
public:
    static Network build(const NetworkSpec& spec, std::uint64_t seed);

    const NetworkSpec& spec() const { return spec_; }
    std::uint64_t seed() const { return seed_; }

    // parameter registry, ordered exactly as build_tape pushes leaves
    std::vector<ParamRef> parameters();
    std::size_t param_count() const;

    // returns the logits node; pushes one leaf per parameter (ids appended to
    // param_ids when non-null)
    NodeId build_tape(Tape& tape, NodeId input, std::vector<NodeId>* param_ids = nullptr);

    Tensor forward(const Tensor& batch);

private:
    struct Downsample {
        Tensor ln_gamma, ln_beta, w, b;
    };

    NetworkSpec spec_;
    std::uint64_t seed_ = 0;
    Tensor stem_w_, stem_b_;
    std::array<std::vector<AnyBlock>, 4> stages_;
    std::array<Downsample, 3> downs_;
    Tensor head_ln_gamma_, head_ln_beta_, head_w_, head_b_;
};

}  // namespace quadranet
