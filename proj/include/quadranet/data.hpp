#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "quadranet/tensor.hpp"

namespace quadranet {

struct LabeledDataset {
    Tensor inputs;             // (N, C, H, W) images or (N, 2) points
    std::vector<int> labels;   // in [0, num_classes)
    int num_classes = 2;
    std::string split = "train";

    int count() const { return inputs.dim(0); }
    void validate() const;
};

// Generalized XOR: n points per quadrant of [-spread, spread]^2 with a band
// around both axes excluded, label 1 iff x1 * x2 > 0. Inputs shaped (4n, 2).
LabeledDataset gen_xor(int n_per_quadrant, double spread, std::uint64_t seed);

// adapters for the neuron-level trainer
std::vector<std::array<double, 2>> xor_points(const LabeledDataset& ds);
std::vector<int> xor_pm1_labels(const LabeledDataset& ds);  // {0,1} -> {-1,+1}

// Synthetic image task decodable only through multiplicative interaction:
// two Gaussian blobs (small + large) with signed amplitudes a, b. Channels:
// blob A, blob B, and their sum. Classes: 2 -> [a*b > 0]; 4 -> adds the
// relative-position bit [A left of B]. Size >= 8.
LabeledDataset gen_interaction_images(int n, int size, int num_classes, std::uint64_t seed);

// XOR points rendered as constant-plane images (channels x1, x2, (x1+x2)/2),
// trivially separable for a quadratic network. 2 classes.
LabeledDataset gen_xor_images(int n_per_quadrant, double spread, int size, std::uint64_t seed);

// IDX (big-endian) reader: images magic 0x00000803 (u8, N x H x W), labels
// magic 0x00000801. Pixels scaled to [0,1]; output shape (N, 1, H, W).
LabeledDataset read_idx(const std::string& images_path, const std::string& labels_path);
// Export a single-channel dataset as an IDX pair (u8, round(v*255)).
void write_idx(const LabeledDataset& ds, const std::string& images_path, const std::string& labels_path);

// Deterministic stride split: every val_stride-th sample goes to val.
std::pair<LabeledDataset, LabeledDataset> split_train_val(const LabeledDataset& ds, int val_stride);

}  // namespace quadranet
