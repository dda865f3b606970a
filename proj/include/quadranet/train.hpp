#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "quadranet/data.hpp"
#include "quadranet/network.hpp"

namespace quadranet {

enum class OptimKind { AdamW, Sgd };
enum class ClipMode { Value, Norm };

struct OptimConfig {
    OptimKind kind = OptimKind::AdamW;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.05;
    double grad_clip = 5.0;           // elementwise clamp by default
    ClipMode clip_mode = ClipMode::Value;
    int epochs = 10;
    int batch_size = 32;
    std::uint64_t seed = 0;
    int warmup_epochs = 0;            // linear warmup when > 0

    void validate() const;
};

// Value mode: elementwise clamp to [-clip, clip]. Norm mode: rescale all
// gradients jointly when the global L2 norm exceeds clip.
void clip_gradients(std::vector<Tensor>& grads, double clip_value, ClipMode mode);

struct AdamState {
    std::vector<Tensor> m, v;
    long step = 0;
    void init(const std::vector<ParamRef>& params);
};

// decoupled update: p <- p - lr * (mhat / (sqrt(vhat) + eps) + wd * p)
void adamw_step(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads, AdamState& state,
                const OptimConfig& config, double lr_scale = 1.0);
void sgd_step(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads,
              const OptimConfig& config, double lr_scale = 1.0);

struct EpochMetrics {
    int epoch = 0;
    double loss = 0.0, train_acc = 0.0, val_acc = 0.0;
};

struct FitResult {
    std::vector<EpochMetrics> history;
    std::string csv() const;  // header "epoch,loss,train_acc,val_acc"
    double final_val_acc() const { return history.empty() ? 0.0 : history.back().val_acc; }
};

// Cross-entropy training with seeded shuffling; deterministic given config.
FitResult fit(Network& net, const LabeledDataset& train, const LabeledDataset& val,
              const OptimConfig& config);

double evaluate_accuracy(Network& net, const LabeledDataset& ds, int batch_size = 64);

}  // namespace quadranet
