#include "quadranet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace quadranet {

void OptimConfig::validate() const {
    if (lr < 0.0) fail("optim config: lr must be >= 0");
    if (grad_clip <= 0.0) fail("optim config: grad_clip must be > 0");
    if (weight_decay < 0.0) fail("optim config: weight_decay must be >= 0");
    if (epochs < 0 || batch_size < 1) fail("optim config: bad epochs/batch_size");
}

void clip_gradients(std::vector<Tensor>& grads, double clip_value, ClipMode mode) {
    if (clip_value <= 0.0) fail("clip_gradients: clip value must be > 0");
    if (mode == ClipMode::Value) {
        for (Tensor& g : grads)
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::clamp(g[i], -clip_value, clip_value);
        return;
    }
    double sq = 0.0;
    for (const Tensor& g : grads)
        for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
    double norm = std::sqrt(sq);
    if (norm > clip_value) {
        double s = clip_value / norm;
        for (Tensor& g : grads)
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= s;
    }
}

void AdamState::init(const std::vector<ParamRef>& params) {
    m.clear();
    v.clear();
    for (const ParamRef& p : params) {
        m.emplace_back(p.tensor->shape());
        v.emplace_back(p.tensor->shape());
    }
    step = 0;
}

void adamw_step(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads, AdamState& state,
                const OptimConfig& config, double lr_scale) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        fail("adamw_step: params/grads/state size mismatch");
    state.step += 1;
    double t = static_cast<double>(state.step);
    double bc1 = 1.0 - std::pow(config.beta1, t);
    double bc2 = 1.0 - std::pow(config.beta2, t);
    double lr = config.lr * lr_scale;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& param = *params[p].tensor;
        const Tensor& g = grads[p];
        if (!param.same_shape(g))
            fail("adamw_step: grad shape " + shape_str(g.shape()) + " != param shape " +
                 shape_str(param.shape()) + " for " + params[p].name);
        Tensor& m = state.m[p];
        Tensor& v = state.v[p];
        for (std::size_t i = 0; i < param.size(); ++i) {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            param[i] -= lr * (mhat / (std::sqrt(vhat) + config.eps) + config.weight_decay * param[i]);
        }
    }
}

void sgd_step(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads,
              const OptimConfig& config, double lr_scale) {
    if (params.size() != grads.size()) fail("sgd_step: params/grads size mismatch");
    double lr = config.lr * lr_scale;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& param = *params[p].tensor;
        const Tensor& g = grads[p];
        for (std::size_t i = 0; i < param.size(); ++i)
            param[i] -= lr * (g[i] + config.weight_decay * param[i]);
    }
}

std::string FitResult::csv() const {
    std::string out = "epoch,loss,train_acc,val_acc\n";
    char buf[160];
    for (const EpochMetrics& row : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g\n", row.epoch, row.loss, row.train_acc,
                      row.val_acc);
        out += buf;
    }
    return out;
}

namespace {

Tensor gather_batch(const LabeledDataset& ds, const std::vector<int>& order, int start, int count,
                    std::vector<int>* labels) {
    Shape shape = ds.inputs.shape();
    shape[0] = count;
    Tensor batch(shape);
    std::size_t row = ds.inputs.size() / static_cast<std::size_t>(ds.count());
    for (int i = 0; i < count; ++i) {
        int src = order[static_cast<std::size_t>(start + i)];
        const double* s = ds.inputs.data() + static_cast<std::size_t>(src) * row;
        double* d = batch.data() + static_cast<std::size_t>(i) * row;
        for (std::size_t j = 0; j < row; ++j) d[j] = s[j];
        if (labels) labels->push_back(ds.labels[static_cast<std::size_t>(src)]);
    }
    return batch;
}

int argmax_row(const Tensor& logits, int row) {
    int best = 0;
    for (int j = 1; j < logits.dim(1); ++j)
        if (logits.at2(row, j) > logits.at2(row, best)) best = j;
    return best;
}

}  // namespace

double evaluate_accuracy(Network& net, const LabeledDataset& ds, int batch_size) {
    ds.validate();
    std::vector<int> order(static_cast<std::size_t>(ds.count()));
    for (int i = 0; i < ds.count(); ++i) order[static_cast<std::size_t>(i)] = i;
    int correct = 0;
    for (int start = 0; start < ds.count(); start += batch_size) {
        int count = std::min(batch_size, ds.count() - start);
        std::vector<int> labels;
        Tensor batch = gather_batch(ds, order, start, count, &labels);
        Tensor logits = net.forward(batch);
        for (int i = 0; i < count; ++i)
            if (argmax_row(logits, i) == labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.count());
}

FitResult fit(Network& net, const LabeledDataset& train, const LabeledDataset& val,
              const OptimConfig& config) {
    config.validate();
    train.validate();
    val.validate();
    if (train.num_classes != net.spec().num_classes)
        fail("fit: dataset has " + std::to_string(train.num_classes) + " classes, network expects " +
             std::to_string(net.spec().num_classes));

    std::vector<ParamRef> params = net.parameters();
    AdamState state;
    state.init(params);
    Rng rng(config.seed);
    std::vector<int> order(static_cast<std::size_t>(train.count()));
    for (int i = 0; i < train.count(); ++i) order[static_cast<std::size_t>(i)] = i;

    FitResult result;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // Fisher-Yates with the run's rng: deterministic batch order
        for (int i = train.count() - 1; i > 0; --i) {
            int j = rng.uniform_int(i + 1);
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }
        double lr_scale = 1.0;
        if (config.warmup_epochs > 0 && epoch < config.warmup_epochs)
            lr_scale = static_cast<double>(epoch + 1) / static_cast<double>(config.warmup_epochs);

        double loss_sum = 0.0;
        int correct = 0;
        for (int start = 0; start < train.count(); start += config.batch_size) {
            int count = std::min(config.batch_size, train.count() - start);
            std::vector<int> labels;
            Tensor batch = gather_batch(train, order, start, count, &labels);

            Tape tape;
            NodeId input = tape.leaf(batch, "input");
            std::vector<NodeId> param_ids;
            NodeId logits = net.build_tape(tape, input, &param_ids);
            NodeId loss = tape.softmax_cross_entropy(logits, labels);
            tape.backward(loss);

            const Tensor& lv = tape.value(logits);
            for (int i = 0; i < count; ++i)
                if (argmax_row(lv, i) == labels[static_cast<std::size_t>(i)]) ++correct;
            loss_sum += tape.value(loss)[0] * count;

            std::vector<Tensor> grads;
            grads.reserve(param_ids.size());
            for (NodeId id : param_ids)
                grads.push_back(tape.has_grad(id) ? tape.grad(id) : Tensor(tape.value(id).shape()));
            clip_gradients(grads, config.grad_clip, config.clip_mode);
            if (config.kind == OptimKind::AdamW)
                adamw_step(params, grads, state, config, lr_scale);
            else
                sgd_step(params, grads, config, lr_scale);
        }

        EpochMetrics row;
        row.epoch = epoch;
        row.loss = loss_sum / train.count();
        row.train_acc = static_cast<double>(correct) / train.count();
        row.val_acc = evaluate_accuracy(net, val, std::max(config.batch_size, 64));
        result.history.push_back(row);
    }
    return result;
}

}  // namespace quadranet
