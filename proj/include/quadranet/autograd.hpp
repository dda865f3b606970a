#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "quadranet/quadconv.hpp"
#include "quadranet/tensor.hpp"

namespace quadranet {

using NodeId = int;

enum class OpKind {
    Leaf,
    Conv2d,
    QuadConv,
    LayerNorm,
    Gelu,
    Hadamard,
    Add,
    Scale,
    Sum,
    WindowAttention,
    GlobalAvgPool,
    Linear,
    SoftmaxCrossEntropy,
};

enum class Phase { Forward, Backward };

// One forward intermediate produced by a node. `retained` marks whether the
// op's release rule keeps it alive for the backward pass.
struct StateRecord {
    std::string label;
    std::size_t elements = 0;
    bool retained = false;
};

struct Node {
    NodeId id = -1;
    OpKind kind = OpKind::Leaf;
    std::vector<NodeId> inputs;
    Shape out_shape;
    std::vector<StateRecord> states;

    // forward values this node keeps for its backward rule
    std::vector<Tensor> saved;
    // forward values this node releases; exposed so tests can poison them,
    // backward never reads them
    std::vector<Tensor> released;

    // op parameters
    int groups = 1, stride = 1, padding = 0;   // conv-family
    double eps = 0.0;                          // layer norm
    double alpha = 1.0;                        // scale
    int window = 0;                            // window attention
    std::vector<int> labels;                   // softmax cross-entropy
    std::string name;                          // leaf label
};

class Tape {
public:
    NodeId leaf(Tensor value, std::string name = "");

    NodeId conv2d(NodeId x, NodeId w, NodeId bias, int groups, int stride, int padding);
    NodeId quad_conv(NodeId x, NodeId wa, NodeId wb, NodeId wc, NodeId bias, int groups, int stride,
                     int padding);
    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps);
    NodeId gelu(NodeId x);
    NodeId hadamard(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId scale(NodeId x, double alpha);
    NodeId sum(NodeId x);
    NodeId window_attention(NodeId x, NodeId wq, NodeId wk, NodeId wv, NodeId wo, int window);
    NodeId global_avg_pool(NodeId x);
    NodeId linear(NodeId x, NodeId w, NodeId bias);
    NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels);

    // Reverse sweep from a scalar loss; grads accumulate in fixed node order.
    void backward(NodeId loss);

    const Tensor& value(NodeId id) const;
    bool has_grad(NodeId id) const;
    const Tensor& grad(NodeId id) const;

    // forward phase: every produced intermediate; backward phase: only the
    // intermediates retained by each op's release rule
    std::map<std::string, std::size_t> state_report(Phase phase) const;
    std::size_t state_total(Phase phase) const;

    const std::vector<Node>& nodes() const { return nodes_; }
    const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t num_nodes() const { return nodes_.size(); }

    // test hook: overwrite a node's released buffers with NaN
    void poison_released(NodeId id);

private:
    Node& fresh(OpKind kind, std::vector<NodeId> inputs);
    void check_id(NodeId id) const;
    void accumulate(NodeId id, const Tensor& g);
    void backward_node(const Node& node);

    std::vector<Node> nodes_;
    std::vector<Tensor> values_;
    std::vector<Tensor> grads_;
};

// Central finite differences (f(x+h e_i) - f(x-h e_i)) / 2h per element.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace quadranet
