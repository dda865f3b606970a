#include "quadranet/network.hpp"

#include <algorithm>
#include <cmath>

namespace quadranet {

void NetworkSpec::validate() const {
    if (base_channels < 1) fail("network spec: base_channels must be >= 1");
    if (num_classes < 2) fail("network spec: num_classes must be >= 2");
    if (input_size < 32 || input_size % 32 != 0)
        fail("network spec: input size " + std::to_string(input_size) +
             " must be divisible by 32 (4x STEM then three 2x downsamples)");
    if (quad_mixer < 0 || quad_mixer > 2) fail("network spec: quad_mixer must be 0, 1 or 2");
    for (int s = 0; s < 4; ++s) {
        if (stage_depths[static_cast<std::size_t>(s)] < 0) fail("network spec: stage depths must be >= 0");
        if (static_cast<int>(slots[static_cast<std::size_t>(s)].size()) != stage_depths[static_cast<std::size_t>(s)])
            fail("network spec: stage " + std::to_string(s + 1) + " has " +
                 std::to_string(slots[static_cast<std::size_t>(s)].size()) + " slots but depth " +
                 std::to_string(stage_depths[static_cast<std::size_t>(s)]));
        for (const BlockChoice& c : slots[static_cast<std::size_t>(s)]) {
            if (c.kind == BlockKind::Recursive)
                fail("network spec: recursive blocks are cost-model-only");
            if ((c.kind == BlockKind::Quadra || c.kind == BlockKind::Conv) && c.kernel % 2 != 1)
                fail("network spec: kernel must be odd, got " + std::to_string(c.kernel));
            if (c.expansion < 1) fail("network spec: expansion must be >= 1");
        }
    }
}

NetworkSpec NetworkSpec::uniform(int base_channels, std::array<int, 4> depths, BlockChoice block,
                                 int num_classes, int input_size) {
    NetworkSpec spec;
    spec.base_channels = base_channels;
    spec.stage_depths = depths;
    spec.num_classes = num_classes;
    spec.input_size = input_size;
    for (int s = 0; s < 4; ++s)
        spec.slots[static_cast<std::size_t>(s)].assign(static_cast<std::size_t>(depths[static_cast<std::size_t>(s)]),
                                                       block);
    return spec;
}

NetworkSpec NetworkSpec::preset(const std::string& name, int num_classes, int input_size) {
    auto dash = name.find('-');
    if (dash == std::string::npos || name.rfind("quadranet", 0) != 0)
        fail("unknown preset '" + name + "' (expected quadranet<family>-<size>, e.g. quadranet36-t)");
    std::string family = name.substr(9, dash - 9);
    std::string size = name.substr(dash + 1);
    std::array<int, 4> depths{};
    if (family == "36")
        depths = {3, 3, 27, 3};
    else if (family == "25")
        depths = {2, 3, 18, 2};
    else if (family == "12")
        depths = {2, 2, 6, 2};
    else
        fail("unknown preset family '" + family + "' (expected 36, 25 or 12)");
    int channels = 0;
    if (size == "xxs")
        channels = 16;
    else if (size == "xs")
        channels = 32;
    else if (size == "t")
        channels = 64;
    else if (size == "s")
        channels = 96;
    else if (size == "b")
        channels = 128;
    else
        fail("unknown preset size '" + size + "' (expected xxs, xs, t, s or b)");
    return uniform(channels, depths, BlockChoice{BlockKind::Quadra, 7, 4, 7, 1}, num_classes, input_size);
}

std::vector<std::string> NetworkSpec::preset_names() {
    std::vector<std::string> names;
    for (const char* family : {"36", "25", "12"})
        for (const char* size : {"xxs", "xs", "t", "s", "b"})
            names.push_back(std::string("quadranet") + family + "-" + size);
    return names;
}

Network Network::build(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    Network net;
    net.spec_ = spec;
    net.seed_ = seed;
    Rng rng(seed);

    auto channels = spec.stage_channels();
    int c0 = channels[0];

    auto init_conv = [&](Shape shape) {
        Tensor w(std::move(shape));
        double fan_in = static_cast<double>(w.dim(1)) * w.dim(2) * w.dim(3);
        double bound = 1.0 / std::sqrt(fan_in);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
        return w;
    };

    net.stem_w_ = init_conv(Shape{c0, 3, 4, 4});
    net.stem_b_ = Tensor::zeros(Shape{c0});

    for (int s = 0; s < 4; ++s) {
        int c = channels[static_cast<std::size_t>(s)];
        for (const BlockChoice& choice : spec.slots[static_cast<std::size_t>(s)]) {
            AnyBlock block = choice.kind == BlockKind::Quadra
                                 ? AnyBlock(QuadraBlockParams::init(c, choice.kernel, choice.expansion,
                                                                    spec.quad_mixer, rng))
                                 : make_block(choice, c, rng);
            net.stages_[static_cast<std::size_t>(s)].push_back(std::move(block));
        }
        if (s < 3) {
            Downsample ds;
            int cin = channels[static_cast<std::size_t>(s)];
            int cout = channels[static_cast<std::size_t>(s) + 1];
            ds.ln_gamma = Tensor::ones(Shape{cin});
            ds.ln_beta = Tensor::zeros(Shape{cin});
            ds.w = init_conv(Shape{cout, cin, 2, 2});
            ds.b = Tensor::zeros(Shape{cout});
            net.downs_[static_cast<std::size_t>(s)] = std::move(ds);
        }
    }

    int c_last = channels[3];
    net.head_ln_gamma_ = Tensor::ones(Shape{c_last});
    net.head_ln_beta_ = Tensor::zeros(Shape{c_last});
    net.head_w_ = Tensor(Shape{spec.num_classes, c_last});
    double bound = 1.0 / std::sqrt(static_cast<double>(c_last));
    for (std::size_t i = 0; i < net.head_w_.size(); ++i) net.head_w_[i] = rng.uniform(-bound, bound);
    net.head_b_ = Tensor::zeros(Shape{spec.num_classes});
    return net;
}

std::vector<ParamRef> Network::parameters() {
    std::vector<ParamRef> refs;
    refs.push_back({"stem.w", &stem_w_});
    refs.push_back({"stem.b", &stem_b_});
    for (int s = 0; s < 4; ++s) {
        for (std::size_t b = 0; b < stages_[static_cast<std::size_t>(s)].size(); ++b) {
            std::string prefix = "s" + std::to_string(s + 1) + ".b" + std::to_string(b) + ".";
            for (ParamRef ref : block_parameters(stages_[static_cast<std::size_t>(s)][b]))
                refs.push_back({prefix + ref.name, ref.tensor});
        }
        if (s < 3) {
            Downsample& ds = downs_[static_cast<std::size_t>(s)];
            std::string prefix = "ds" + std::to_string(s + 1) + ".";
            refs.push_back({prefix + "ln.gamma", &ds.ln_gamma});
            refs.push_back({prefix + "ln.beta", &ds.ln_beta});
            refs.push_back({prefix + "w", &ds.w});
            refs.push_back({prefix + "b", &ds.b});
        }
    }
    refs.push_back({"head.ln.gamma", &head_ln_gamma_});
    refs.push_back({"head.ln.beta", &head_ln_beta_});
    refs.push_back({"head.w", &head_w_});
    refs.push_back({"head.b", &head_b_});
    return refs;
}

std::size_t Network::param_count() const {
    std::size_t count = 0;
    for (const ParamRef& ref : const_cast<Network*>(this)->parameters()) count += ref.tensor->size();
    return count;
}

NodeId Network::build_tape(Tape& tape, NodeId input, std::vector<NodeId>* param_ids) {
    const Tensor& x = tape.value(input);
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != spec_.input_size || x.dim(3) != spec_.input_size)
        fail("network forward: expected batch of shape (N,3," + std::to_string(spec_.input_size) + "," +
             std::to_string(spec_.input_size) + "), got " + shape_str(x.shape()));

    auto push = [&](Tensor& t, const char* name) {
        NodeId id = tape.leaf(t, name);
        if (param_ids) param_ids->push_back(id);
        return id;
    };

    NodeId stem_w = push(stem_w_, "stem.w");
    NodeId stem_b = push(stem_b_, "stem.b");
    NodeId h = tape.conv2d(input, stem_w, stem_b, 1, 4, 0);

    for (int s = 0; s < 4; ++s) {
        for (AnyBlock& block : stages_[static_cast<std::size_t>(s)]) h = block_forward(tape, block, h, param_ids);
        if (s < 3) {
            Downsample& ds = downs_[static_cast<std::size_t>(s)];
            NodeId g = push(ds.ln_gamma, "ds.ln.gamma");
            NodeId b = push(ds.ln_beta, "ds.ln.beta");
            NodeId w = push(ds.w, "ds.w");
            NodeId bias = push(ds.b, "ds.b");
            h = tape.layer_norm(h, g, b, 1e-6);
            h = tape.conv2d(h, w, bias, 1, 2, 0);
        }
    }

    h = tape.global_avg_pool(h);
    NodeId hg = push(head_ln_gamma_, "head.ln.gamma");
    NodeId hb = push(head_ln_beta_, "head.ln.beta");
    h = tape.layer_norm(h, hg, hb, 1e-6);
    NodeId hw = push(head_w_, "head.w");
    NodeId hbias = push(head_b_, "head.b");
    return tape.linear(h, hw, hbias);
}

Tensor Network::forward(const Tensor& batch) {
    Tape tape;
    NodeId in = tape.leaf(batch, "input");
    NodeId logits = build_tape(tape, in);
    return tape.value(logits);
}

}  // namespace quadranet
