#include "quadranet/autograd.hpp"

#include <cmath>
#include <limits>

namespace quadranet {

namespace {

// token-major window gather/scatter helpers for window attention.
// windows are (H/M)*(W/M) per sample; tokens scan each window row-major.
struct WindowGeom {
    int n, c, h, w, m, wins_h, wins_w, tokens;
    int wins() const { return wins_h * wins_w; }
};

WindowGeom window_geom(const Shape& xs, int m) {
    WindowGeom g{};
    g.n = xs[0];
    g.c = xs[1];
    g.h = xs[2];
    g.w = xs[3];
    g.m = m;
    if (m < 1 || g.h % m != 0 || g.w % m != 0)
        fail("window_attention: H,W " + std::to_string(g.h) + "x" + std::to_string(g.w) +
             " must be divisible by window " + std::to_string(m));
    g.wins_h = g.h / m;
    g.wins_w = g.w / m;
    g.tokens = m * m;
    return g;
}

// X_win(t, c) for window (wh, ww) of sample n
double token(const Tensor& x, const WindowGeom& g, int n, int wh, int ww, int t, int c) {
    int th = t / g.m, tw = t % g.m;
    return x.at4(n, c, wh * g.m + th, ww * g.m + tw);
}

double& token_ref(Tensor& x, const WindowGeom& g, int n, int wh, int ww, int t, int c) {
    int th = t / g.m, tw = t % g.m;
    return x.at4(n, c, wh * g.m + th, ww * g.m + tw);
}

}  // namespace

Node& Tape::fresh(OpKind kind, std::vector<NodeId> inputs) {
    for (NodeId in : inputs) {
        check_id(in);
        // DAG by construction: inputs always precede the new node
        if (in >= static_cast<NodeId>(nodes_.size())) fail("tape: input id out of range");
    }
    Node node;
    node.id = static_cast<NodeId>(nodes_.size());
    node.kind = kind;
    node.inputs = std::move(inputs);
    nodes_.push_back(std::move(node));
    values_.emplace_back();
    grads_.emplace_back();
    return nodes_.back();
}

void Tape::check_id(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
        fail("tape: node id " + std::to_string(id) + " out of range");
}

const Tensor& Tape::value(NodeId id) const {
    check_id(id);
    return values_[static_cast<std::size_t>(id)];
}

bool Tape::has_grad(NodeId id) const {
    check_id(id);
    return !grads_[static_cast<std::size_t>(id)].empty();
}

const Tensor& Tape::grad(NodeId id) const {
    check_id(id);
    if (grads_[static_cast<std::size_t>(id)].empty())
        fail("tape: node " + std::to_string(id) + " has no gradient (run backward first)");
    return grads_[static_cast<std::size_t>(id)];
}

NodeId Tape::leaf(Tensor value, std::string name) {
    Node& node = fresh(OpKind::Leaf, {});
    node.out_shape = value.shape();
    node.name = std::move(name);
    values_[static_cast<std::size_t>(node.id)] = std::move(value);
    return node.id;
}

NodeId Tape::conv2d(NodeId x, NodeId w, NodeId bias, int groups, int stride, int padding) {
    std::vector<NodeId> ins{x, w};
    if (bias >= 0) ins.push_back(bias);
    Node& node = fresh(OpKind::Conv2d, std::move(ins));
    node.groups = groups;
    node.stride = stride;
    node.padding = padding;
    Tensor out = conv2d_raw(value(x), value(w), bias >= 0 ? &value(bias) : nullptr, groups, stride, padding);
    node.out_shape = out.shape();
    node.states.push_back({"conv2d.out", out.size(), true});
    values_[static_cast<std::size_t>(node.id)] = std::move(out);
    return node.id;
}

NodeId Tape::quad_conv(NodeId x, NodeId wa, NodeId wb, NodeId wc, NodeId bias, int groups, int stride,
                       int padding) {
    std::vector<NodeId> ins{x, wa, wb, wc};
    if (bias >= 0) ins.push_back(bias);
    Node& node = fresh(OpKind::QuadConv, std::move(ins));
    node.groups = groups;
    node.stride = stride;
    node.padding = padding;

    const Tensor& xv = value(x);
    Tensor fa = conv2d_raw(xv, value(wa), nullptr, groups, stride, padding);
    Tensor fb = conv2d_raw(xv, value(wb), nullptr, groups, stride, padding);
    Tensor prod = quadranet::hadamard(fa, fb);
    Tensor fc = conv2d_raw(xv, value(wc), bias >= 0 ? &value(bias) : nullptr, groups, stride, padding);
    Tensor out = quadranet::add(prod, fc);

    std::size_t e = out.size();
    node.states.push_back({"quadconv.fa", e, true});
    node.states.push_back({"quadconv.fb", e, true});
    node.states.push_back({"quadconv.product", e, false});
    node.states.push_back({"quadconv.fc", e, false});
    node.saved.push_back(std::move(fa));
    node.saved.push_back(std::move(fb));
    node.released.push_back(std::move(prod));
    node.released.push_back(std::move(fc));

    node.out_shape = out.shape();
    values_[static_cast<std::size_t>(node.id)] = std::move(out);
    return node.id;
}

NodeId Tape::layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps) {
    Node& node = fresh(OpKind::LayerNorm, {x, gamma, beta});
    node.eps = eps;
    LayerNormCache cache;
    Tensor out = layer_norm_fwd(value(x), value(gamma), value(beta), eps, &cache);
    node.saved.push_back(std::move(cache.xhat));
    node.saved.push_back(std::move(cache.inv_std));
    node.out_shape = out.shape();
    node.states.push_back({"layer_norm.out", out.size(), true});
    values_[static_cast<std::size_t>(node.id)] = std::move(out);
    return node.id;
}

NodeId Tape::gelu(NodeId x) {
    Node& node = fresh(OpKind::Gelu, {x});
    Tensor out = quadranet::gelu(value(x));
    node.out_shape = out.shape();
    node.states.push_back({"gelu.out", out.size(), true});
    values_[static_cast<std::size_t>(node.id)] = std::move(out);
    return node.id;
}

NodeId Tape::hadamard(NodeId a, NodeId b) {
    Node& node = fresh(OpKind::Hadamard, {a, b});
    Tensor out = quadranet::hadamard(value(a), value(b));
    node.out_shape = out.shape();
    node.states.push_back({"hadamard.out", out.size(), true});
    values_[static_cast<std::size_t>(node.id)] = std::move(out);
    return node.id;
}

NodeId Tape::add(NodeId a, NodeId b) {
    Node& node = fresh(OpKind::Add, {a, b});
    Tensor out = quadranet::add(value(a), value(b));
    node.out_shape = out.shape();
    node.states.push_back({"add.out", out.size(), true});
    values_[static_cast<std::size_t>(node.id)] = std::move(out);
    return node.id;
}

NodeId Tape::scale(NodeId x, double alpha) {
    Node& node = fresh(OpKind::Scale, {x});
    node.alpha = alpha;
    Tensor out = quadranet::scale(value(x), alpha);
    node.out_shape = out.shape();
    node.states.push_back({"scale.out", out.size(), true});
    values_[static_cast<std::size_t>(node.id)] = std::move(out);
    return node.id;
}

NodeId Tape::sum(NodeId x) {
    Node& node = fresh(OpKind::Sum, {x});
    Tensor out(Shape{1});
    out[0] = quadranet::sum(value(x));
    node.out_shape = out.shape();
    node.states.push_back({"sum.out", 1, true});
    values_[static_cast<std::size_t>(node.id)] = std::move(out);
    return node.id;
}

NodeId Tape::window_attention(NodeId x, NodeId wq, NodeId wk, NodeId wv, NodeId wo, int window) {
    Node& node = fresh(OpKind::WindowAttention, {x, wq, wk, wv, wo});
    node.window = window;
    const Tensor& xv = value(x);
    if (xv.rank() != 4) fail("window_attention: input must be rank-4 NCHW");
    WindowGeom g = window_geom(xv.shape(), window);
    const Tensor& q_w = value(wq);
    const Tensor& k_w = value(wk);
    const Tensor& v_w = value(wv);
    const Tensor& o_w = value(wo);
    for (const Tensor* w : {&q_w, &k_w, &v_w, &o_w})
        if (w->rank() != 2 || w->dim(0) != g.c || w->dim(1) != g.c)
            fail("window_attention: projections must be (" + std::to_string(g.c) + "," + std::to_string(g.c) +
                 "), got " + shape_str(w->shape()));

    int t_count = g.tokens;
    Tensor q_all(Shape{g.n, g.wins(), t_count, g.c});
    Tensor k_all(q_all.shape()), v_all(q_all.shape()), y_all(q_all.shape());
    Tensor a_all(Shape{g.n, g.wins(), t_count, t_count});
    Tensor out(xv.shape());
    double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(g.c));

    std::vector<double> xt(static_cast<std::size_t>(t_count) * g.c);
    std::vector<double> row(static_cast<std::size_t>(t_count));
    for (int n = 0; n < g.n; ++n) {
        for (int wh = 0; wh < g.wins_h; ++wh) {
            for (int ww = 0; ww < g.wins_w; ++ww) {
                int win = wh * g.wins_w + ww;
                for (int t = 0; t < t_count; ++t)
                    for (int c = 0; c < g.c; ++c) xt[static_cast<std::size_t>(t) * g.c + c] = token(xv, g, n, wh, ww, t, c);
                // projections: q_t = Wq x_t
                for (int t = 0; t < t_count; ++t) {
                    const double* xrow = xt.data() + static_cast<std::size_t>(t) * g.c;
                    for (int c = 0; c < g.c; ++c) {
                        double aq = 0, ak = 0, av = 0;
                        const double* qr = q_w.data() + static_cast<std::size_t>(c) * g.c;
                        const double* kr = k_w.data() + static_cast<std::size_t>(c) * g.c;
                        const double* vr = v_w.data() + static_cast<std::size_t>(c) * g.c;
                        for (int u = 0; u < g.c; ++u) {
                            aq += qr[u] * xrow[u];
                            ak += kr[u] * xrow[u];
                            av += vr[u] * xrow[u];
                        }
                        q_all.at4(n, win, t, c) = aq;
                        k_all.at4(n, win, t, c) = ak;
                        v_all.at4(n, win, t, c) = av;
                    }
                }
                // scores + softmax rows
                for (int t = 0; t < t_count; ++t) {
                    double mx = -std::numeric_limits<double>::infinity();
                    for (int u = 0; u < t_count; ++u) {
                        double s = 0.0;
                        for (int c = 0; c < g.c; ++c) s += q_all.at4(n, win, t, c) * k_all.at4(n, win, u, c);
                        row[static_cast<std::size_t>(u)] = s * inv_sqrt_c;
                        mx = std::max(mx, row[static_cast<std::size_t>(u)]);
                    }
                    double denom = 0.0;
                    for (int u = 0; u < t_count; ++u) {
                        double e = std::exp(row[static_cast<std::size_t>(u)] - mx);
                        a_all.at4(n, win, t, u) = e;
                        denom += e;
                    }
                    for (int u = 0; u < t_count; ++u) a_all.at4(n, win, t, u) /= denom;
                }
                // weighted values and output projection
                for (int t = 0; t < t_count; ++t) {
                    for (int c = 0; c < g.c; ++c) {
                        double acc = 0.0;
                        for (int u = 0; u < t_count; ++u) acc += a_all.at4(n, win, t, u) * v_all.at4(n, win, u, c);
                        y_all.at4(n, win, t, c) = acc;
                    }
                    for (int c = 0; c < g.c; ++c) {
                        double acc = 0.0;
                        const double* orow = o_w.data() + static_cast<std::size_t>(c) * g.c;
                        for (int u = 0; u < g.c; ++u) acc += orow[u] * y_all.at4(n, win, t, u);
                        token_ref(out, g, n, wh, ww, t, c) = acc;
                    }
                }
            }
        }
    }

    // the paper's windowed accounting: 3HWC for Q/K/V plus M^2 * HWC for the
    // per-position weighted-value products
    std::size_t e = xv.size();
    node.states.push_back({"window_attention.qkv", 3 * e, true});
    node.states.push_back({"window_attention.weighted", static_cast<std::size_t>(t_count) * e, true});
    node.saved.push_back(std::move(q_all));
    node.saved.push_back(std::move(k_all));
    node.saved.push_back(std::move(v_all));
    node.saved.push_back(std::move(a_all));
    node.saved.push_back(std::move(y_all));
    node.out_shape = out.shape();
    values_[static_cast<std::size_t>(node.id)] = std::move(out);
    return node.id;
}

NodeId Tape::global_avg_pool(NodeId x) {
    Node& node = fresh(OpKind::GlobalAvgPool, {x});
    const Tensor& xv = value(x);
    if (xv.rank() != 4) fail("global_avg_pool: input must be rank-4 NCHW");
    int n = xv.dim(0), c = xv.dim(1);
    std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    Tensor out(Shape{n, c, 1, 1});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const double* p = xv.data() + xv.offset4(ni, ci, 0, 0);
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            out.at4(ni, ci, 0, 0) = acc / static_cast<double>(plane);
        }
    node.out_shape = out.shape();
    node.states.push_back({"global_avg_pool.out", out.size(), true});
    values_[static_cast<std::size_t>(node.id)] = std::move(out);
    return node.id;
}

NodeId Tape::linear(NodeId x, NodeId w, NodeId bias) {
    std::vector<NodeId> ins{x, w};
    if (bias >= 0) ins.push_back(bias);
    Node& node = fresh(OpKind::Linear, std::move(ins));
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    if (wv.rank() != 2) fail("linear: weight must be rank-2 (out, in)");
    int in_features = wv.dim(1), out_features = wv.dim(0);
    std::size_t rows = xv.size() / static_cast<std::size_t>(in_features);
    if (rows * static_cast<std::size_t>(in_features) != xv.size())
        fail("linear: input size " + std::to_string(xv.size()) + " not divisible by in_features " +
             std::to_string(in_features));
    Tensor out(Shape{static_cast<int>(rows), out_features});
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xrow = xv.data() + r * in_features;
        for (int o = 0; o < out_features; ++o) {
            const double* wrow = wv.data() + static_cast<std::size_t>(o) * in_features;
            double acc = bias >= 0 ? value(bias)[static_cast<std::size_t>(o)] : 0.0;
            for (int i = 0; i < in_features; ++i) acc += wrow[i] * xrow[i];
            out.at2(static_cast<int>(r), o) = acc;
        }
    }
    node.out_shape = out.shape();
    node.states.push_back({"linear.out", out.size(), true});
    values_[static_cast<std::size_t>(node.id)] = std::move(out);
    return node.id;
}

NodeId Tape::softmax_cross_entropy(NodeId logits, std::vector<int> labels) {
    Node& node = fresh(OpKind::SoftmaxCrossEntropy, {logits});
    const Tensor& lv = value(logits);
    if (lv.rank() != 2) fail("softmax_cross_entropy: logits must be rank-2 (N, classes)");
    int n = lv.dim(0), k = lv.dim(1);
    if (static_cast<int>(labels.size()) != n)
        fail("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
             " rows");
    for (int lbl : labels)
        if (lbl < 0 || lbl >= k) fail("softmax_cross_entropy: label out of range");
    Tensor probs = softmax_lastdim(lv);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) loss -= std::log(std::max(probs.at2(i, labels[static_cast<std::size_t>(i)]), 1e-300));
    loss /= n;
    node.labels = std::move(labels);
    node.states.push_back({"softmax_ce.probs", probs.size(), true});
    node.saved.push_back(std::move(probs));
    Tensor out(Shape{1});
    out[0] = loss;
    node.out_shape = out.shape();
    values_[static_cast<std::size_t>(node.id)] = std::move(out);
    return node.id;
}

void Tape::accumulate(NodeId id, const Tensor& g) {
    Tensor& slot = grads_[static_cast<std::size_t>(id)];
    if (slot.empty()) {
        slot = g;
    } else {
        for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
    }
}

void Tape::backward(NodeId loss) {
    check_id(loss);
    if (shape_elements(nodes_[static_cast<std::size_t>(loss)].out_shape) != 1)
        fail("backward: loss node must be scalar, got shape " +
             shape_str(nodes_[static_cast<std::size_t>(loss)].out_shape));
    for (auto& g : grads_) g = Tensor();
    Tensor seed(nodes_[static_cast<std::size_t>(loss)].out_shape);
    seed[0] = 1.0;
    grads_[static_cast<std::size_t>(loss)] = std::move(seed);
    for (NodeId id = loss; id >= 0; --id) {
        const Node& node = nodes_[static_cast<std::size_t>(id)];
        if (node.kind == OpKind::Leaf) continue;
        if (grads_[static_cast<std::size_t>(id)].empty()) continue;
        backward_node(node);
    }
}

void Tape::backward_node(const Node& node) {
    const Tensor& g = grads_[static_cast<std::size_t>(node.id)];
    switch (node.kind) {
        case OpKind::Leaf:
            return;
        case OpKind::Conv2d: {
            NodeId x = node.inputs[0], w = node.inputs[1];
            accumulate(x, conv2d_input_grad(g, value(w), value(x).shape(), node.groups, node.stride,
                                            node.padding));
            accumulate(w, conv2d_weight_grad(value(x), g, value(w).shape(), node.groups, node.stride,
                                             node.padding));
            if (node.inputs.size() > 2) accumulate(node.inputs[2], conv2d_bias_grad(g));
            return;
        }
        case OpKind::QuadConv: {
            NodeId x = node.inputs[0], wa = node.inputs[1], wb = node.inputs[2], wc = node.inputs[3];
            const Tensor& xv = value(x);
            const Tensor& fa = node.saved[0];
            const Tensor& fb = node.saved[1];
            // Eq-style release rule: only fa/fb are read, never product/fc.
            Tensor g_fa = quadranet::hadamard(g, fb);
            Tensor g_fb = quadranet::hadamard(g, fa);
            accumulate(wa, conv2d_weight_grad(xv, g_fa, value(wa).shape(), node.groups, node.stride,
                                              node.padding));
            accumulate(wb, conv2d_weight_grad(xv, g_fb, value(wb).shape(), node.groups, node.stride,
                                              node.padding));
            accumulate(wc, conv2d_weight_grad(xv, g, value(wc).shape(), node.groups, node.stride, node.padding));
            if (node.inputs.size() > 4) accumulate(node.inputs[4], conv2d_bias_grad(g));
            Tensor gx = conv2d_input_grad(g_fa, value(wa), xv.shape(), node.groups, node.stride, node.padding);
            Tensor gx_b = conv2d_input_grad(g_fb, value(wb), xv.shape(), node.groups, node.stride, node.padding);
            Tensor gx_c = conv2d_input_grad(g, value(wc), xv.shape(), node.groups, node.stride, node.padding);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gx_b[i] + gx_c[i];
            accumulate(x, gx);
            return;
        }
        case OpKind::LayerNorm: {
            LayerNormCache cache;
            cache.xhat = node.saved[0];
            cache.inv_std = node.saved[1];
            LayerNormGrads grads = layer_norm_backward(g, cache, value(node.inputs[1]));
            accumulate(node.inputs[0], grads.gx);
            accumulate(node.inputs[1], grads.ggamma);
            accumulate(node.inputs[2], grads.gbeta);
            return;
        }
        case OpKind::Gelu:
            accumulate(node.inputs[0], gelu_input_grad(value(node.inputs[0]), g));
            return;
        case OpKind::Hadamard:
            accumulate(node.inputs[0], quadranet::hadamard(g, value(node.inputs[1])));
            accumulate(node.inputs[1], quadranet::hadamard(g, value(node.inputs[0])));
            return;
        case OpKind::Add:
            accumulate(node.inputs[0], g);
            accumulate(node.inputs[1], g);
            return;
        case OpKind::Scale:
            accumulate(node.inputs[0], quadranet::scale(g, node.alpha));
            return;
        case OpKind::Sum: {
            accumulate(node.inputs[0], Tensor::full(value(node.inputs[0]).shape(), g[0]));
            return;
        }
        case OpKind::WindowAttention: {
            const Tensor& xv = value(node.inputs[0]);
            WindowGeom geom = window_geom(xv.shape(), node.window);
            const Tensor& q_w = value(node.inputs[1]);
            const Tensor& k_w = value(node.inputs[2]);
            const Tensor& v_w = value(node.inputs[3]);
            const Tensor& o_w = value(node.inputs[4]);
            const Tensor& q_all = node.saved[0];
            const Tensor& k_all = node.saved[1];
            const Tensor& v_all = node.saved[2];
            const Tensor& a_all = node.saved[3];
            const Tensor& y_all = node.saved[4];
            int tc = geom.tokens, cdim = geom.c;
            double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(cdim));

            Tensor gx(xv.shape());
            Tensor g_qw(q_w.shape()), g_kw(k_w.shape()), g_vw(v_w.shape()), g_ow(o_w.shape());
            std::vector<double> gy(static_cast<std::size_t>(tc) * cdim), gq(gy.size()), gk(gy.size()),
                gv(gy.size());
            std::vector<double> ga(static_cast<std::size_t>(tc) * tc), gs(ga.size());
            std::vector<double> xt(gy.size());
            for (int n = 0; n < geom.n; ++n) {
                for (int wh = 0; wh < geom.wins_h; ++wh) {
                    for (int ww = 0; ww < geom.wins_w; ++ww) {
                        int win = wh * geom.wins_w + ww;
                        for (int t = 0; t < tc; ++t)
                            for (int c = 0; c < cdim; ++c)
                                xt[static_cast<std::size_t>(t) * cdim + c] = token(xv, geom, n, wh, ww, t, c);
                        // out = Y Wo^T: gY = gOut Wo, gWo += gOut^T Y
                        for (int t = 0; t < tc; ++t) {
                            double* gyrow = gy.data() + static_cast<std::size_t>(t) * cdim;
                            for (int u = 0; u < cdim; ++u) gyrow[u] = 0.0;
                            for (int c = 0; c < cdim; ++c) {
                                double go = token(g, geom, n, wh, ww, t, c);
                                const double* orow = o_w.data() + static_cast<std::size_t>(c) * cdim;
                                double* grow = g_ow.data() + static_cast<std::size_t>(c) * cdim;
                                for (int u = 0; u < cdim; ++u) grow[u] += go * y_all.at4(n, win, t, u);
                                for (int u = 0; u < cdim; ++u) gyrow[u] += go * orow[u];
                            }
                        }
                        // Y = A V: gA = gY V^T, gV = A^T gY
                        for (int t = 0; t < tc; ++t) {
                            for (int u = 0; u < tc; ++u) {
                                double acc = 0.0;
                                for (int c = 0; c < cdim; ++c)
                                    acc += gy[static_cast<std::size_t>(t) * cdim + c] * v_all.at4(n, win, u, c);
                                ga[static_cast<std::size_t>(t) * tc + u] = acc;
                            }
                        }
                        for (int u = 0; u < tc; ++u)
                            for (int c = 0; c < cdim; ++c) {
                                double acc = 0.0;
                                for (int t = 0; t < tc; ++t)
                                    acc += a_all.at4(n, win, t, u) * gy[static_cast<std::size_t>(t) * cdim + c];
                                gv[static_cast<std::size_t>(u) * cdim + c] = acc;
                            }
                        // softmax rows backward
                        for (int t = 0; t < tc; ++t) {
                            double dotv = 0.0;
                            for (int u = 0; u < tc; ++u)
                                dotv += ga[static_cast<std::size_t>(t) * tc + u] * a_all.at4(n, win, t, u);
                            for (int u = 0; u < tc; ++u)
                                gs[static_cast<std::size_t>(t) * tc + u] =
                                    a_all.at4(n, win, t, u) * (ga[static_cast<std::size_t>(t) * tc + u] - dotv);
                        }
                        // S = QK^T/sqrt(C)
                        for (int t = 0; t < tc; ++t)
                            for (int c = 0; c < cdim; ++c) {
                                double acc = 0.0;
                                for (int u = 0; u < tc; ++u)
                                    acc += gs[static_cast<std::size_t>(t) * tc + u] * k_all.at4(n, win, u, c);
                                gq[static_cast<std::size_t>(t) * cdim + c] = acc * inv_sqrt_c;
                            }
                        for (int u = 0; u < tc; ++u)
                            for (int c = 0; c < cdim; ++c) {
                                double acc = 0.0;
                                for (int t = 0; t < tc; ++t)
                                    acc += gs[static_cast<std::size_t>(t) * tc + u] * q_all.at4(n, win, t, c);
                                gk[static_cast<std::size_t>(u) * cdim + c] = acc * inv_sqrt_c;
                            }
                        // projections: P = X W^T per token => gX += gP W, gW += gP^T X
                        for (int t = 0; t < tc; ++t) {
                            const double* xrow = xt.data() + static_cast<std::size_t>(t) * cdim;
                            for (int c = 0; c < cdim; ++c) {
                                double gqv = gq[static_cast<std::size_t>(t) * cdim + c];
                                double gkv = gk[static_cast<std::size_t>(t) * cdim + c];
                                double gvv = gv[static_cast<std::size_t>(t) * cdim + c];
                                double* qrow = g_qw.data() + static_cast<std::size_t>(c) * cdim;
                                double* krow = g_kw.data() + static_cast<std::size_t>(c) * cdim;
                                double* vrow = g_vw.data() + static_cast<std::size_t>(c) * cdim;
                                const double* qw = q_w.data() + static_cast<std::size_t>(c) * cdim;
                                const double* kw = k_w.data() + static_cast<std::size_t>(c) * cdim;
                                const double* vw = v_w.data() + static_cast<std::size_t>(c) * cdim;
                                for (int u = 0; u < cdim; ++u) {
                                    qrow[u] += gqv * xrow[u];
                                    krow[u] += gkv * xrow[u];
                                    vrow[u] += gvv * xrow[u];
                                    token_ref(gx, geom, n, wh, ww, t, u) += gqv * qw[u] + gkv * kw[u] + gvv * vw[u];
                                }
                            }
                        }
                    }
                }
            }
            accumulate(node.inputs[0], gx);
            accumulate(node.inputs[1], g_qw);
            accumulate(node.inputs[2], g_kw);
            accumulate(node.inputs[3], g_vw);
            accumulate(node.inputs[4], g_ow);
            return;
        }
        case OpKind::GlobalAvgPool: {
            const Tensor& xv = value(node.inputs[0]);
            std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
            Tensor gx(xv.shape());
            for (int n = 0; n < xv.dim(0); ++n)
                for (int c = 0; c < xv.dim(1); ++c) {
                    double gv = g.at4(n, c, 0, 0) / static_cast<double>(plane);
                    double* p = gx.data() + gx.offset4(n, c, 0, 0);
                    for (std::size_t i = 0; i < plane; ++i) p[i] = gv;
                }
            accumulate(node.inputs[0], gx);
            return;
        }
        case OpKind::Linear: {
            const Tensor& xv = value(node.inputs[0]);
            const Tensor& wv = value(node.inputs[1]);
            int in_features = wv.dim(1), out_features = wv.dim(0);
            std::size_t rows = xv.size() / static_cast<std::size_t>(in_features);
            Tensor gx(xv.shape());
            Tensor gw(wv.shape());
            for (std::size_t r = 0; r < rows; ++r) {
                const double* xrow = xv.data() + r * in_features;
                double* gxrow = gx.data() + r * in_features;
                for (int o = 0; o < out_features; ++o) {
                    double go = g.at2(static_cast<int>(r), o);
                    const double* wrow = wv.data() + static_cast<std::size_t>(o) * in_features;
                    double* gwrow = gw.data() + static_cast<std::size_t>(o) * in_features;
                    for (int i = 0; i < in_features; ++i) {
                        gxrow[i] += go * wrow[i];
                        gwrow[i] += go * xrow[i];
                    }
                }
            }
            accumulate(node.inputs[0], gx);
            accumulate(node.inputs[1], gw);
            if (node.inputs.size() > 2) {
                Tensor gb(Shape{out_features});
                for (std::size_t r = 0; r < rows; ++r)
                    for (int o = 0; o < out_features; ++o) gb[static_cast<std::size_t>(o)] += g.at2(static_cast<int>(r), o);
                accumulate(node.inputs[2], gb);
            }
            return;
        }
        case OpKind::SoftmaxCrossEntropy: {
            const Tensor& probs = node.saved[0];
            int n = probs.dim(0), k = probs.dim(1);
            Tensor gl(probs.shape());
            double go = g[0] / static_cast<double>(n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < k; ++j)
                    gl.at2(i, j) = go * (probs.at2(i, j) - (node.labels[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0));
            accumulate(node.inputs[0], gl);
            return;
        }
    }
}

std::map<std::string, std::size_t> Tape::state_report(Phase phase) const {
    std::map<std::string, std::size_t> report;
    for (const Node& node : nodes_)
        for (const StateRecord& s : node.states) {
            if (phase == Phase::Backward && !s.retained) continue;
            report[s.label] += s.elements;
        }
    return report;
}

std::size_t Tape::state_total(Phase phase) const {
    std::size_t total = 0;
    for (const Node& node : nodes_)
        for (const StateRecord& s : node.states)
            if (phase == Phase::Forward || s.retained) total += s.elements;
    return total;
}

void Tape::poison_released(NodeId id) {
    check_id(id);
    for (Tensor& t : nodes_[static_cast<std::size_t>(id)].released)
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::numeric_limits<double>::quiet_NaN();
}

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    if (h <= 0.0) fail("finite_difference_grad: h must be > 0");
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double orig = probe[i];
        probe[i] = orig + h;
        double fp = f(probe);
        probe[i] = orig - h;
        double fm = f(probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

}  // namespace quadranet
