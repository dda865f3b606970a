#include "quadranet/blocks.hpp"

#include <algorithm>
#include <cmath>

namespace quadranet {

namespace {

constexpr double kQuadInitGain = 0.3;  // wa/wb start small so blocks open near-linear

Tensor init_conv_weight(Shape shape, Rng& rng, double gain) {
    Tensor w(std::move(shape));
    double fan_in = static_cast<double>(w.dim(1)) * w.dim(2) * w.dim(3);
    double bound = gain / std::sqrt(fan_in);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
    return w;
}

Tensor init_matrix(int rows, int cols, Rng& rng, double gain) {
    Tensor w(Shape{rows, cols});
    double bound = gain / std::sqrt(static_cast<double>(cols));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
    return w;
}

// channel mixer: x + pw2(gelu(pw1(ln(x)))), optionally with quadratic 1x1 convs
struct MixerIds {
    NodeId ln_gamma, ln_beta, pw1_w, pw1_wa, pw1_wb, pw1_b, pw2_w, pw2_wa, pw2_wb, pw2_b;
};

NodeId channel_mixer(Tape& tape, NodeId x, const MixerIds& ids, int quad_mixer) {
    NodeId h = tape.layer_norm(x, ids.ln_gamma, ids.ln_beta, 1e-6);
    if (quad_mixer >= 1)
        h = tape.quad_conv(h, ids.pw1_wa, ids.pw1_wb, ids.pw1_w, ids.pw1_b, 1, 1, 0);
    else
        h = tape.conv2d(h, ids.pw1_w, ids.pw1_b, 1, 1, 0);
    h = tape.gelu(h);
    if (quad_mixer >= 2)
        h = tape.quad_conv(h, ids.pw2_wa, ids.pw2_wb, ids.pw2_w, ids.pw2_b, 1, 1, 0);
    else
        h = tape.conv2d(h, ids.pw2_w, ids.pw2_b, 1, 1, 0);
    return tape.add(x, h);
}

}  // namespace

std::string block_choice_str(const BlockChoice& c) {
    switch (c.kind) {
        case BlockKind::Quadra:
            return "Q" + std::to_string(c.kernel) + "x" + std::to_string(c.expansion);
        case BlockKind::Conv:
            return "C" + std::to_string(c.kernel) + "x" + std::to_string(c.expansion);
        case BlockKind::Skip:
            return "SKIPx" + std::to_string(c.expansion);
        case BlockKind::Attention:
            return "ATTN" + std::to_string(c.window) + "x" + std::to_string(c.expansion);
        case BlockKind::Identity:
            return "ID";
        case BlockKind::Recursive:
            return "REC" + std::to_string(c.order) + "k" + std::to_string(c.kernel) + "x" +
                   std::to_string(c.expansion);
    }
    fail("block_choice_str: bad kind");
}

BlockChoice parse_block_choice(const std::string& text) {
    BlockChoice c;
    auto parse_kx = [&](const std::string& body, int& a, int& b) {
        auto xpos = body.find('x');
        if (xpos == std::string::npos) fail("bad block string '" + text + "' (expected <k>x<R>)");
        a = std::stoi(body.substr(0, xpos));
        b = std::stoi(body.substr(xpos + 1));
    };
    if (text == "ID") {
        c.kind = BlockKind::Identity;
    } else if (text.rfind("SKIPx", 0) == 0) {
        c.kind = BlockKind::Skip;
        c.expansion = std::stoi(text.substr(5));
    } else if (text.rfind("ATTN", 0) == 0) {
        c.kind = BlockKind::Attention;
        parse_kx(text.substr(4), c.window, c.expansion);
    } else if (text.rfind("REC", 0) == 0) {
        c.kind = BlockKind::Recursive;
        auto kpos = text.find('k');
        if (kpos == std::string::npos) fail("bad block string '" + text + "'");
        c.order = std::stoi(text.substr(3, kpos - 3));
        parse_kx(text.substr(kpos + 1), c.kernel, c.expansion);
    } else if (text.size() > 1 && (text[0] == 'Q' || text[0] == 'C')) {
        c.kind = text[0] == 'Q' ? BlockKind::Quadra : BlockKind::Conv;
        parse_kx(text.substr(1), c.kernel, c.expansion);
    } else {
        fail("unknown block string '" + text + "'");
    }
    return c;
}

// ---- parameter structs ----

QuadraBlockParams QuadraBlockParams::init(int channels, int kernel, int expansion, int quad_mixer, Rng& rng) {
    if (kernel % 2 != 1) fail("quadra block: kernel must be odd, got " + std::to_string(kernel));
    if (expansion < 1) fail("quadra block: expansion must be >= 1");
    QuadraBlockParams p;
    p.channels = channels;
    p.kernel = kernel;
    p.expansion = expansion;
    p.quad_mixer = quad_mixer;
    int rc = channels * expansion;
    p.ln1_gamma = Tensor::ones(Shape{channels});
    p.ln1_beta = Tensor::zeros(Shape{channels});
    p.wa = init_conv_weight(Shape{channels, 1, kernel, kernel}, rng, kQuadInitGain);
    p.wb = init_conv_weight(Shape{channels, 1, kernel, kernel}, rng, kQuadInitGain);
    p.wc = init_conv_weight(Shape{channels, 1, kernel, kernel}, rng, 1.0);
    p.qbias = Tensor::zeros(Shape{channels});
    p.ln2_gamma = Tensor::ones(Shape{channels});
    p.ln2_beta = Tensor::zeros(Shape{channels});
    p.pw1_w = init_conv_weight(Shape{rc, channels, 1, 1}, rng, 1.0);
    p.pw1_b = Tensor::zeros(Shape{rc});
    p.pw2_w = init_conv_weight(Shape{channels, rc, 1, 1}, rng, 1.0);
    p.pw2_b = Tensor::zeros(Shape{channels});
    if (quad_mixer >= 1) {
        p.pw1_wa = init_conv_weight(Shape{rc, channels, 1, 1}, rng, kQuadInitGain);
        p.pw1_wb = init_conv_weight(Shape{rc, channels, 1, 1}, rng, kQuadInitGain);
    }
    if (quad_mixer >= 2) {
        p.pw2_wa = init_conv_weight(Shape{channels, rc, 1, 1}, rng, kQuadInitGain);
        p.pw2_wb = init_conv_weight(Shape{channels, rc, 1, 1}, rng, kQuadInitGain);
    }
    return p;
}

std::vector<ParamRef> QuadraBlockParams::parameters() {
    std::vector<ParamRef> refs{
        {"ln1.gamma", &ln1_gamma}, {"ln1.beta", &ln1_beta}, {"quad.wa", &wa},    {"quad.wb", &wb},
        {"quad.wc", &wc},          {"quad.bias", &qbias},   {"ln2.gamma", &ln2_gamma},
        {"ln2.beta", &ln2_beta},   {"pw1.w", &pw1_w},       {"pw1.b", &pw1_b},
    };
    if (quad_mixer >= 1) {
        refs.push_back({"pw1.wa", &pw1_wa});
        refs.push_back({"pw1.wb", &pw1_wb});
    }
    refs.push_back({"pw2.w", &pw2_w});
    refs.push_back({"pw2.b", &pw2_b});
    if (quad_mixer >= 2) {
        refs.push_back({"pw2.wa", &pw2_wa});
        refs.push_back({"pw2.wb", &pw2_wb});
    }
    return refs;
}

ConvBlockParams ConvBlockParams::init(int channels, int kernel, int expansion, Rng& rng) {
    if (kernel % 2 != 1) fail("conv block: kernel must be odd");
    ConvBlockParams p;
    p.channels = channels;
    p.kernel = kernel;
    p.expansion = expansion;
    int rc = channels * expansion;
    p.ln1_gamma = Tensor::ones(Shape{channels});
    p.ln1_beta = Tensor::zeros(Shape{channels});
    p.dw_w = init_conv_weight(Shape{channels, 1, kernel, kernel}, rng, 1.0);
    p.dw_b = Tensor::zeros(Shape{channels});
    p.ln2_gamma = Tensor::ones(Shape{channels});
    p.ln2_beta = Tensor::zeros(Shape{channels});
    p.pw1_w = init_conv_weight(Shape{rc, channels, 1, 1}, rng, 1.0);
    p.pw1_b = Tensor::zeros(Shape{rc});
    p.pw2_w = init_conv_weight(Shape{channels, rc, 1, 1}, rng, 1.0);
    p.pw2_b = Tensor::zeros(Shape{channels});
    return p;
}

std::vector<ParamRef> ConvBlockParams::parameters() {
    return {
        {"ln1.gamma", &ln1_gamma}, {"ln1.beta", &ln1_beta}, {"dw.w", &dw_w},   {"dw.b", &dw_b},
        {"ln2.gamma", &ln2_gamma}, {"ln2.beta", &ln2_beta}, {"pw1.w", &pw1_w}, {"pw1.b", &pw1_b},
        {"pw2.w", &pw2_w},         {"pw2.b", &pw2_b},
    };
}

SkipBlockParams SkipBlockParams::init(int channels, int expansion, Rng& rng) {
    SkipBlockParams p;
    p.channels = channels;
    p.expansion = expansion;
    int rc = channels * expansion;
    p.ln_gamma = Tensor::ones(Shape{channels});
    p.ln_beta = Tensor::zeros(Shape{channels});
    p.pw1_w = init_conv_weight(Shape{rc, channels, 1, 1}, rng, 1.0);
    p.pw1_b = Tensor::zeros(Shape{rc});
    p.pw2_w = init_conv_weight(Shape{channels, rc, 1, 1}, rng, 1.0);
    p.pw2_b = Tensor::zeros(Shape{channels});
    return p;
}

std::vector<ParamRef> SkipBlockParams::parameters() {
    return {
        {"ln.gamma", &ln_gamma}, {"ln.beta", &ln_beta}, {"pw1.w", &pw1_w}, {"pw1.b", &pw1_b},
        {"pw2.w", &pw2_w},       {"pw2.b", &pw2_b},
    };
}

AttnBlockParams AttnBlockParams::init(int channels, int window, int expansion, Rng& rng) {
    AttnBlockParams p;
    p.channels = channels;
    p.window = window;
    p.expansion = expansion;
    int rc = channels * expansion;
    p.ln1_gamma = Tensor::ones(Shape{channels});
    p.ln1_beta = Tensor::zeros(Shape{channels});
    p.wq = init_matrix(channels, channels, rng, 1.0);
    p.wk = init_matrix(channels, channels, rng, 1.0);
    p.wv = init_matrix(channels, channels, rng, 1.0);
    p.wo = init_matrix(channels, channels, rng, 1.0);
    p.ln2_gamma = Tensor::ones(Shape{channels});
    p.ln2_beta = Tensor::zeros(Shape{channels});
    p.pw1_w = init_conv_weight(Shape{rc, channels, 1, 1}, rng, 1.0);
    p.pw1_b = Tensor::zeros(Shape{rc});
    p.pw2_w = init_conv_weight(Shape{channels, rc, 1, 1}, rng, 1.0);
    p.pw2_b = Tensor::zeros(Shape{channels});
    return p;
}

std::vector<ParamRef> AttnBlockParams::parameters() {
    return {
        {"ln1.gamma", &ln1_gamma}, {"ln1.beta", &ln1_beta}, {"attn.wq", &wq},  {"attn.wk", &wk},
        {"attn.wv", &wv},          {"attn.wo", &wo},        {"ln2.gamma", &ln2_gamma},
        {"ln2.beta", &ln2_beta},   {"pw1.w", &pw1_w},       {"pw1.b", &pw1_b}, {"pw2.w", &pw2_w},
        {"pw2.b", &pw2_b},
    };
}

AnyBlock make_block(const BlockChoice& choice, int channels, Rng& rng) {
    switch (choice.kind) {
        case BlockKind::Quadra:
            return QuadraBlockParams::init(channels, choice.kernel, choice.expansion, 0, rng);
        case BlockKind::Conv:
            return ConvBlockParams::init(channels, choice.kernel, choice.expansion, rng);
        case BlockKind::Skip:
            return SkipBlockParams::init(channels, choice.expansion, rng);
        case BlockKind::Attention:
            return AttnBlockParams::init(channels, choice.window, choice.expansion, rng);
        case BlockKind::Identity:
            return IdentityBlock{};
        case BlockKind::Recursive:
            fail("recursive blocks exist only in the cost model (serialization penalty)");
    }
    fail("make_block: bad kind");
}

std::vector<ParamRef> block_parameters(AnyBlock& block) {
    return std::visit([](auto& b) { return b.parameters(); }, block);
}

std::size_t block_param_count(const AnyBlock& block) {
    std::size_t count = 0;
    for (const ParamRef& ref : block_parameters(const_cast<AnyBlock&>(block))) count += ref.tensor->size();
    return count;
}

BlockChoice block_choice_of(const AnyBlock& block) {
    BlockChoice c;
    if (std::holds_alternative<IdentityBlock>(block)) {
        c.kind = BlockKind::Identity;
    } else if (const auto* q = std::get_if<QuadraBlockParams>(&block)) {
        c.kind = BlockKind::Quadra;
        c.kernel = q->kernel;
        c.expansion = q->expansion;
    } else if (const auto* cb = std::get_if<ConvBlockParams>(&block)) {
        c.kind = BlockKind::Conv;
        c.kernel = cb->kernel;
        c.expansion = cb->expansion;
    } else if (const auto* s = std::get_if<SkipBlockParams>(&block)) {
        c.kind = BlockKind::Skip;
        c.expansion = s->expansion;
    } else if (const auto* a = std::get_if<AttnBlockParams>(&block)) {
        c.kind = BlockKind::Attention;
        c.window = a->window;
        c.expansion = a->expansion;
    }
    return c;
}

// ---- tape builders ----

namespace {

struct LeafPusher {
    Tape& tape;
    std::vector<NodeId>* out;
    NodeId push(Tensor& t, const std::string& name) {
        NodeId id = tape.leaf(t, name);
        if (out) out->push_back(id);
        return id;
    }
};

NodeId build_quadra(Tape& tape, QuadraBlockParams& p, NodeId x, std::vector<NodeId>* param_ids) {
    LeafPusher lp{tape, param_ids};
    NodeId ln1_g = lp.push(p.ln1_gamma, "ln1.gamma");
    NodeId ln1_b = lp.push(p.ln1_beta, "ln1.beta");
    NodeId wa = lp.push(p.wa, "quad.wa");
    NodeId wb = lp.push(p.wb, "quad.wb");
    NodeId wc = lp.push(p.wc, "quad.wc");
    NodeId qb = lp.push(p.qbias, "quad.bias");
    NodeId ln2_g = lp.push(p.ln2_gamma, "ln2.gamma");
    NodeId ln2_b = lp.push(p.ln2_beta, "ln2.beta");
    MixerIds mix{};
    mix.ln_gamma = ln2_g;
    mix.ln_beta = ln2_b;
    mix.pw1_w = lp.push(p.pw1_w, "pw1.w");
    mix.pw1_b = lp.push(p.pw1_b, "pw1.b");
    if (p.quad_mixer >= 1) {
        mix.pw1_wa = lp.push(p.pw1_wa, "pw1.wa");
        mix.pw1_wb = lp.push(p.pw1_wb, "pw1.wb");
    }
    mix.pw2_w = lp.push(p.pw2_w, "pw2.w");
    mix.pw2_b = lp.push(p.pw2_b, "pw2.b");
    if (p.quad_mixer >= 2) {
        mix.pw2_wa = lp.push(p.pw2_wa, "pw2.wa");
        mix.pw2_wb = lp.push(p.pw2_wb, "pw2.wb");
    }

    int pad = p.kernel / 2;
    NodeId h = tape.layer_norm(x, ln1_g, ln1_b, 1e-6);
    h = tape.quad_conv(h, wa, wb, wc, qb, p.channels, 1, pad);
    NodeId y = tape.add(x, h);
    return channel_mixer(tape, y, mix, p.quad_mixer);
}

NodeId build_conv(Tape& tape, ConvBlockParams& p, NodeId x, std::vector<NodeId>* param_ids) {
    LeafPusher lp{tape, param_ids};
    NodeId ln1_g = lp.push(p.ln1_gamma, "ln1.gamma");
    NodeId ln1_b = lp.push(p.ln1_beta, "ln1.beta");
    NodeId dw_w = lp.push(p.dw_w, "dw.w");
    NodeId dw_b = lp.push(p.dw_b, "dw.b");
    MixerIds mix{};
    mix.ln_gamma = lp.push(p.ln2_gamma, "ln2.gamma");
    mix.ln_beta = lp.push(p.ln2_beta, "ln2.beta");
    mix.pw1_w = lp.push(p.pw1_w, "pw1.w");
    mix.pw1_b = lp.push(p.pw1_b, "pw1.b");
    mix.pw2_w = lp.push(p.pw2_w, "pw2.w");
    mix.pw2_b = lp.push(p.pw2_b, "pw2.b");

    NodeId h = tape.layer_norm(x, ln1_g, ln1_b, 1e-6);
    h = tape.conv2d(h, dw_w, dw_b, p.channels, 1, p.kernel / 2);
    NodeId y = tape.add(x, h);
    return channel_mixer(tape, y, mix, 0);
}

NodeId build_skip(Tape& tape, SkipBlockParams& p, NodeId x, std::vector<NodeId>* param_ids) {
    LeafPusher lp{tape, param_ids};
    MixerIds mix{};
    mix.ln_gamma = lp.push(p.ln_gamma, "ln.gamma");
    mix.ln_beta = lp.push(p.ln_beta, "ln.beta");
    mix.pw1_w = lp.push(p.pw1_w, "pw1.w");
    mix.pw1_b = lp.push(p.pw1_b, "pw1.b");
    mix.pw2_w = lp.push(p.pw2_w, "pw2.w");
    mix.pw2_b = lp.push(p.pw2_b, "pw2.b");
    return channel_mixer(tape, x, mix, 0);
}

NodeId build_attn(Tape& tape, AttnBlockParams& p, NodeId x, std::vector<NodeId>* param_ids) {
    LeafPusher lp{tape, param_ids};
    NodeId ln1_g = lp.push(p.ln1_gamma, "ln1.gamma");
    NodeId ln1_b = lp.push(p.ln1_beta, "ln1.beta");
    NodeId wq = lp.push(p.wq, "attn.wq");
    NodeId wk = lp.push(p.wk, "attn.wk");
    NodeId wv = lp.push(p.wv, "attn.wv");
    NodeId wo = lp.push(p.wo, "attn.wo");
    MixerIds mix{};
    mix.ln_gamma = lp.push(p.ln2_gamma, "ln2.gamma");
    mix.ln_beta = lp.push(p.ln2_beta, "ln2.beta");
    mix.pw1_w = lp.push(p.pw1_w, "pw1.w");
    mix.pw1_b = lp.push(p.pw1_b, "pw1.b");
    mix.pw2_w = lp.push(p.pw2_w, "pw2.w");
    mix.pw2_b = lp.push(p.pw2_b, "pw2.b");

    NodeId h = tape.layer_norm(x, ln1_g, ln1_b, 1e-6);
    h = tape.window_attention(h, wq, wk, wv, wo, p.window);
    NodeId y = tape.add(x, h);
    return channel_mixer(tape, y, mix, 0);
}

}  // namespace

NodeId block_forward(Tape& tape, AnyBlock& block, NodeId x, std::vector<NodeId>* param_ids) {
    return std::visit(
        [&](auto& b) -> NodeId {
            using T = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<T, IdentityBlock>) {
                (void)b;
                return x;
            } else if constexpr (std::is_same_v<T, QuadraBlockParams>) {
                return build_quadra(tape, b, x, param_ids);
            } else if constexpr (std::is_same_v<T, ConvBlockParams>) {
                return build_conv(tape, b, x, param_ids);
            } else if constexpr (std::is_same_v<T, SkipBlockParams>) {
                return build_skip(tape, b, x, param_ids);
            } else {
                return build_attn(tape, b, x, param_ids);
            }
        },
        block);
}

Tensor quadrablock_forward(QuadraBlockParams& params, const Tensor& x) {
    Tape tape;
    NodeId out = build_quadra(tape, params, tape.leaf(x, "x"), nullptr);
    return tape.value(out);
}

Tensor convblock_forward(ConvBlockParams& params, const Tensor& x) {
    Tape tape;
    NodeId out = build_conv(tape, params, tape.leaf(x, "x"), nullptr);
    return tape.value(out);
}

Tensor skipblock_forward(SkipBlockParams& params, const Tensor& x) {
    Tape tape;
    NodeId out = build_skip(tape, params, tape.leaf(x, "x"), nullptr);
    return tape.value(out);
}

Tensor attnblock_forward(AttnBlockParams& params, const Tensor& x) {
    Tape tape;
    NodeId out = build_attn(tape, params, tape.leaf(x, "x"), nullptr);
    return tape.value(out);
}

Tensor window_attention_forward(AttnBlockParams& params, const Tensor& x) {
    Tape tape;
    NodeId in = tape.leaf(x, "x");
    NodeId wq = tape.leaf(params.wq);
    NodeId wk = tape.leaf(params.wk);
    NodeId wv = tape.leaf(params.wv);
    NodeId wo = tape.leaf(params.wo);
    NodeId out = tape.window_attention(in, wq, wk, wv, wo, params.window);
    return tape.value(out);
}

// ---- rank identity ----

std::vector<double> singular_values(const Tensor& m) {
    if (m.rank() != 2) fail("singular_values: rank-2 matrix required");
    int rows = m.dim(0), cols = m.dim(1);
    // one-sided Jacobi on columns of a working copy
    std::vector<double> a(m.values());
    auto col_dot = [&](int p, int q) {
        double s = 0.0;
        for (int i = 0; i < rows; ++i) s += a[static_cast<std::size_t>(i) * cols + p] * a[static_cast<std::size_t>(i) * cols + q];
        return s;
    };
    const double tol = 1e-14;
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < cols - 1; ++p) {
            for (int q = p + 1; q < cols; ++q) {
                double app = col_dot(p, p), aqq = col_dot(q, q), apq = col_dot(p, q);
                if (std::fabs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;
                double tau = (aqq - app) / (2.0 * apq);
                double t = (tau >= 0 ? 1.0 : -1.0) / (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = c * t;
                for (int i = 0; i < rows; ++i) {
                    double vp = a[static_cast<std::size_t>(i) * cols + p];
                    double vq = a[static_cast<std::size_t>(i) * cols + q];
                    a[static_cast<std::size_t>(i) * cols + p] = c * vp - s * vq;
                    a[static_cast<std::size_t>(i) * cols + q] = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }
    std::vector<double> sigma(static_cast<std::size_t>(cols));
    for (int j = 0; j < cols; ++j) sigma[static_cast<std::size_t>(j)] = std::sqrt(col_dot(j, j));
    std::sort(sigma.begin(), sigma.end(), std::greater<double>());
    return sigma;
}

RankIdentityResult rank_identity(int r, int n, std::uint64_t seed) {
    if (r < 1 || n < 1) fail("rank_identity: r, n must be >= 1");
    Rng rng(seed);
    std::vector<Tensor> was, wbs;
    for (int i = 0; i < r; ++i) {
        Tensor wa(Shape{n}), wb(Shape{n});
        for (int j = 0; j < n; ++j) {
            wa[static_cast<std::size_t>(j)] = rng.uniform(-1.0, 1.0);
            wb[static_cast<std::size_t>(j)] = rng.uniform(-1.0, 1.0);
        }
        was.push_back(std::move(wa));
        wbs.push_back(std::move(wb));
    }
    // sum of outer products
    Tensor sum_outer(Shape{n, n});
    for (int i = 0; i < r; ++i)
        for (int row = 0; row < n; ++row)
            for (int col = 0; col < n; ++col)
                sum_outer.at2(row, col) += was[static_cast<std::size_t>(i)][static_cast<std::size_t>(row)] *
                                           wbs[static_cast<std::size_t>(i)][static_cast<std::size_t>(col)];
    // stacked product W_A^T W_B with W_A, W_B in R^{r x n}
    Tensor stacked(Shape{n, n});
    for (int row = 0; row < n; ++row)
        for (int col = 0; col < n; ++col) {
            double acc = 0.0;
            for (int i = 0; i < r; ++i)
                acc += was[static_cast<std::size_t>(i)][static_cast<std::size_t>(row)] *
                       wbs[static_cast<std::size_t>(i)][static_cast<std::size_t>(col)];
            stacked.at2(row, col) = acc;
        }

    RankIdentityResult result;
    result.max_abs_diff = max_abs_diff(sum_outer, stacked);
    std::vector<double> sigma = singular_values(stacked);
    double cutoff = 1e-9 * std::max(1.0, sigma.empty() ? 0.0 : sigma[0]);
    result.rank = static_cast<int>(std::count_if(sigma.begin(), sigma.end(), [&](double s) { return s > cutoff; }));
    result.holds = result.max_abs_diff <= 1e-12 && result.rank <= r;
    return result;
}

}  // namespace quadranet
