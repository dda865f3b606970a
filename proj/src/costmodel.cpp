#include "quadranet/costmodel.hpp"

#include <cstdio>
#include <sstream>

namespace quadranet {

CostReport& CostReport::operator+=(const CostReport& other) {
    params += other.params;
    macs += other.macs;
    fwd_states += other.fwd_states;
    bwd_retained_states += other.bwd_retained_states;
    serial_depth += other.serial_depth;
    return *this;
}

std::string CostReport::table(bool bytes) const {
    std::size_t mult = bytes ? 8 : 1;
    const char* unit = bytes ? "bytes" : "elements";
    char buf[256];
    std::ostringstream os;
    std::snprintf(buf, sizeof(buf), "%-24s %20zu\n", "params", params);
    os << buf;
    std::snprintf(buf, sizeof(buf), "%-24s %20zu\n", "macs", macs);
    os << buf;
    std::snprintf(buf, sizeof(buf), "%-24s %20zu %s\n", "fwd_states", fwd_states * mult, unit);
    os << buf;
    std::snprintf(buf, sizeof(buf), "%-24s %20zu %s\n", "bwd_retained_states", bwd_retained_states * mult, unit);
    os << buf;
    std::snprintf(buf, sizeof(buf), "%-24s %20zu\n", "serial_depth", serial_depth);
    os << buf;
    std::snprintf(buf, sizeof(buf), "%-24s %20.1f (alpha=%g beta=%g gamma=%g)\n", "proxy_latency",
                  proxy_latency(), coeff.alpha, coeff.beta, coeff.gamma);
    os << buf;
    return os.str();
}

std::size_t states_self_attention(int h, int w, int c, std::optional<int> window) {
    if (h < 1 || w < 1 || c < 1) fail("states_self_attention: dims must be >= 1");
    std::size_t hw = static_cast<std::size_t>(h) * w;
    std::size_t hwc = hw * static_cast<std::size_t>(c);
    if (window) {
        int m = *window;
        if (m < 1 || h % m != 0 || w % m != 0)
            fail("states_self_attention: " + std::to_string(h) + "x" + std::to_string(w) +
                 " not divisible by window " + std::to_string(m));
        return (static_cast<std::size_t>(m) * m + 3) * hwc;
    }
    return 3 * hwc + hw * hw + hw * hw * static_cast<std::size_t>(c);
}

std::size_t attention_summary_factor(int h, int w) {
    return static_cast<std::size_t>(h) * w + 3;
}

std::size_t states_quadratic(int h, int w, int c, Phase phase) {
    if (h < 1 || w < 1 || c < 1) fail("states_quadratic: dims must be >= 1");
    std::size_t hwc = static_cast<std::size_t>(h) * w * c;
    return (phase == Phase::Forward ? 4 : 2) * hwc;
}

std::size_t states_depthwise(int h, int w, int c) {
    if (h < 1 || w < 1 || c < 1) fail("states_depthwise: dims must be >= 1");
    return static_cast<std::size_t>(h) * w * c;
}

namespace {

// channel mixer: LN + pw1 (C -> RC) + GELU + pw2 (RC -> C) + residual add.
// quad_mixer >= 1 turns pw1 into a quadratic pointwise conv, >= 2 also pw2.
CostReport mixer_report(int c, int r, int h, int w, int batch, int quad_mixer) {
    CostReport rep;
    std::size_t e = static_cast<std::size_t>(batch) * c * h * w;   // C-channel map
    std::size_t er = e * static_cast<std::size_t>(r);              // RC-channel map
    std::size_t uc = static_cast<std::size_t>(c);
    std::size_t ur = static_cast<std::size_t>(r);

    rep.params = 2 * uc;                                  // LN gamma/beta
    rep.params += uc * ur * uc + ur * uc;                 // pw1 w + b
    if (quad_mixer >= 1) rep.params += 2 * uc * ur * uc;  // pw1 wa + wb
    rep.params += ur * uc * uc + uc;                      // pw2 w + b
    if (quad_mixer >= 2) rep.params += 2 * ur * uc * uc;  // pw2 wa + wb

    rep.macs = (quad_mixer >= 1 ? 4 : 1) * er * uc;       // pw1: out RC-map, fan C
    rep.macs += (quad_mixer >= 2 ? 4 : 1) * e * ur * uc;  // pw2: out C-map, fan RC

    std::size_t pw1_states = (quad_mixer >= 1 ? 4 : 1) * er;
    std::size_t pw2_states = (quad_mixer >= 2 ? 4 : 1) * e;
    rep.fwd_states = e + pw1_states + er /*gelu*/ + pw2_states + e /*add*/;
    std::size_t pw1_ret = (quad_mixer >= 1 ? 2 : 1) * er;
    std::size_t pw2_ret = (quad_mixer >= 2 ? 2 : 1) * e;
    rep.bwd_retained_states = e + pw1_ret + er + pw2_ret + e;
    return rep;
}

}  // namespace

CostReport block_report(const BlockChoice& choice, int channels, int h, int w, int batch,
                        CostCoefficients coeff) {
    CostReport rep;
    rep.coeff = coeff;
    if (choice.kind == BlockKind::Identity) return rep;

    int c = channels, r = choice.expansion;
    std::size_t e = static_cast<std::size_t>(batch) * c * h * w;
    std::size_t uc = static_cast<std::size_t>(c);
    std::size_t k2 = static_cast<std::size_t>(choice.kernel) * choice.kernel;

    switch (choice.kind) {
        case BlockKind::Quadra: {
            rep.params = 2 * uc + 3 * uc * k2 + uc;  // LN + three depthwise kernels + f_c bias
            rep.macs = 4 * e * k2;                   // low-rank neuron rate: 4n per output, n = k^2
            rep.fwd_states = e /*LN*/ + 4 * e /*quadconv*/ + e /*residual add*/;
            rep.bwd_retained_states = e + 2 * e + e;
            rep.serial_depth = 1;
            break;
        }
        case BlockKind::Conv: {
            rep.params = 2 * uc + uc * k2 + uc;
            rep.macs = e * k2;
            rep.fwd_states = e + e + e;
            rep.bwd_retained_states = e + e + e;
            rep.serial_depth = 1;
            break;
        }
        case BlockKind::Skip: {
            rep.serial_depth = 1;  // channel mixer only
            break;
        }
        case BlockKind::Attention: {
            int m = choice.window;
            std::size_t um = static_cast<std::size_t>(m);
            std::size_t attn = states_self_attention(h, w, c, m) * static_cast<std::size_t>(batch);
            rep.params = 2 * uc + 4 * uc * uc;  // LN + Q/K/V/out projections
            // QKV + out projections at fan C, scores and weighted values at M^2 per token
            rep.macs = 4 * e * uc + 2 * e * um * um;
            rep.fwd_states = e + attn + e;
            rep.bwd_retained_states = e + attn + e;
            rep.serial_depth = 1;
            break;
        }
        case BlockKind::Recursive: {
            // g^rConv-style stand-in: r sequential gated depthwise convs.
            // only the serialization penalty r is load-bearing downstream.
            std::size_t order = static_cast<std::size_t>(choice.order);
            rep.params = 2 * uc + order * (uc * k2 + uc);
            rep.macs = order * 2 * e * k2;
            rep.fwd_states = e + 2 * order * e + e;
            rep.bwd_retained_states = rep.fwd_states;
            rep.serial_depth = order;
            break;
        }
        case BlockKind::Identity:
            break;
    }

    CostReport mixer = mixer_report(c, r, h, w, batch, 0);
    rep.params += mixer.params;
    rep.macs += mixer.macs;
    rep.fwd_states += mixer.fwd_states;
    rep.bwd_retained_states += mixer.bwd_retained_states;
    return rep;
}

namespace {

CostReport block_report_with_mixer(const BlockChoice& choice, int channels, int h, int w, int batch,
                                   CostCoefficients coeff, int quad_mixer) {
    if (choice.kind != BlockKind::Quadra || quad_mixer == 0)
        return block_report(choice, channels, h, w, batch, coeff);
    CostReport rep = block_report(choice, channels, h, w, batch, coeff);
    CostReport plain = mixer_report(channels, choice.expansion, h, w, batch, 0);
    CostReport quad = mixer_report(channels, choice.expansion, h, w, batch, quad_mixer);
    rep.params += quad.params - plain.params;
    rep.macs += quad.macs - plain.macs;
    rep.fwd_states += quad.fwd_states - plain.fwd_states;
    rep.bwd_retained_states += quad.bwd_retained_states - plain.bwd_retained_states;
    return rep;
}

}  // namespace

CostReport network_report(const NetworkSpec& spec, int batch, CostCoefficients coeff) {
    spec.validate();
    CostReport rep;
    rep.coeff = coeff;
    auto channels = spec.stage_channels();
    std::size_t un = static_cast<std::size_t>(batch);

    // STEM: 4x4 stride-4 conv, 3 -> C
    int size = spec.input_size / 4;
    {
        std::size_t out_e = un * channels[0] * size * size;
        rep.params += static_cast<std::size_t>(channels[0]) * 3 * 16 + channels[0];
        rep.macs += out_e * 48;  // fan = 3 * 4 * 4
        rep.fwd_states += out_e;
        rep.bwd_retained_states += out_e;
        rep.serial_depth += 1;
    }

    for (int s = 0; s < 4; ++s) {
        int c = channels[static_cast<std::size_t>(s)];
        for (const BlockChoice& choice : spec.slots[static_cast<std::size_t>(s)]) {
            CostReport blk = block_report_with_mixer(choice, c, size, size, batch, coeff, spec.quad_mixer);
            rep += blk;
        }
        if (s < 3) {
            int cout = channels[static_cast<std::size_t>(s) + 1];
            std::size_t in_e = un * c * size * size;
            size /= 2;
            std::size_t out_e = un * cout * size * size;
            rep.params += 2 * static_cast<std::size_t>(c);                                 // LN
            rep.params += static_cast<std::size_t>(cout) * c * 4 + static_cast<std::size_t>(cout);  // 2x2 conv
            rep.macs += out_e * static_cast<std::size_t>(c) * 4;
            rep.fwd_states += in_e /*LN*/ + out_e /*conv*/;
            rep.bwd_retained_states += in_e + out_e;
            rep.serial_depth += 1;
        }
    }

    // head: GAP + LN + linear
    int c_last = channels[3];
    std::size_t uc = static_cast<std::size_t>(c_last);
    std::size_t k = static_cast<std::size_t>(spec.num_classes);
    rep.params += 2 * uc + k * uc + k;
    rep.macs += un * k * uc;
    rep.fwd_states += un * uc /*gap*/ + un * uc /*ln*/ + un * k /*linear*/;
    rep.bwd_retained_states += un * uc + un * uc + un * k;
    rep.serial_depth += 1;
    return rep;
}

std::string compare_table(int channels, int h, int w, int window, bool bytes, CostCoefficients coeff) {
    std::size_t mult = bytes ? 8 : 1;
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-14s %14s %14s %14s %14s\n", "block",
                  bytes ? "fwd_bytes" : "fwd_states", bytes ? "bwd_bytes" : "bwd_states", "params", "macs");
    os << buf;
    struct Row {
        const char* name;
        BlockChoice choice;
    };
    Row rows[] = {
        {"SkipBlock", {BlockKind::Skip, 7, 4, window, 1}},
        {"ConvBlock", {BlockKind::Conv, 7, 4, window, 1}},
        {"QuadraBlock", {BlockKind::Quadra, 7, 4, window, 1}},
        {"AttnBlock", {BlockKind::Attention, 7, 4, window, 1}},
    };
    for (const Row& row : rows) {
        CostReport rep = block_report(row.choice, channels, h, w, 1, coeff);
        std::snprintf(buf, sizeof(buf), "%-14s %14zu %14zu %14zu %14zu\n", row.name, rep.fwd_states * mult,
                      rep.bwd_retained_states * mult, rep.params, rep.macs);
        os << buf;
    }
    return os.str();
}

}  // namespace quadranet
