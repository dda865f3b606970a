#include "quadranet/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "quadranet/autograd.hpp"
#include "quadranet/blocks.hpp"

namespace quadranet {

namespace {

constexpr double kFdStep = 1e-5;
constexpr double kFdTol = 1e-5;

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
    return t;
}

double norm_inf(const Tensor& t) {
    double m = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) m = std::max(m, std::fabs(t[i]));
    return m;
}

double relative_error(const Tensor& analytic, const Tensor& fd) {
    double diff = max_abs_diff(analytic, fd);
    double denom = norm_inf(analytic) + norm_inf(fd) + 1e-12;
    return diff / denom;
}

// builder: given leaf node ids (one per input tensor), returns the scalar loss node
using GraphBuilder = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

double check_graph(GradCheckReport& report, const std::string& name, const GraphBuilder& builder,
                   const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<NodeId> ids;
    for (const Tensor& t : inputs) ids.push_back(tape.leaf(t));
    NodeId loss = builder(tape, ids);
    tape.backward(loss);

    double worst = 0.0;
    for (std::size_t which = 0; which < inputs.size(); ++which) {
        Tensor fd = finite_difference_grad(
            [&](const Tensor& probe) {
                Tape t2;
                std::vector<NodeId> ids2;
                for (std::size_t i = 0; i < inputs.size(); ++i)
                    ids2.push_back(t2.leaf(i == which ? probe : inputs[i]));
                return t2.value(builder(t2, ids2))[0];
            },
            inputs[which], kFdStep);
        Tensor analytic = tape.has_grad(ids[which]) ? tape.grad(ids[which]) : Tensor(inputs[which].shape());
        worst = std::max(worst, relative_error(analytic, fd));
    }
    report.entries.push_back({name, worst, kFdTol, worst < kFdTol});
    return worst;
}

}  // namespace

std::string GradCheckReport::summary() const {
    char buf[128];
    std::string out;
    for (const GradCheckEntry& e : entries) {
        std::snprintf(buf, sizeof(buf), "%-34s rel_err %.3e  (tol %.0e)  %s\n", e.name.c_str(), e.rel_err,
                      e.tolerance, e.pass ? "ok" : "FAIL");
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "max finite-difference rel err: %.3e\n", max_rel_err);
    out += buf;
    return out;
}

GradCheckReport run_gradient_checks(std::uint64_t seed, int num_seeds) {
    GradCheckReport report;
    for (int s = 0; s < num_seeds; ++s) {
        Rng rng(seed + static_cast<std::uint64_t>(s));
        std::string tag = "[seed " + std::to_string(seed + static_cast<std::uint64_t>(s)) + "] ";

        // depthwise conv
        {
            Tensor x = random_tensor({2, 3, 6, 6}, rng);
            Tensor w = random_tensor({3, 1, 3, 3}, rng);
            Tensor b = random_tensor({3}, rng);
            check_graph(report, tag + "conv2d depthwise",
                        [](Tape& t, const std::vector<NodeId>& ids) {
                            return t.sum(t.conv2d(ids[0], ids[1], ids[2], 3, 1, 1));
                        },
                        {x, w, b});
        }
        // pointwise conv
        {
            Tensor x = random_tensor({2, 4, 5, 5}, rng);
            Tensor w = random_tensor({6, 4, 1, 1}, rng);
            Tensor b = random_tensor({6}, rng);
            check_graph(report, tag + "conv2d pointwise",
                        [](Tape& t, const std::vector<NodeId>& ids) {
                            return t.sum(t.conv2d(ids[0], ids[1], ids[2], 1, 1, 0));
                        },
                        {x, w, b});
        }
        // strided stem-like conv
        {
            Tensor x = random_tensor({1, 3, 8, 8}, rng);
            Tensor w = random_tensor({5, 3, 4, 4}, rng);
            Tensor b = random_tensor({5}, rng);
            check_graph(report, tag + "conv2d strided 4x4",
                        [](Tape& t, const std::vector<NodeId>& ids) {
                            return t.sum(t.conv2d(ids[0], ids[1], ids[2], 1, 4, 0));
                        },
                        {x, w, b});
        }
        // fused quadratic depthwise conv
        {
            Tensor x = random_tensor({2, 3, 6, 6}, rng);
            Tensor wa = random_tensor({3, 1, 3, 3}, rng);
            Tensor wb = random_tensor({3, 1, 3, 3}, rng);
            Tensor wc = random_tensor({3, 1, 3, 3}, rng);
            Tensor b = random_tensor({3}, rng);
            check_graph(report, tag + "quad_conv depthwise",
                        [](Tape& t, const std::vector<NodeId>& ids) {
                            return t.sum(t.quad_conv(ids[0], ids[1], ids[2], ids[3], ids[4], 3, 1, 1));
                        },
                        {x, wa, wb, wc, b});
        }
        // quadratic pointwise conv
        {
            Tensor x = random_tensor({1, 3, 4, 4}, rng);
            Tensor wa = random_tensor({5, 3, 1, 1}, rng);
            Tensor wb = random_tensor({5, 3, 1, 1}, rng);
            Tensor wc = random_tensor({5, 3, 1, 1}, rng);
            Tensor b = random_tensor({5}, rng);
            check_graph(report, tag + "quad_conv pointwise",
                        [](Tape& t, const std::vector<NodeId>& ids) {
                            return t.sum(t.quad_conv(ids[0], ids[1], ids[2], ids[3], ids[4], 1, 1, 0));
                        },
                        {x, wa, wb, wc, b});
        }
        // layer norm
        {
            Tensor x = random_tensor({2, 5, 3, 3}, rng);
            Tensor gamma = random_tensor({5}, rng);
            Tensor beta = random_tensor({5}, rng);
            // weight the output so the grad is not uniform
            Tensor mask = random_tensor({2, 5, 3, 3}, rng);
            check_graph(report, tag + "layer_norm",
                        [&](Tape& t, const std::vector<NodeId>& ids) {
                            NodeId y = t.layer_norm(ids[0], ids[1], ids[2], 1e-6);
                            return t.sum(t.hadamard(y, t.leaf(mask)));
                        },
                        {x, gamma, beta});
        }
        // gelu
        {
            Tensor x = random_tensor({2, 3, 4, 4}, rng, 2.0);
            check_graph(report, tag + "gelu",
                        [](Tape& t, const std::vector<NodeId>& ids) { return t.sum(t.gelu(ids[0])); }, {x});
        }
        // hadamard + add + scale
        {
            Tensor a = random_tensor({3, 4}, rng);
            Tensor b = random_tensor({3, 4}, rng);
            check_graph(report, tag + "hadamard/add/scale",
                        [](Tape& t, const std::vector<NodeId>& ids) {
                            NodeId h = t.hadamard(ids[0], ids[1]);
                            return t.sum(t.scale(t.add(h, ids[0]), 0.5));
                        },
                        {a, b});
        }
        // window attention
        {
            Tensor x = random_tensor({1, 3, 4, 4}, rng);
            Tensor wq = random_tensor({3, 3}, rng);
            Tensor wk = random_tensor({3, 3}, rng);
            Tensor wv = random_tensor({3, 3}, rng);
            Tensor wo = random_tensor({3, 3}, rng);
            check_graph(report, tag + "window_attention M=2",
                        [](Tape& t, const std::vector<NodeId>& ids) {
                            return t.sum(t.window_attention(ids[0], ids[1], ids[2], ids[3], ids[4], 2));
                        },
                        {x, wq, wk, wv, wo});
        }
        // GAP + linear + softmax cross-entropy
        {
            Tensor x = random_tensor({2, 3, 4, 4}, rng);
            Tensor w = random_tensor({4, 3}, rng);
            Tensor b = random_tensor({4}, rng);
            std::vector<int> labels{1, 3};
            check_graph(report, tag + "gap/linear/softmax_ce",
                        [labels](Tape& t, const std::vector<NodeId>& ids) {
                            NodeId pooled = t.global_avg_pool(ids[0]);
                            NodeId logits = t.linear(pooled, ids[1], ids[2]);
                            return t.softmax_cross_entropy(logits, labels);
                        },
                        {x, w, b});
        }
        // full QuadraBlock
        {
            QuadraBlockParams params = QuadraBlockParams::init(4, 3, 2, 0, rng);
            Tensor x = random_tensor({1, 4, 8, 8}, rng);
            std::vector<Tensor> inputs{x};
            for (ParamRef ref : params.parameters()) inputs.push_back(*ref.tensor);
            int kernel = params.kernel;
            check_graph(report, tag + "quadra_block C=4 k=3 R=2",
                        [kernel](Tape& t, const std::vector<NodeId>& ids) {
                            // ids order mirrors QuadraBlockParams::parameters()
                            NodeId x_in = ids[0];
                            NodeId h = t.layer_norm(x_in, ids[1], ids[2], 1e-6);
                            h = t.quad_conv(h, ids[3], ids[4], ids[5], ids[6], 4, 1, kernel / 2);
                            NodeId y = t.add(x_in, h);
                            NodeId m = t.layer_norm(y, ids[7], ids[8], 1e-6);
                            m = t.conv2d(m, ids[9], ids[10], 1, 1, 0);
                            m = t.gelu(m);
                            m = t.conv2d(m, ids[11], ids[12], 1, 1, 0);
                            return t.sum(t.add(y, m));
                        },
                        inputs);
        }
        // optimized backward == full-retention (naive composition) backward
        {
            Tensor x = random_tensor({2, 4, 6, 6}, rng);
            Tensor wa = random_tensor({4, 1, 3, 3}, rng);
            Tensor wb = random_tensor({4, 1, 3, 3}, rng);
            Tensor wc = random_tensor({4, 1, 3, 3}, rng);
            Tensor b = random_tensor({4}, rng);

            Tape fused;
            NodeId fx = fused.leaf(x), fwa = fused.leaf(wa), fwb = fused.leaf(wb), fwc = fused.leaf(wc),
                   fb = fused.leaf(b);
            NodeId fout = fused.quad_conv(fx, fwa, fwb, fwc, fb, 4, 1, 1);
            fused.backward(fused.sum(fout));

            Tape naive;
            NodeId nx = naive.leaf(x), nwa = naive.leaf(wa), nwb = naive.leaf(wb), nwc = naive.leaf(wc),
                   nb = naive.leaf(b);
            NodeId fa_out = naive.conv2d(nx, nwa, -1, 4, 1, 1);
            NodeId fb_out = naive.conv2d(nx, nwb, -1, 4, 1, 1);
            NodeId fc_out = naive.conv2d(nx, nwc, nb, 4, 1, 1);
            NodeId nout = naive.add(naive.hadamard(fa_out, fb_out), fc_out);
            naive.backward(naive.sum(nout));

            double worst = 0.0;
            worst = std::max(worst, max_abs_diff(fused.grad(fx), naive.grad(nx)));
            worst = std::max(worst, max_abs_diff(fused.grad(fwa), naive.grad(nwa)));
            worst = std::max(worst, max_abs_diff(fused.grad(fwb), naive.grad(nwb)));
            worst = std::max(worst, max_abs_diff(fused.grad(fwc), naive.grad(nwc)));
            worst = std::max(worst, max_abs_diff(fused.grad(fb), naive.grad(nb)));
            report.entries.push_back({tag + "quadconv optimized==naive", worst, 1e-12, worst <= 1e-12});
        }
    }

    report.pass = true;
    for (const GradCheckEntry& e : report.entries) {
        if (e.tolerance == kFdTol) report.max_rel_err = std::max(report.max_rel_err, e.rel_err);
        if (!e.pass) report.pass = false;
    }
    return report;
}

}  // namespace quadranet
