#include "quadranet/quadconv.hpp"

#include <cmath>

namespace quadranet {

void QuadraticConv::validate(int input_channels) const {
    fa.validate(input_channels);
    fb.validate(input_channels);
    fc.validate(input_channels);
    auto same_geom = [&](const ConvKernel& k) {
        return k.weights.shape() == fa.weights.shape() && k.groups == fa.groups && k.stride == fa.stride &&
               k.padding == fa.padding;
    };
    if (!same_geom(fb) || !same_geom(fc))
        fail("quadconv: f_a/f_b/f_c kernels must share shape " + shape_str(fa.weights.shape()) +
             ", groups/stride/padding");
    if (fa.bias || fb.bias) fail("quadconv: bias is only allowed on the f_c path");
}

Tensor quadconv_forward(const QuadraticConv& qc, const Tensor& x, QuadConvState* retain, Tensor* product_out,
                        Tensor* fc_out) {
    if (x.rank() != 4) fail("quadconv: input must be rank-4 NCHW, got " + shape_str(x.shape()));
    qc.validate(x.dim(1));
    Tensor fa = conv2d(x, qc.fa);
    Tensor fb = conv2d(x, qc.fb);
    Tensor prod = hadamard(fa, fb);
    Tensor fc = conv2d(x, qc.fc);
    Tensor out = add(prod, fc);
    if (retain) {
        retain->fa_out = std::move(fa);
        retain->fb_out = std::move(fb);
    }
    if (product_out) *product_out = std::move(prod);
    if (fc_out) *fc_out = std::move(fc);
    return out;
}

Tensor quadconv_oracle_forward(const QuadraticConv& qc, const Tensor& x) {
    qc.validate(x.dim(1));
    if (!qc.depthwise(x.dim(1))) fail("quadconv oracle: depthwise geometry required");
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int k = qc.ksize(), stride = qc.fa.stride, pad = qc.fa.padding;
    int ho = (h + 2 * pad - k) / stride + 1;
    int wo = (w + 2 * pad - k) / stride + 1;
    Tensor out(Shape{n, c, ho, wo});
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const double* wa = qc.fa.weights.data() + static_cast<std::size_t>(ci) * k * k;
            const double* wb = qc.fb.weights.data() + static_cast<std::size_t>(ci) * k * k;
            const double* wc = qc.fc.weights.data() + static_cast<std::size_t>(ci) * k * k;
            double bias = qc.fc.bias ? (*qc.fc.bias)[static_cast<std::size_t>(ci)] : 0.0;
            for (int oh = 0; oh < ho; ++oh) {
                for (int ow = 0; ow < wo; ++ow) {
                    auto tap = [&](int kh, int kw) -> double {
                        int ih = oh * stride + kh - pad;
                        int iw = ow * stride + kw - pad;
                        if (ih < 0 || ih >= h || iw < 0 || iw >= w) return 0.0;
                        return x.at4(ni, ci, ih, iw);
                    };
                    // double sum over j and k of (w_a[j] x_j)(w_b[k] x_k)
                    double quad = 0.0;
                    for (int jh = 0; jh < k; ++jh)
                        for (int jw = 0; jw < k; ++jw) {
                            double aj = wa[jh * k + jw] * tap(jh, jw);
                            if (aj == 0.0) continue;
                            for (int kh = 0; kh < k; ++kh)
                                for (int kw = 0; kw < k; ++kw)
                                    quad += aj * wb[kh * k + kw] * tap(kh, kw);
                        }
                    double lin = bias;
                    for (int jh = 0; jh < k; ++jh)
                        for (int jw = 0; jw < k; ++jw) lin += wc[jh * k + jw] * tap(jh, jw);
                    out.at4(ni, ci, oh, ow) = quad + lin;
                }
            }
        }
    }
    return out;
}

Tensor input_adaptive_weight(const QuadraticConv& qc, const Tensor& x, int n, int c, int oh, int ow) {
    qc.validate(x.dim(1));
    if (!qc.depthwise(x.dim(1))) fail("input_adaptive_weight: depthwise geometry required");
    int h = x.dim(2), w = x.dim(3);
    int k = qc.ksize(), stride = qc.fa.stride, pad = qc.fa.padding;
    int ho = (h + 2 * pad - k) / stride + 1;
    int wo = (w + 2 * pad - k) / stride + 1;
    if (n < 0 || n >= x.dim(0) || c < 0 || c >= x.dim(1) || oh < 0 || oh >= ho || ow < 0 || ow >= wo)
        fail("input_adaptive_weight: position (" + std::to_string(n) + "," + std::to_string(c) + "," +
             std::to_string(oh) + "," + std::to_string(ow) + ") out of bounds for output (" +
             std::to_string(x.dim(0)) + "," + std::to_string(x.dim(1)) + "," + std::to_string(ho) + "," +
             std::to_string(wo) + ")");
    const double* wa = qc.fa.weights.data() + static_cast<std::size_t>(c) * k * k;
    const double* wb = qc.fb.weights.data() + static_cast<std::size_t>(c) * k * k;
    double inner = 0.0;  // sum_k w_b[i->k] x_k
    for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw) {
            int ih = oh * stride + kh - pad;
            int iw = ow * stride + kw - pad;
            if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;
            inner += wb[kh * k + kw] * x.at4(n, c, ih, iw);
        }
    Tensor q(Shape{k, k});
    for (int jh = 0; jh < k; ++jh)
        for (int jw = 0; jw < k; ++jw) q.at2(jh, jw) = wa[jh * k + jw] * inner;
    return q;
}

QuadConvGrads quadconv_backward_optimized(const QuadraticConv& qc, const Tensor& x, const QuadConvState& state,
                                          const Tensor& upstream) {
    qc.validate(x.dim(1));
    if (!state.valid())
        fail("quadconv backward: retained states f_a(x)/f_b(x) are missing (release-rule bug)");
    if (!state.fa_out.same_shape(upstream) || !state.fb_out.same_shape(upstream))
        fail("quadconv backward: upstream/state shape mismatch");
    int groups = qc.fa.groups, stride = qc.fa.stride, pad = qc.fa.padding;

    // d/d(fa) = g (.) fb, d/d(fb) = g (.) fa, d/d(fc) = g
    Tensor g_fa = hadamard(upstream, state.fb_out);
    Tensor g_fb = hadamard(upstream, state.fa_out);

    QuadConvGrads grads;
    grads.ga = conv2d_weight_grad(x, g_fa, qc.fa.weights.shape(), groups, stride, pad);
    grads.gb = conv2d_weight_grad(x, g_fb, qc.fb.weights.shape(), groups, stride, pad);
    grads.gc = conv2d_weight_grad(x, upstream, qc.fc.weights.shape(), groups, stride, pad);
    if (qc.fc.bias) grads.gbias = conv2d_bias_grad(upstream);
    grads.gx = conv2d_input_grad(g_fa, qc.fa.weights, x.shape(), groups, stride, pad);
    Tensor gx_b = conv2d_input_grad(g_fb, qc.fb.weights, x.shape(), groups, stride, pad);
    Tensor gx_c = conv2d_input_grad(upstream, qc.fc.weights, x.shape(), groups, stride, pad);
    for (std::size_t i = 0; i < grads.gx.size(); ++i) grads.gx[i] += gx_b[i] + gx_c[i];
    return grads;
}

}  // namespace quadranet
