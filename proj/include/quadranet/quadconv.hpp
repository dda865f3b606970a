#pragma once

#include "quadranet/tensor.hpp"

namespace quadranet {

// Quadratic convolution f_a(x) (.) f_b(x) + f_c(x). The three kernels share
// geometry; the bias (if any) lives on the linear f_c path.
struct QuadraticConv {
    ConvKernel fa, fb, fc;

    void validate(int input_channels) const;
    bool depthwise(int input_channels) const { return fa.depthwise(input_channels); }
    int ksize() const { return fa.ksize(); }
};

// Intermediate states retained for the memory-optimized backward.
struct QuadConvState {
    Tensor fa_out, fb_out;
    bool valid() const { return !fa_out.empty() && !fb_out.empty(); }
};

// Tensor-form forward. Optionally exports the retained states (fa, fb) and
// the transient states (product, fc) so callers can account for or poison them.
Tensor quadconv_forward(const QuadraticConv& qc, const Tensor& x, QuadConvState* retain = nullptr,
                        Tensor* product_out = nullptr, Tensor* fc_out = nullptr);

// Per-pixel reference: explicit double sum over both receptive-field indices
// j and k plus the linear term. Depthwise geometry only.
Tensor quadconv_oracle_forward(const QuadraticConv& qc, const Tensor& x);

// q(x)_ij = w_a[i->j] * sum_k w_b[i->k] x_k for each j in the receptive field
// of output position (oh, ow) on channel c of sample n. Returned as a k x k map
// aligned with the kernel taps. Contract: sum_j q_ij * x_j equals the quadratic
// part of the forward output at that position.
Tensor input_adaptive_weight(const QuadraticConv& qc, const Tensor& x, int n, int c, int oh, int ow);

struct QuadConvGrads {
    Tensor ga, gb, gc;    // kernel weight grads, shaped like the kernels
    Tensor gbias;         // empty when fc has no bias
    Tensor gx;
};

// Memory-optimized backward: uses only x, the retained fa/fb states and the
// upstream gradient. Never touches the product or fc states.
QuadConvGrads quadconv_backward_optimized(const QuadraticConv& qc, const Tensor& x,
                                          const QuadConvState& state, const Tensor& upstream);

}  // namespace quadranet
