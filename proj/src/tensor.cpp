#include "quadranet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace quadranet {

void fail(const std::string& message) {
    throw std::invalid_argument(message);
}

std::size_t shape_elements(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    for (int d : shape_)
        if (d < 1) fail("tensor dimension must be >= 1, got shape " + shape_str(shape_));
    data_.assign(shape_elements(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    for (int d : shape_)
        if (d < 1) fail("tensor dimension must be >= 1, got shape " + shape_str(shape_));
    if (shape_elements(shape_) != data_.size())
        fail("tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {
#ifndef NDEBUG
void debug_check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) fail(std::string(op) + " produced a non-finite value");
}
#else
void debug_check_finite(const Tensor&, const char*) {}
#endif
}  // namespace

// ---- rng ----

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::normal() {
    if (have_cached_normal_) {
        have_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    cached_normal_ = r * std::sin(a);
    have_cached_normal_ = true;
    return r * std::cos(a);
}

int Rng::uniform_int(int n) {
    if (n <= 0) fail("uniform_int requires n >= 1");
    return std::min(n - 1, static_cast<int>(uniform() * n));
}

// ---- elementwise ----

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "hadamard");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

Tensor scale(const Tensor& a, double alpha) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * alpha;
    return out;
}

double sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

// ---- gelu (tanh approximation) ----

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double v = x[i];
        out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    }
    debug_check_finite(out, "gelu");
    return out;
}

Tensor gelu_input_grad(const Tensor& x, const Tensor& g) {
    require_same_shape(x, g, "gelu_input_grad");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double v = x[i];
        double u = kGeluC * (v + kGeluA * v * v * v);
        double t = std::tanh(u);
        double sech2 = 1.0 - t * t;
        double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        out[i] = g[i] * (0.5 * (1.0 + t) + 0.5 * v * sech2 * du);
    }
    return out;
}

// ---- softmax ----

Tensor softmax_lastdim(const Tensor& x) {
    if (x.rank() < 1) fail("softmax_lastdim: rank must be >= 1");
    int last = x.dim(x.rank() - 1);
    std::size_t rows = x.size() / static_cast<std::size_t>(last);
    Tensor out(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data() + r * last;
        double* o = out.data() + r * last;
        double mx = in[0];
        for (int j = 1; j < last; ++j) mx = std::max(mx, in[j]);
        double denom = 0.0;
        for (int j = 0; j < last; ++j) {
            o[j] = std::exp(in[j] - mx);
            denom += o[j];
        }
        for (int j = 0; j < last; ++j) o[j] /= denom;
    }
    debug_check_finite(out, "softmax_lastdim");
    return out;
}

// ---- convolution ----

void ConvKernel::validate(int input_channels) const {
    if (weights.rank() != 4) fail("conv kernel weights must be rank-4, got " + shape_str(weights.shape()));
    if (weights.dim(2) != weights.dim(3)) fail("conv kernel must be square, got " + shape_str(weights.shape()));
    if (groups < 1 || stride < 1 || padding < 0) fail("conv kernel: groups/stride must be >= 1, padding >= 0");
    if (out_channels() % groups != 0)
        fail("conv kernel: C_out " + std::to_string(out_channels()) + " not divisible by groups " +
             std::to_string(groups));
    if (in_channels() != input_channels)
        fail("conv2d: input has " + std::to_string(input_channels) + " channels but kernel expects " +
             std::to_string(in_channels()) + " (groups " + std::to_string(groups) + " x " +
             std::to_string(in_channels_per_group()) + ")");
    if (bias && (bias->rank() != 1 || bias->dim(0) != out_channels()))
        fail("conv kernel bias must have shape (" + std::to_string(out_channels()) + ")");
}

namespace {

struct ConvDims {
    int n, cin, h, w;
    int cout, cpg, k;
    int ho, wo;
    int cout_per_group;
};

ConvDims conv_dims(const Shape& xshape, const Shape& wshape, int groups, int stride, int padding) {
    if (xshape.size() != 4) fail("conv2d: input must be rank-4 NCHW, got " + shape_str(xshape));
    if (wshape.size() != 4) fail("conv2d: weights must be rank-4, got " + shape_str(wshape));
    ConvDims d{};
    d.n = xshape[0];
    d.cin = xshape[1];
    d.h = xshape[2];
    d.w = xshape[3];
    d.cout = wshape[0];
    d.cpg = wshape[1];
    d.k = wshape[2];
    if (wshape[2] != wshape[3]) fail("conv2d: kernel must be square, got " + shape_str(wshape));
    if (groups < 1 || d.cout % groups != 0)
        fail("conv2d: C_out " + std::to_string(d.cout) + " not divisible by groups " + std::to_string(groups));
    if (d.cpg * groups != d.cin)
        fail("conv2d: input channels " + std::to_string(d.cin) + " != groups*C_in_per_group " +
             std::to_string(d.cpg * groups));
    d.ho = (d.h + 2 * padding - d.k) / stride + 1;
    d.wo = (d.w + 2 * padding - d.k) / stride + 1;
    if (d.ho < 1 || d.wo < 1)
        fail("conv2d: output would be empty for input " + shape_str(xshape) + ", k=" + std::to_string(d.k) +
             ", stride=" + std::to_string(stride) + ", padding=" + std::to_string(padding));
    d.cout_per_group = d.cout / groups;
    return d;
}

// depthwise stride-1 fast path: contiguous inner loops over output width
void conv_depthwise_s1(const Tensor& x, const Tensor& w, const Tensor* bias, int padding, Tensor& out,
                       const ConvDims& d) {
    parallel_for(static_cast<std::size_t>(d.n) * d.cin, [&](std::size_t job) {
        int n = static_cast<int>(job) / d.cin;
        int c = static_cast<int>(job) % d.cin;
        const double* xp = x.data() + x.offset4(n, c, 0, 0);
        const double* wp = w.data() + static_cast<std::size_t>(c) * d.k * d.k;
        double* op = out.data() + out.offset4(n, c, 0, 0);
        double b = bias ? (*bias)[static_cast<std::size_t>(c)] : 0.0;
        for (int oh = 0; oh < d.ho; ++oh) {
            double* orow = op + static_cast<std::size_t>(oh) * d.wo;
            for (int ow = 0; ow < d.wo; ++ow) orow[ow] = b;
            for (int kh = 0; kh < d.k; ++kh) {
                int ih = oh + kh - padding;
                if (ih < 0 || ih >= d.h) continue;
                const double* xrow = xp + static_cast<std::size_t>(ih) * d.w;
                for (int kw = 0; kw < d.k; ++kw) {
                    double wv = wp[kh * d.k + kw];
                    int shift = kw - padding;
                    int lo = std::max(0, -shift);
                    int hi = std::min(d.wo, d.w - shift);
                    for (int ow = lo; ow < hi; ++ow) orow[ow] += wv * xrow[ow + shift];
                }
            }
        }
    });
}

// pointwise 1x1 groups=1 fast path: per-channel axpy over the spatial plane
void conv_pointwise(const Tensor& x, const Tensor& w, const Tensor* bias, Tensor& out, const ConvDims& d) {
    std::size_t plane = static_cast<std::size_t>(d.h) * d.w;
    parallel_for(static_cast<std::size_t>(d.n) * d.cout, [&](std::size_t job) {
        int n = static_cast<int>(job) / d.cout;
        int co = static_cast<int>(job) % d.cout;
        double* op = out.data() + out.offset4(n, co, 0, 0);
        double b = bias ? (*bias)[static_cast<std::size_t>(co)] : 0.0;
        for (std::size_t p = 0; p < plane; ++p) op[p] = b;
        const double* wrow = w.data() + static_cast<std::size_t>(co) * d.cin;
        for (int ci = 0; ci < d.cin; ++ci) {
            double wv = wrow[ci];
            const double* xp = x.data() + x.offset4(n, ci, 0, 0);
            for (std::size_t p = 0; p < plane; ++p) op[p] += wv * xp[p];
        }
    });
}

void conv_general(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int padding,
                  Tensor& out, const ConvDims& d) {
    parallel_for(static_cast<std::size_t>(d.n) * d.cout, [&](std::size_t job) {
        int n = static_cast<int>(job) / d.cout;
        int co = static_cast<int>(job) % d.cout;
        int g = co / d.cout_per_group;
        double b = bias ? (*bias)[static_cast<std::size_t>(co)] : 0.0;
        for (int oh = 0; oh < d.ho; ++oh) {
            for (int ow = 0; ow < d.wo; ++ow) {
                double acc = b;
                for (int cp = 0; cp < d.cpg; ++cp) {
                    int ci = g * d.cpg + cp;
                    for (int kh = 0; kh < d.k; ++kh) {
                        int ih = oh * stride + kh - padding;
                        if (ih < 0 || ih >= d.h) continue;
                        for (int kw = 0; kw < d.k; ++kw) {
                            int iw = ow * stride + kw - padding;
                            if (iw < 0 || iw >= d.w) continue;
                            acc += w.data()[((static_cast<std::size_t>(co) * d.cpg + cp) * d.k + kh) * d.k + kw] *
                                   x.at4(n, ci, ih, iw);
                        }
                    }
                }
                out.at4(n, co, oh, ow) = acc;
            }
        }
    });
}

}  // namespace

Tensor conv2d_raw(const Tensor& x, const Tensor& w, const Tensor* bias, int groups, int stride, int padding) {
    ConvDims d = conv_dims(x.shape(), w.shape(), groups, stride, padding);
    if (bias && (bias->rank() != 1 || bias->dim(0) != d.cout))
        fail("conv2d: bias must have shape (" + std::to_string(d.cout) + "), got " + shape_str(bias->shape()));
    Tensor out(Shape{d.n, d.cout, d.ho, d.wo});
    if (stride == 1 && groups == d.cin && d.cout == d.cin && d.cpg == 1) {
        conv_depthwise_s1(x, w, bias, padding, out, d);
    } else if (d.k == 1 && groups == 1 && stride == 1 && padding == 0) {
        conv_pointwise(x, w, bias, out, d);
    } else {
        conv_general(x, w, bias, stride, padding, out, d);
    }
    debug_check_finite(out, "conv2d");
    return out;
}

Tensor conv2d(const Tensor& x, const ConvKernel& kernel) {
    if (x.rank() != 4) fail("conv2d: input must be rank-4 NCHW, got " + shape_str(x.shape()));
    kernel.validate(x.dim(1));
    return conv2d_raw(x, kernel.weights, kernel.bias ? &*kernel.bias : nullptr, kernel.groups, kernel.stride,
                      kernel.padding);
}

Tensor conv2d_input_grad(const Tensor& gout, const Tensor& w, const Shape& xshape, int groups, int stride,
                         int padding) {
    ConvDims d = conv_dims(xshape, w.shape(), groups, stride, padding);
    Tensor gx(xshape);
    // scatter: each (n, g) pair owns a disjoint slice of gx
    parallel_for(static_cast<std::size_t>(d.n) * groups, [&](std::size_t job) {
        int n = static_cast<int>(job) / groups;
        int g = static_cast<int>(job) % groups;
        for (int cop = 0; cop < d.cout_per_group; ++cop) {
            int co = g * d.cout_per_group + cop;
            for (int oh = 0; oh < d.ho; ++oh) {
                for (int ow = 0; ow < d.wo; ++ow) {
                    double gv = gout.at4(n, co, oh, ow);
                    if (gv == 0.0) continue;
                    for (int cp = 0; cp < d.cpg; ++cp) {
                        int ci = g * d.cpg + cp;
                        for (int kh = 0; kh < d.k; ++kh) {
                            int ih = oh * stride + kh - padding;
                            if (ih < 0 || ih >= d.h) continue;
                            for (int kw = 0; kw < d.k; ++kw) {
                                int iw = ow * stride + kw - padding;
                                if (iw < 0 || iw >= d.w) continue;
                                gx.at4(n, ci, ih, iw) +=
                                    gv * w.data()[((static_cast<std::size_t>(co) * d.cpg + cp) * d.k + kh) * d.k + kw];
                            }
                        }
                    }
                }
            }
        }
    });
    return gx;
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gout, const Shape& wshape, int groups, int stride,
                          int padding) {
    ConvDims d = conv_dims(x.shape(), wshape, groups, stride, padding);
    Tensor gw(wshape);
    // each co owns its weight slice; accumulate over n,oh,ow sequentially (deterministic)
    parallel_for(static_cast<std::size_t>(d.cout), [&](std::size_t job) {
        int co = static_cast<int>(job);
        int g = co / d.cout_per_group;
        for (int cp = 0; cp < d.cpg; ++cp) {
            int ci = g * d.cpg + cp;
            for (int kh = 0; kh < d.k; ++kh) {
                for (int kw = 0; kw < d.k; ++kw) {
                    double acc = 0.0;
                    for (int n = 0; n < d.n; ++n) {
                        for (int oh = 0; oh < d.ho; ++oh) {
                            int ih = oh * stride + kh - padding;
                            if (ih < 0 || ih >= d.h) continue;
                            const double* grow = gout.data() + gout.offset4(n, co, oh, 0);
                            const double* xrow = x.data() + x.offset4(n, ci, ih, 0);
                            for (int ow = 0; ow < d.wo; ++ow) {
                                int iw = ow * stride + kw - padding;
                                if (iw < 0 || iw >= d.w) continue;
                                acc += grow[ow] * xrow[iw];
                            }
                        }
                    }
                    gw.data()[((static_cast<std::size_t>(co) * d.cpg + cp) * d.k + kh) * d.k + kw] = acc;
                }
            }
        }
    });
    return gw;
}

Tensor conv2d_bias_grad(const Tensor& gout) {
    if (gout.rank() != 4) fail("conv2d_bias_grad: expected rank-4");
    Tensor gb(Shape{gout.dim(1)});
    for (int n = 0; n < gout.dim(0); ++n)
        for (int c = 0; c < gout.dim(1); ++c) {
            double acc = 0.0;
            const double* p = gout.data() + gout.offset4(n, c, 0, 0);
            std::size_t plane = static_cast<std::size_t>(gout.dim(2)) * gout.dim(3);
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            gb[static_cast<std::size_t>(c)] += acc;
        }
    return gb;
}

// ---- layer norm ----

Tensor layer_norm_fwd(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                      LayerNormCache* cache) {
    if (x.rank() != 4) fail("layer_norm: input must be rank-4 NCHW, got " + shape_str(x.shape()));
    if (eps <= 0.0) fail("layer_norm: eps must be > 0");
    int c = x.dim(1);
    if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c)
        fail("layer_norm: gamma/beta must have shape (" + std::to_string(c) + "), got " +
             shape_str(gamma.shape()) + " / " + shape_str(beta.shape()));
    int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor out(x.shape());
    if (cache) {
        cache->xhat = Tensor(x.shape());
        cache->inv_std = Tensor(Shape{n * h * w});
    }
    for (int ni = 0; ni < n; ++ni) {
        const double* xb = x.data() + x.offset4(ni, 0, 0, 0);
        double* ob = out.data() + out.offset4(ni, 0, 0, 0);
        for (std::size_t p = 0; p < plane; ++p) {
            double mean = 0.0;
            for (int ci = 0; ci < c; ++ci) mean += xb[ci * plane + p];
            mean /= c;
            double var = 0.0;
            for (int ci = 0; ci < c; ++ci) {
                double dlt = xb[ci * plane + p] - mean;
                var += dlt * dlt;
            }
            var /= c;
            double inv = 1.0 / std::sqrt(var + eps);
            for (int ci = 0; ci < c; ++ci) {
                double xh = (xb[ci * plane + p] - mean) * inv;
                ob[ci * plane + p] = gamma[static_cast<std::size_t>(ci)] * xh + beta[static_cast<std::size_t>(ci)];
                if (cache) cache->xhat.data()[x.offset4(ni, ci, 0, 0) + p] = xh;
            }
            if (cache) cache->inv_std[static_cast<std::size_t>(ni) * plane + p] = inv;
        }
    }
    debug_check_finite(out, "layer_norm");
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    return layer_norm_fwd(x, gamma, beta, eps, nullptr);
}

LayerNormGrads layer_norm_backward(const Tensor& g, const LayerNormCache& cache, const Tensor& gamma) {
    const Tensor& xhat = cache.xhat;
    if (!g.same_shape(xhat)) fail("layer_norm_backward: grad shape mismatch");
    int n = g.dim(0), c = g.dim(1), h = g.dim(2), w = g.dim(3);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    LayerNormGrads grads;
    grads.gx = Tensor(g.shape());
    grads.ggamma = Tensor(Shape{c});
    grads.gbeta = Tensor(Shape{c});
    for (int ni = 0; ni < n; ++ni) {
        const double* gb = g.data() + g.offset4(ni, 0, 0, 0);
        const double* xb = xhat.data() + xhat.offset4(ni, 0, 0, 0);
        double* ob = grads.gx.data() + grads.gx.offset4(ni, 0, 0, 0);
        for (std::size_t p = 0; p < plane; ++p) {
            double inv = cache.inv_std[static_cast<std::size_t>(ni) * plane + p];
            double mean_gg = 0.0, mean_ggx = 0.0;
            for (int ci = 0; ci < c; ++ci) {
                double gg = gamma[static_cast<std::size_t>(ci)] * gb[ci * plane + p];
                mean_gg += gg;
                mean_ggx += gg * xb[ci * plane + p];
            }
            mean_gg /= c;
            mean_ggx /= c;
            for (int ci = 0; ci < c; ++ci) {
                double gg = gamma[static_cast<std::size_t>(ci)] * gb[ci * plane + p];
                double xh = xb[ci * plane + p];
                ob[ci * plane + p] = (gg - mean_gg - xh * mean_ggx) * inv;
                grads.ggamma[static_cast<std::size_t>(ci)] += gb[ci * plane + p] * xh;
                grads.gbeta[static_cast<std::size_t>(ci)] += gb[ci * plane + p];
            }
        }
    }
    return grads;
}

// ---- worker pool ----

int worker_threads() {
    static int cached = [] {
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw < 1) hw = 1;
        if (const char* env = std::getenv("QUADRANET_THREADS")) {
            int cap = std::atoi(env);
            if (cap >= 1) hw = std::min(hw, cap);
        }
        return hw;
    }();
    return cached;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    int workers = worker_threads();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    int use = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), n));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(use));
    for (int t = 0; t < use; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t i = static_cast<std::size_t>(t); i < n; i += static_cast<std::size_t>(use)) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace quadranet
