#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace quadranet {

using Shape = std::vector<int>;

std::size_t shape_elements(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major f64 tensor. Feature maps use (N, C, H, W).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor full(Shape shape, double value);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    const Shape& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // rank-4 (N,C,H,W) accessors
    std::size_t offset4(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w;
    }
    double& at4(int n, int c, int h, int w) { return data_[offset4(n, c, h, w)]; }
    double at4(int n, int c, int h, int w) const { return data_[offset4(n, c, h, w)]; }

    // rank-2 (rows, cols) accessors
    double& at2(int i, int j) { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }
    double at2(int i, int j) const { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Deterministic RNG: std::mt19937_64 engine (sequence pinned by the standard)
// with hand-rolled distributions, since std distributions are not.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    std::uint64_t next_u64() { return engine_(); }
    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);   // [lo, hi)
    double normal();                        // Box-Muller
    int uniform_int(int n);                 // [0, n)

private:
    std::mt19937_64 engine_;
    bool have_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

// ---- elementwise ops & reductions (pure; inputs never mutated) ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double alpha);
double sum(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

Tensor gelu(const Tensor& x);
// dL/dx given upstream grad g, for the tanh-approximation gelu.
Tensor gelu_input_grad(const Tensor& x, const Tensor& g);

// softmax over the last dimension, max-subtracted for stability
Tensor softmax_lastdim(const Tensor& x);

// ---- convolution ----

struct ConvKernel {
    Tensor weights;               // (C_out, C_in_per_group, k, k)
    std::optional<Tensor> bias;   // (C_out)
    int groups = 1;
    int stride = 1;
    int padding = 0;

    int out_channels() const { return weights.dim(0); }
    int in_channels_per_group() const { return weights.dim(1); }
    int in_channels() const { return weights.dim(1) * groups; }
    int ksize() const { return weights.dim(2); }
    bool depthwise(int input_channels) const {
        return groups == input_channels && groups == out_channels() && in_channels_per_group() == 1;
    }
    void validate(int input_channels) const;
};

Tensor conv2d(const Tensor& x, const ConvKernel& kernel);

// raw forms used by the autograd tape (weights live as tape values)
Tensor conv2d_raw(const Tensor& x, const Tensor& w, const Tensor* bias,
                  int groups, int stride, int padding);
Tensor conv2d_input_grad(const Tensor& gout, const Tensor& w, const Shape& xshape,
                         int groups, int stride, int padding);
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gout, const Shape& wshape,
                          int groups, int stride, int padding);
Tensor conv2d_bias_grad(const Tensor& gout);

// ---- layer normalization over the channel dim, per (n,h,w) position ----

struct LayerNormCache {
    Tensor xhat;      // normalized input, same shape as x
    Tensor inv_std;   // (N, H, W) flattened as N*H*W
};
struct LayerNormGrads {
    Tensor gx, ggamma, gbeta;
};

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor layer_norm_fwd(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                      LayerNormCache* cache);
LayerNormGrads layer_norm_backward(const Tensor& g, const LayerNormCache& cache,
                                   const Tensor& gamma);

// ---- worker pool ----

// Number of worker threads: min(hardware, QUADRANET_THREADS if set).
int worker_threads();
// Runs fn(i) for i in [0, n); deterministic (each index handled exactly once,
// disjoint writes are the caller's contract). Sequential when 1 worker.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

[[noreturn]] void fail(const std::string& message);

}  // namespace quadranet
