#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gdds/nn/tensor.hpp"

namespace gdds::nn {

/// 3D convolution, kernel 1 or 3 (zero padding keeps the spatial size).
/// Weights are laid out [cout][cin][kz][ky][kx].
class Conv3d {
public:
    Conv3d() = default;
    Conv3d(std::string name, int64_t cin, int64_t cout, int kernel, bool bias);

    void init(std::mt19937_64& rng, double gain = 1.0);
    [[nodiscard]] Tensor forward(const Tensor& x) const;
    /// Accumulates parameter gradients; writes dL/dx when `dx` is given.
    void backward(const Tensor& x, const Tensor& dy, Tensor* dx);

    void collect(std::vector<Param*>& out);
    void collect(std::vector<const Param*>& out) const;

    int64_t cin = 0, cout = 0;
    int kernel = 3;
    bool has_bias = true;
    Param weight, bias;
};

/// Per-channel normalization over the spatial extent of one sample, with
/// learned scale and shift.
class InstanceNorm {
public:
    struct Cache {
        std::vector<float> mean, rstd;
    };

    InstanceNorm() = default;
    InstanceNorm(std::string name, int64_t channels);

    [[nodiscard]] Tensor forward(const Tensor& x, Cache& cache) const;
    void backward(const Tensor& x, const Cache& cache, const Tensor& dy, Tensor& dx);

    void collect(std::vector<Param*>& out);
    void collect(std::vector<const Param*>& out) const;

    int64_t channels = 0;
    float eps = 1e-5f;
    Param gamma, beta;
};

constexpr float kLeakySlope = 0.01f;

void leaky_relu_inplace(Tensor& t, float slope = kLeakySlope);
/// Uses the activation output: the sign is unchanged by a positive slope.
void leaky_relu_backward_inplace(const Tensor& y, Tensor& dy, float slope = kLeakySlope);
void relu_inplace(Tensor& t);
void relu_backward_inplace(const Tensor& y, Tensor& dy);

/// 2x2x2 max pooling with stride 2. `argmax` records the winning input offset.
Tensor max_pool2(const Tensor& x, std::vector<int32_t>& argmax);
Tensor max_pool2_backward(const Tensor& dy, const std::vector<int32_t>& argmax, Shape3 in_shape);

/// Transposed convolution, kernel 2, stride 2 (exact 2x upsampling).
/// Weights are laid out [cin][cout][kz][ky][kx].
class ConvTranspose2 {
public:
    ConvTranspose2() = default;
    ConvTranspose2(std::string name, int64_t cin, int64_t cout);

    void init(std::mt19937_64& rng);
    [[nodiscard]] Tensor forward(const Tensor& x) const;
    void backward(const Tensor& x, const Tensor& dy, Tensor* dx);

    void collect(std::vector<Param*>& out);
    void collect(std::vector<const Param*>& out) const;

    int64_t cin = 0, cout = 0;
    Param weight, bias;
};

/// Trilinear upsampling by an integer factor, half-pixel centres
/// (align_corners = false), edge clamped. Single channel.
void upsample_trilinear(const float* in, Shape3 in_shape, int factor, float* out);
void upsample_trilinear_backward(const float* dout, Shape3 in_shape, int factor, float* din);

inline float sigmoid(float z) { return 1.0f / (1.0f + std::exp(-z)); }

}  // namespace gdds::nn
