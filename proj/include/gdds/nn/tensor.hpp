#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gdds/volume.hpp"

namespace gdds::nn {

/// Feature map of one sample, channel-major [C][D][H][W].
struct Tensor {
    int64_t c = 0;
    Shape3 s;
    std::vector<float> v;

    Tensor() = default;
    Tensor(int64_t channels, Shape3 shape, float fill = 0.0f)
        : c(channels), s(shape), v(static_cast<size_t>(channels * shape.size()), fill) {}

    [[nodiscard]] int64_t voxels() const { return s.size(); }
    [[nodiscard]] int64_t numel() const { return c * s.size(); }
    float* channel(int64_t k) { return v.data() + k * s.size(); }
    [[nodiscard]] const float* channel(int64_t k) const { return v.data() + k * s.size(); }
    float& at(int64_t k, int64_t z, int64_t y, int64_t x) { return v[((k * s.d + z) * s.h + y) * s.w + x]; }
    [[nodiscard]] float at(int64_t k, int64_t z, int64_t y, int64_t x) const {
        return v[((k * s.d + z) * s.h + y) * s.w + x];
    }
};

/// Trainable weights with gradient and Adam moments.
struct Param {
    std::string name;
    std::vector<float> w, g, m, u;

    void resize(size_t n) {
        w.assign(n, 0.0f);
        g.assign(n, 0.0f);
        m.assign(n, 0.0f);
        u.assign(n, 0.0f);
    }
    [[nodiscard]] size_t size() const { return w.size(); }
};

/// Kaiming-uniform style fill, bound = sqrt(6 / fan_in) * gain.
void init_uniform(Param& p, int64_t fan_in, std::mt19937_64& rng, double gain = 1.0);

Tensor concat_channels(const Tensor& a, const Tensor& b);

}  // namespace gdds::nn
