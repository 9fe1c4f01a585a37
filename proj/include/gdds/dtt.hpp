#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "gdds/volume.hpp"

namespace gdds {

/// Channel enumeration inside each n*n*n cube: c = dz*n^2 + dy*n + dx.
/// Stored in checkpoints; a checkpoint with a different tag is refused.
inline constexpr std::string_view kDttChannelOrdering = "c=dz*n^2+dy*n+dx";

enum class DttRole { Label, Prediction };

/// n^3 x h x w x l grid produced by the n-fold dense topological transform.
/// Channel-major storage: ((c*h + a)*w + b)*l + d.
template <class T>
struct DenseTopologyTensor {
    int n = 1;
    DttRole role = DttRole::Prediction;
    int64_t channels = 0;
    Shape3 spatial;
    std::vector<T> data;

    [[nodiscard]] int64_t index(int64_t c, int64_t a, int64_t b, int64_t d) const {
        return ((c * spatial.d + a) * spatial.h + b) * spatial.w + d;
    }
    T& operator()(int64_t c, int64_t a, int64_t b, int64_t d) { return data[index(c, a, b, d)]; }
    const T& operator()(int64_t c, int64_t a, int64_t b, int64_t d) const {
        return data[index(c, a, b, d)];
    }
};

/// Space-to-depth: rearrange each n*n*n cube into the channel fiber at its
/// block index. Every dimension must be divisible by n; no padding is applied.
template <class T>
DenseTopologyTensor<T> dtt_forward(const Grid3<T>& v, int n, DttRole role = DttRole::Prediction) {
    if (n < 1) throw Error("DTT factor must be a positive integer");
    const auto& s = v.shape();
    static constexpr const char* kAxis[] = {"z (H)", "y (W)", "x (L)"};
    for (int k = 0; k < 3; ++k) {
        if (s[k] % n != 0) {
            throw Error(std::string("DTT: axis ") + kAxis[k] + " of size " + std::to_string(s[k]) +
                        " is not divisible by n=" + std::to_string(n));
        }
    }
    DenseTopologyTensor<T> t;
    t.n = n;
    t.role = role;
    t.channels = static_cast<int64_t>(n) * n * n;
    t.spatial = {s.d / n, s.h / n, s.w / n};
    t.data.resize(static_cast<size_t>(v.size()));
    for (int64_t dz = 0; dz < n; ++dz)
        for (int64_t dy = 0; dy < n; ++dy)
            for (int64_t dx = 0; dx < n; ++dx) {
                const int64_t c = (dz * n + dy) * n + dx;
                for (int64_t a = 0; a < t.spatial.d; ++a)
                    for (int64_t b = 0; b < t.spatial.h; ++b) {
                        T* dst = &t.data[t.index(c, a, b, 0)];
                        const T* src = &v(a * n + dz, b * n + dy, dx);
                        for (int64_t d = 0; d < t.spatial.w; ++d) dst[d] = src[d * n];
                    }
            }
    return t;
}

/// Exact inverse of dtt_forward (depth-to-space).
template <class T>
Grid3<T> dtt_inverse(const DenseTopologyTensor<T>& t, int n, Spacing spacing = {}) {
    if (n < 1) throw Error("DTT factor must be a positive integer");
    if (t.n != n) {
        throw Error("DTT inverse: tensor built with n=" + std::to_string(t.n) + ", asked for n=" +
                    std::to_string(n));
    }
    const int64_t expected = static_cast<int64_t>(n) * n * n;
    if (t.channels != expected) {
        throw Error("DTT inverse: expected " + std::to_string(expected) + " channels, got " +
                    std::to_string(t.channels));
    }
    if (static_cast<int64_t>(t.data.size()) != t.channels * t.spatial.size()) {
        throw Error("DTT inverse: data size does not match shape");
    }
    Grid3<T> v(Shape3{t.spatial.d * n, t.spatial.h * n, t.spatial.w * n}, T{}, spacing);
    for (int64_t dz = 0; dz < n; ++dz)
        for (int64_t dy = 0; dy < n; ++dy)
            for (int64_t dx = 0; dx < n; ++dx) {
                const int64_t c = (dz * n + dy) * n + dx;
                for (int64_t a = 0; a < t.spatial.d; ++a)
                    for (int64_t b = 0; b < t.spatial.h; ++b) {
                        const T* src = &t.data[t.index(c, a, b, 0)];
                        T* dst = &v(a * n + dz, b * n + dy, dx);
                        for (int64_t d = 0; d < t.spatial.w; ++d) dst[d * n] = src[d];
                    }
            }
    return v;
}

/// Label transform y_n = DTT(y, n), with values widened to `T`.
template <class T>
DenseTopologyTensor<T> dtt_label(const LabelVolume& y, int n) {
    Grid3<T> wide(y.shape(), T{}, y.spacing());
    for (int64_t i = 0; i < y.size(); ++i) wide[i] = y[i] ? T{1} : T{0};
    return dtt_forward(wide, n, DttRole::Label);
}

}  // namespace gdds
