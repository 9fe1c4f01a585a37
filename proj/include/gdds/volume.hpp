#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gdds {

/// Base exception for every recoverable failure in the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Grid extent in canonical axis order (z: superior->inferior,
/// y: anterior->posterior, x: left->right).
struct Shape3 {
    int64_t d = 0;
    int64_t h = 0;
    int64_t w = 0;

    [[nodiscard]] int64_t size() const { return d * h * w; }
    [[nodiscard]] bool contains(int64_t z, int64_t y, int64_t x) const {
        return z >= 0 && y >= 0 && x >= 0 && z < d && y < h && x < w;
    }
    [[nodiscard]] int64_t operator[](int axis) const { return axis == 0 ? d : axis == 1 ? h : w; }
    friend bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& s);

using Index3 = std::array<int64_t, 3>;

/// Millimetres per voxel along (z, y, x).
struct Spacing {
    double z = 1.0;
    double y = 1.0;
    double x = 1.0;
    friend bool operator==(const Spacing&, const Spacing&) = default;
};

/// Dense 3D grid stored x-fastest. The only orientation ever held in memory
/// is the canonical one; readers reorient on load.
template <class T>
class Grid3 {
public:
    using value_type = T;

    Grid3() = default;
    explicit Grid3(Shape3 shape, T fill = T{}, Spacing spacing = {})
        : shape_(shape), spacing_(spacing) {
        if (shape.d < 1 || shape.h < 1 || shape.w < 1) {
            throw Error("grid dimensions must be >= 1, got " + to_string(shape));
        }
        if (spacing.z <= 0 || spacing.y <= 0 || spacing.x <= 0) {
            throw Error("voxel spacing must be positive");
        }
        data_.assign(static_cast<size_t>(shape.size()), fill);
    }

    [[nodiscard]] const Shape3& shape() const { return shape_; }
    [[nodiscard]] const Spacing& spacing() const { return spacing_; }
    void set_spacing(Spacing s) { spacing_ = s; }
    [[nodiscard]] int64_t size() const { return shape_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    [[nodiscard]] int64_t offset(int64_t z, int64_t y, int64_t x) const {
        return (z * shape_.h + y) * shape_.w + x;
    }
    [[nodiscard]] Index3 unravel(int64_t i) const {
        return {i / (shape_.h * shape_.w), (i / shape_.w) % shape_.h, i % shape_.w};
    }

    T& operator()(int64_t z, int64_t y, int64_t x) { return data_[offset(z, y, x)]; }
    const T& operator()(int64_t z, int64_t y, int64_t x) const { return data_[offset(z, y, x)]; }
    T& operator[](int64_t i) { return data_[i]; }
    const T& operator[](int64_t i) const { return data_[i]; }

    [[nodiscard]] std::vector<T>& data() { return data_; }
    [[nodiscard]] const std::vector<T>& data() const { return data_; }

    friend bool operator==(const Grid3&, const Grid3&) = default;

private:
    Shape3 shape_;
    Spacing spacing_;
    std::vector<T> data_;
};

/// Image intensities: Hounsfield units before preprocessing, [0,1] after.
using Volume = Grid3<float>;
/// Binary mask, values in {0,1}.
using LabelVolume = Grid3<uint8_t>;
/// Probability map in [0,1].
using ProbabilityVolume = Grid3<float>;

int64_t count_foreground(const LabelVolume& y);

/// Seed scrambler used to derive independent RNG streams from one seed.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Sub-grid copy [origin, origin + extent).
template <class T>
Grid3<T> crop(const Grid3<T>& g, Index3 origin, Shape3 extent) {
    if (!g.shape().contains(origin[0], origin[1], origin[2]) ||
        origin[0] + extent.d > g.shape().d || origin[1] + extent.h > g.shape().h ||
        origin[2] + extent.w > g.shape().w) {
        throw Error("crop window exceeds grid bounds");
    }
    Grid3<T> out(extent, T{}, g.spacing());
    for (int64_t z = 0; z < extent.d; ++z)
        for (int64_t y = 0; y < extent.h; ++y)
            for (int64_t x = 0; x < extent.w; ++x)
                out(z, y, x) = g(origin[0] + z, origin[1] + y, origin[2] + x);
    return out;
}

}  // namespace gdds
