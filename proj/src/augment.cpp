#include "gdds/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace gdds {
namespace {

template <class T>
Grid3<T> flip_axes(const Grid3<T>& g, const std::array<bool, 3>& flip) {
    Grid3<T> out = g;
    const auto& s = g.shape();
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t x = 0; x < s.w; ++x) {
                out(flip[0] ? s.d - 1 - z : z, flip[1] ? s.h - 1 - y : y,
                    flip[2] ? s.w - 1 - x : x) = g(z, y, x);
            }
    return out;
}

double sample_trilinear(const Volume& g, double z, double y, double x) {
    const auto& s = g.shape();
    z = std::clamp(z, 0.0, static_cast<double>(s.d - 1));
    y = std::clamp(y, 0.0, static_cast<double>(s.h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(s.w - 1));
    const auto z0 = static_cast<int64_t>(std::floor(z));
    const auto y0 = static_cast<int64_t>(std::floor(y));
    const auto x0 = static_cast<int64_t>(std::floor(x));
    const int64_t z1 = std::min(z0 + 1, s.d - 1);
    const int64_t y1 = std::min(y0 + 1, s.h - 1);
    const int64_t x1 = std::min(x0 + 1, s.w - 1);
    const double fz = z - z0, fy = y - y0, fx = x - x0;
    auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
    const double c00 = lerp(g(z0, y0, x0), g(z0, y0, x1), fx);
    const double c01 = lerp(g(z0, y1, x0), g(z0, y1, x1), fx);
    const double c10 = lerp(g(z1, y0, x0), g(z1, y0, x1), fx);
    const double c11 = lerp(g(z1, y1, x0), g(z1, y1, x1), fx);
    return lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz);
}

Volume rotate_volume(const Volume& g, int axis, double angle_deg) {
    const double a = angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(a), s = std::sin(a);
    // the two axes spanning the rotation plane
    const int u = axis == 0 ? 1 : 0;
    const int v = axis == 2 ? 1 : 2;
    const auto& sh = g.shape();
    const std::array<double, 3> centre = {(sh.d - 1) / 2.0, (sh.h - 1) / 2.0, (sh.w - 1) / 2.0};
    Volume out(sh, 0.0f, g.spacing());
    for (int64_t z = 0; z < sh.d; ++z)
        for (int64_t y = 0; y < sh.h; ++y)
            for (int64_t x = 0; x < sh.w; ++x) {
                std::array<double, 3> p = {static_cast<double>(z), static_cast<double>(y),
                                           static_cast<double>(x)};
                const double du = p[u] - centre[u];
                const double dv = p[v] - centre[v];
                // inverse mapping: output voxel pulls from the source rotated by -angle
                p[u] = centre[u] + c * du + s * dv;
                p[v] = centre[v] - s * du + c * dv;
                out(z, y, x) = static_cast<float>(sample_trilinear(g, p[0], p[1], p[2]));
            }
    return out;
}

}  // namespace

bool AugmentDraws::is_identity() const {
    return !flip[0] && !flip[1] && !flip[2] && (!rotate || angle_deg == 0.0) &&
           (!contrast || gamma == 1.0);
}

AugmentDraws draw_augmentation(uint64_t seed, const AugmentOptions& opts) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    AugmentDraws d;
    // every draw is consumed regardless of toggles so streams stay aligned
    for (int k = 0; k < 3; ++k) {
        const double r = unit(rng);
        d.flip[k] = opts.flip && r < opts.flip_probability;
    }
    const double rot = unit(rng);
    const double axis_draw = unit(rng);
    const double angle_draw = unit(rng);
    d.rotate = opts.rotate && rot < opts.rotate_probability;
    d.rotation_axis = std::min(2, static_cast<int>(axis_draw * 3.0));
    d.angle_deg = d.rotate ? (2.0 * angle_draw - 1.0) * opts.max_rotation_deg : 0.0;
    const double con = unit(rng);
    const double gamma_draw = unit(rng);
    d.contrast = opts.contrast && con < opts.contrast_probability;
    d.gamma = d.contrast ? opts.gamma_low + gamma_draw * (opts.gamma_high - opts.gamma_low) : 1.0;
    return d;
}

Patch rotate_patch(const Patch& p, int axis, double angle_deg) {
    if (axis < 0 || axis > 2) throw Error("rotation axis must be 0, 1 or 2");
    Patch out = p;
    out.image = rotate_volume(p.image, axis, angle_deg);
    Volume soft(p.label.shape(), 0.0f, p.label.spacing());
    for (int64_t i = 0; i < soft.size(); ++i) soft[i] = p.label[i];
    soft = rotate_volume(soft, axis, angle_deg);
    for (int64_t i = 0; i < soft.size(); ++i) out.label[i] = soft[i] >= 0.5f ? 1 : 0;
    return out;
}

Patch apply_augmentation(const Patch& p, const AugmentDraws& d) {
    const auto& s = p.image.shape();
    if (s.size() == 0 || !(s == p.label.shape())) return p;
    Patch out = p;
    if (d.flip[0] || d.flip[1] || d.flip[2]) {
        out.image = flip_axes(out.image, d.flip);
        out.label = flip_axes(out.label, d.flip);
    }
    if (d.rotate && d.angle_deg != 0.0 && s.d == s.h && s.h == s.w) {
        out = rotate_patch(out, d.rotation_axis, d.angle_deg);
    }
    if (d.contrast && d.gamma != 1.0) {
        for (auto& v : out.image.data()) {
            if (v > 0.0f) v = static_cast<float>(std::pow(static_cast<double>(v), d.gamma));
        }
    }
    return out;
}

Patch augment(const Patch& p, uint64_t seed, const AugmentOptions& opts) {
    return apply_augmentation(p, draw_augmentation(seed, opts));
}

}  // namespace gdds
