#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "gdds/topology.hpp"

namespace gdds {
namespace {

// Component id per voxel (-1 background) and sizes, discovered in raster order.
std::vector<int64_t> label_components(const LabelVolume& mask, std::vector<int32_t>& comp) {
    const auto& s = mask.shape();
    comp.assign(static_cast<size_t>(mask.size()), -1);
    std::vector<int64_t> sizes;
    std::vector<int64_t> stack;
    for (int64_t start = 0; start < mask.size(); ++start) {
        if (mask[start] == 0 || comp[start] >= 0) continue;
        const auto id = static_cast<int32_t>(sizes.size());
        int64_t count = 0;
        comp[start] = id;
        stack.push_back(start);
        while (!stack.empty()) {
            const int64_t cur = stack.back();
            stack.pop_back();
            ++count;
            const auto [z, y, x] = mask.unravel(cur);
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int64_t nz = z + dz, ny = y + dy, nx = x + dx;
                        if (!s.contains(nz, ny, nx)) continue;
                        const int64_t o = mask.offset(nz, ny, nx);
                        if (mask[o] && comp[o] < 0) {
                            comp[o] = id;
                            stack.push_back(o);
                        }
                    }
        }
        sizes.push_back(count);
    }
    return sizes;
}

// 1D squared distance transform (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
            std::vector<double>& zb) {
    const int n = static_cast<int>(f.size());
    constexpr double inf = std::numeric_limits<double>::infinity();
    int k = 0;
    v[0] = 0;
    zb[0] = -inf;
    zb[1] = inf;
    for (int q = 1; q < n; ++q) {
        if (f[q] == inf) continue;
        while (true) {
            if (f[v[k]] == inf) {
                v[k] = q;
                zb[k] = -inf;
                zb[k + 1] = inf;
                break;
            }
            const double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
            if (s <= zb[k]) {
                if (k == 0) {
                    v[0] = q;
                    zb[0] = -inf;
                    zb[1] = inf;
                    break;
                }
                --k;
                continue;
            }
            ++k;
            v[k] = q;
            zb[k] = s;
            zb[k + 1] = inf;
            break;
        }
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (zb[k + 1] < q) ++k;
        const double diff = q - v[k];
        d[q] = f[v[k]] == inf ? inf : diff * diff + f[v[k]];
    }
}

}  // namespace

LabelVolume largest_component(const LabelVolume& mask, bool* was_empty) {
    std::vector<int32_t> comp;
    const auto sizes = label_components(mask, comp);
    LabelVolume out(mask.shape(), 0, mask.spacing());
    if (was_empty) *was_empty = sizes.empty();
    if (sizes.empty()) return out;
    const auto best = static_cast<int32_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    for (int64_t i = 0; i < mask.size(); ++i) out[i] = comp[i] == best ? 1 : 0;
    return out;
}

int count_components(const LabelVolume& mask) {
    std::vector<int32_t> comp;
    return static_cast<int>(label_components(mask, comp).size());
}

Grid3<float> distance_transform(const LabelVolume& mask) {
    const auto& s = mask.shape();
    constexpr double inf = std::numeric_limits<double>::infinity();
    // padded by one background voxel on every side
    const int64_t D = s.d + 2, H = s.h + 2, W = s.w + 2;
    std::vector<double> g(static_cast<size_t>(D * H * W), 0.0);
    auto at = [&](int64_t z, int64_t y, int64_t x) -> double& { return g[(z * H + y) * W + x]; };
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t x = 0; x < s.w; ++x) at(z + 1, y + 1, x + 1) = mask(z, y, x) ? inf : 0.0;

    const int64_t longest = std::max({D, H, W});
    std::vector<double> f(longest), d(longest), zb(longest + 1);
    std::vector<int> v(longest);
    auto pass = [&](int64_t n, auto&& get) {
        f.resize(n);
        d.resize(n);
        for (int64_t i = 0; i < n; ++i) f[i] = get(i);
        edt_1d(f, d, v, zb);
        for (int64_t i = 0; i < n; ++i) get(i) = d[i];
        f.resize(longest);
        d.resize(longest);
    };
    for (int64_t z = 0; z < D; ++z)
        for (int64_t y = 0; y < H; ++y) pass(W, [&](int64_t i) -> double& { return at(z, y, i); });
    for (int64_t z = 0; z < D; ++z)
        for (int64_t x = 0; x < W; ++x) pass(H, [&](int64_t i) -> double& { return at(z, i, x); });
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) pass(D, [&](int64_t i) -> double& { return at(i, y, x); });

    Grid3<float> out(s, 0.0f, mask.spacing());
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t x = 0; x < s.w; ++x)
                out(z, y, x) = static_cast<float>(std::sqrt(at(z + 1, y + 1, x + 1)));
    return out;
}

}  // namespace gdds
