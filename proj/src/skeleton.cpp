#include <algorithm>
#include <array>
#include <vector>

#include "gdds/topology.hpp"

namespace gdds {
namespace {

constexpr int kCentre = 13;

constexpr int cube_index(int dz, int dy, int dx) { return (dz + 1) * 9 + (dy + 1) * 3 + (dx + 1); }

struct NeighbourTables {
    // 26-adjacency inside the cube, centre excluded
    std::array<std::vector<int>, 27> adj26;
    // 6-adjacency restricted to the 18-neighbourhood, centre excluded
    std::array<std::vector<int>, 27> adj6;
    std::array<bool, 27> in18{};
    std::array<bool, 27> face{};

    NeighbourTables() {
        for (int a = 0; a < 27; ++a) {
            const int az = a / 9 - 1, ay = (a / 3) % 3 - 1, ax = a % 3 - 1;
            const int manhattan = std::abs(az) + std::abs(ay) + std::abs(ax);
            in18[a] = a != kCentre && manhattan <= 2;
            face[a] = manhattan == 1;
        }
        for (int a = 0; a < 27; ++a) {
            if (a == kCentre) continue;
            const int az = a / 9 - 1, ay = (a / 3) % 3 - 1, ax = a % 3 - 1;
            for (int b = 0; b < 27; ++b) {
                if (b == kCentre || b == a) continue;
                const int bz = b / 9 - 1, by = (b / 3) % 3 - 1, bx = b % 3 - 1;
                const int dz = std::abs(az - bz), dy = std::abs(ay - by), dx = std::abs(ax - bx);
                if (dz <= 1 && dy <= 1 && dx <= 1) adj26[a].push_back(b);
                if (dz + dy + dx == 1 && in18[a] && in18[b]) adj6[a].push_back(b);
            }
        }
    }
};

const NeighbourTables& tables() {
    static const NeighbourTables t;
    return t;
}

}  // namespace

bool is_simple_point(const std::array<bool, 27>& cube) {
    const auto& t = tables();
    std::array<int, 27> stack{};
    // foreground: exactly one 26-component in N26*
    {
        std::array<bool, 27> seen{};
        int components = 0;
        for (int s = 0; s < 27; ++s) {
            if (s == kCentre || !cube[s] || seen[s]) continue;
            if (++components > 1) return false;
            int top = 0;
            stack[top++] = s;
            seen[s] = true;
            while (top > 0) {
                const int a = stack[--top];
                for (int b : t.adj26[a]) {
                    if (cube[b] && !seen[b]) {
                        seen[b] = true;
                        stack[top++] = b;
                    }
                }
            }
        }
        if (components != 1) return false;
    }
    // background: exactly one 6-component in N18* that touches a face neighbour
    {
        std::array<bool, 27> seen{};
        int components = 0;
        for (int s = 0; s < 27; ++s) {
            if (!t.face[s] || cube[s] || seen[s]) continue;
            if (++components > 1) return false;
            int top = 0;
            stack[top++] = s;
            seen[s] = true;
            while (top > 0) {
                const int a = stack[--top];
                for (int b : t.adj6[a]) {
                    if (!cube[b] && !seen[b]) {
                        seen[b] = true;
                        stack[top++] = b;
                    }
                }
            }
        }
        return components == 1;
    }
}

LabelVolume Skeleton::to_mask() const {
    LabelVolume m(shape, 0);
    for (const auto& v : voxels) m(v[0], v[1], v[2]) = 1;
    return m;
}

Skeleton skeletonize(const LabelVolume& mask) {
    const auto& s = mask.shape();
    // one voxel of background padding removes every bounds check
    const int64_t D = s.d + 2, H = s.h + 2, W = s.w + 2;
    std::vector<uint8_t> img(static_cast<size_t>(D * H * W), 0);
    auto off = [&](int64_t z, int64_t y, int64_t x) { return (z * H + y) * W + x; };

    // Thinning is released one distance shell at a time, shallow voxels first.
    // Without this the flat end of a thick tube collapses into a plate whose
    // rim keeps eroding, and short blunt branches disappear.
    const auto dist = distance_transform(mask);
    std::vector<std::pair<float, int64_t>> order;
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t x = 0; x < s.w; ++x)
                if (mask(z, y, x)) {
                    img[off(z + 1, y + 1, x + 1)] = 1;
                    order.emplace_back(dist(z, y, x), off(z + 1, y + 1, x + 1));
                }
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& l, const auto& r) { return l.first < r.first; });

    std::array<int64_t, 27> nb{};
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) nb[cube_index(dz, dy, dx)] = (dz * H + dy) * W + dx;
    const std::array<int, 6> directions = {cube_index(-1, 0, 0), cube_index(1, 0, 0),
                                           cube_index(0, -1, 0), cube_index(0, 1, 0),
                                           cube_index(0, 0, -1), cube_index(0, 0, 1)};

    auto neighbourhood = [&](int64_t p, std::array<bool, 27>& cube) {
        int count = 0;
        for (int k = 0; k < 27; ++k) {
            cube[k] = img[p + nb[k]] != 0;
            if (k != kCentre && cube[k]) ++count;
        }
        return count;
    };

    std::array<bool, 27> cube{};
    std::vector<int64_t> active, candidates;
    size_t next = 0;
    while (next < order.size()) {
        const float level = order[next].first;
        while (next < order.size() && order[next].first <= level) active.push_back(order[next++].second);
        bool changed = true;
        while (changed) {
            changed = false;
            for (int dir : directions) {
                candidates.clear();
                for (int64_t p : active) {
                    if (!img[p] || img[p + nb[dir]]) continue;
                    if (neighbourhood(p, cube) == 1) continue;  // endpoint
                    if (is_simple_point(cube)) candidates.push_back(p);
                }
                for (int64_t p : candidates) {
                    // Skip voxels next to one removed in this sub-iteration; otherwise a
                    // strip two voxels wide unzips along its whole length in one sweep.
                    bool touched = false;
                    for (int k = 0; k < 27 && !touched; ++k) touched = img[p + nb[k]] == 2;
                    if (touched) continue;
                    if (neighbourhood(p, cube) == 1) continue;
                    if (!is_simple_point(cube)) continue;
                    img[p] = 2;
                    changed = true;
                }
                for (int64_t p : candidates)
                    if (img[p] == 2) img[p] = 0;
            }
            std::erase_if(active, [&](int64_t p) { return img[p] == 0; });
        }
    }

    Skeleton sk;
    sk.shape = s;
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t x = 0; x < s.w; ++x)
                if (img[off(z + 1, y + 1, x + 1)]) sk.voxels.push_back({z, y, x});
    return sk;
}

}  // namespace gdds
