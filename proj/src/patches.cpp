#include "gdds/patches.hpp"

#include <algorithm>
#include <random>

namespace gdds {

std::vector<int64_t> window_starts(int64_t extent, int64_t size, int64_t stride) {
    if (size > extent) {
        throw Error("patch size " + std::to_string(size) + " exceeds volume extent " +
                    std::to_string(extent));
    }
    if (stride < 1 || stride > size) throw Error("stride must lie in [1, patch size]");
    std::vector<int64_t> starts;
    for (int64_t s = 0;; s += stride) {
        if (s + size >= extent) {
            starts.push_back(extent - size);
            break;
        }
        starts.push_back(s);
    }
    starts.erase(std::unique(starts.begin(), starts.end()), starts.end());
    return starts;
}

std::vector<Patch> sample_patches(const Volume& v, const LabelVolume& y, int64_t size,
                                  int64_t stride, double keep_background, uint64_t seed) {
    if (!(v.shape() == y.shape())) throw Error("image/label shape mismatch");
    if (size < 1) throw Error("patch size must be positive");
    const auto zs = window_starts(v.shape().d, size, stride);
    const auto ys = window_starts(v.shape().h, size, stride);
    const auto xs = window_starts(v.shape().w, size, stride);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const Shape3 extent{size, size, size};
    std::vector<Patch> out;
    for (int64_t z : zs)
        for (int64_t yy : ys)
            for (int64_t x : xs) {
                Patch p;
                p.origin = {z, yy, x};
                p.size = size;
                p.label = crop(y, p.origin, extent);
                // one draw per window keeps the stream independent of content
                const double draw = coin(rng);
                if (count_foreground(p.label) == 0 && !(draw < keep_background)) continue;
                p.image = crop(v, p.origin, extent);
                out.push_back(std::move(p));
            }
    return out;
}

}  // namespace gdds
