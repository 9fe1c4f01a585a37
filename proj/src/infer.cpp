#include <algorithm>
#include <numeric>
#include <random>

#include "gdds/patches.hpp"
#include "gdds/pipeline.hpp"

namespace gdds {

Volume sliding_window_infer(const Predictor& predict, const Volume& v, int64_t patch, const InferOptions& opts,
                            std::string* warning) {
    if (!(opts.overlap >= 0.0 && opts.overlap < 1.0)) throw Error("overlap must lie in [0, 1)");
    if (patch < 1) throw Error("patch size must be positive");
    const Shape3 orig = v.shape();
    const Shape3 padded{std::max(orig.d, patch), std::max(orig.h, patch), std::max(orig.w, patch)};
    const Volume* src = &v;
    Volume pad;
    if (!(padded == orig)) {
        if (warning) {
            *warning = "volume " + to_string(orig) + " is smaller than the patch (" + std::to_string(patch) +
                       "); padding with zeros and cropping back";
        }
        pad = Volume(padded, 0.0f, v.spacing());
        for (int64_t z = 0; z < orig.d; ++z)
            for (int64_t y = 0; y < orig.h; ++y)
                for (int64_t x = 0; x < orig.w; ++x) pad(z, y, x) = v(z, y, x);
        src = &pad;
    }

    const auto stride = std::max<int64_t>(1, static_cast<int64_t>(std::llround(static_cast<double>(patch) * (1.0 - opts.overlap))));
    const auto zs = window_starts(padded.d, patch, stride);
    const auto ys = window_starts(padded.h, patch, stride);
    const auto xs = window_starts(padded.w, patch, stride);
    std::vector<Index3> windows;
    for (auto z : zs)
        for (auto y : ys)
            for (auto x : xs) windows.push_back({z, y, x});
    if (opts.shuffle_seed) {
        std::mt19937_64 rng(*opts.shuffle_seed);
        std::shuffle(windows.begin(), windows.end(), rng);
    }

    // double accumulation keeps the average independent of visiting order
    Grid3<double> sum(padded, 0.0);
    Grid3<int32_t> count(padded, 0);
    const Shape3 ps{patch, patch, patch};
    for (const auto& o : windows) {
        Volume tile = crop(*src, o, ps);
        const Volume p = predict(tile);
        if (!(p.shape() == ps)) throw Error("predictor returned " + to_string(p.shape()) + " for a " + to_string(ps) + " tile");
        for (int64_t z = 0; z < patch; ++z)
            for (int64_t y = 0; y < patch; ++y)
                for (int64_t x = 0; x < patch; ++x) {
                    sum(o[0] + z, o[1] + y, o[2] + x) += p(z, y, x);
                    count(o[0] + z, o[1] + y, o[2] + x) += 1;
                }
    }
    Volume out(orig, 0.0f, v.spacing());
    for (int64_t z = 0; z < orig.d; ++z)
        for (int64_t y = 0; y < orig.h; ++y)
            for (int64_t x = 0; x < orig.w; ++x)
                out(z, y, x) = static_cast<float>(sum(z, y, x) / count(z, y, x));
    return out;
}

Volume sliding_window_infer(const GddsNet& net, const Volume& v, int64_t patch, const InferOptions& opts,
                            std::string* warning) {
    return sliding_window_infer([&](const Volume& tile) { return net.forward(tile).p_de; }, v, patch, opts, warning);
}

LabelVolume binarize(const Volume& p, double threshold) {
    LabelVolume m(p.shape(), 0, p.spacing());
    for (int64_t i = 0; i < p.size(); ++i) m[i] = p[i] >= threshold ? 1 : 0;
    return m;
}

LabelVolume merge_generation_outputs(const LabelVolume& low, const LabelVolume& high) {
    if (!(low.shape() == high.shape())) {
        throw Error("merge: shapes differ (" + to_string(low.shape()) + " vs " + to_string(high.shape()) + ")");
    }
    LabelVolume m(low.shape(), 0, low.spacing());
    for (int64_t i = 0; i < low.size(); ++i) m[i] = (low[i] || high[i]) ? 1 : 0;
    return m;
}

}  // namespace gdds
