#include "gdds/preprocess.hpp"

#include <algorithm>

namespace gdds {

Volume preprocess(const Volume& v, HuWindow window) {
    if (!(window.low < window.high)) {
        throw Error("degenerate HU window: low must be below high");
    }
    Volume out = v;
    const double span = window.high - window.low;
    for (auto& val : out.data()) {
        const double c = std::clamp(static_cast<double>(val), window.low, window.high);
        val = static_cast<float>((c - window.low) / span);
    }
    return out;
}

Volume apply_lung_mask(const Volume& v, const LabelVolume& lung) {
    if (!(v.shape() == lung.shape())) throw Error("lung mask shape mismatch");
    Volume out = v;
    for (int64_t i = 0; i < out.size(); ++i) {
        if (lung[i] == 0) out[i] = 0.0f;
    }
    return out;
}

}  // namespace gdds
