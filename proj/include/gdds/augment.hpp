#pragma once

#include <array>
#include <cstdint>

#include "gdds/patches.hpp"

namespace gdds {

struct AugmentOptions {
    bool flip = true;
    bool rotate = true;
    bool contrast = true;
    double flip_probability = 0.5;      // per axis
    double rotate_probability = 0.5;
    double max_rotation_deg = 15.0;     // angle ~ U(-max, max)
    double contrast_probability = 0.5;
    double gamma_low = 0.7;
    double gamma_high = 1.3;
};

/// Concrete random draws for one augmentation call.
struct AugmentDraws {
    std::array<bool, 3> flip{};
    bool rotate = false;
    int rotation_axis = 0;  // rotation happens in the plane orthogonal to this axis
    double angle_deg = 0.0;
    bool contrast = false;
    double gamma = 1.0;

    [[nodiscard]] bool is_identity() const;
};

AugmentDraws draw_augmentation(uint64_t seed, const AugmentOptions& opts = {});

/// Flips and rotation act on image and label alike; gamma only on the image.
/// Interpolated labels are re-binarized at 0.5.
Patch apply_augmentation(const Patch& p, const AugmentDraws& draws);

Patch augment(const Patch& p, uint64_t seed, const AugmentOptions& opts = {});

/// In-plane rotation about the cube centre with trilinear interpolation and
/// edge clamping. Exposed for round-trip testing.
Patch rotate_patch(const Patch& p, int axis, double angle_deg);

}  // namespace gdds
