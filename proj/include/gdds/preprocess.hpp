#pragma once

#include <optional>

#include "gdds/volume.hpp"

namespace gdds {

/// Intensity truncation window in Hounsfield units.
struct HuWindow {
    double low = -1000.0;
    double high = 600.0;
};

/// Clip to [low, high] then map linearly onto [0, 1].
Volume preprocess(const Volume& v, HuWindow window = {});

/// Zero every voxel outside `lung` (a precomputed lung mask of the same shape).
Volume apply_lung_mask(const Volume& v, const LabelVolume& lung);

}  // namespace gdds
