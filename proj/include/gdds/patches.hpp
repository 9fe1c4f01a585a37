#pragma once

#include <cstdint>
#include <vector>

#include "gdds/volume.hpp"

namespace gdds {

/// Cubic training sample cut from a (Volume, LabelVolume) pair.
struct Patch {
    Volume image;
    LabelVolume label;
    Index3 origin{};
    int64_t size = 0;
};

/// Window start positions along one axis: 0, stride, 2*stride, ... with the
/// last window clamped so that it ends exactly at `extent`.
std::vector<int64_t> window_starts(int64_t extent, int64_t size, int64_t stride);

/// Raster-order sliding-window sampling. Patches whose label is empty survive
/// with probability `keep_background`, drawn from `seed`.
std::vector<Patch> sample_patches(const Volume& v, const LabelVolume& y, int64_t size,
                                  int64_t stride, double keep_background, uint64_t seed = 0);

}  // namespace gdds
