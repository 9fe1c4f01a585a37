#pragma once

#include "gdds/topology.hpp"

namespace gdds {

struct GenerationSplit {
    LabelVolume low;   // trachea and bronchi with generation < split_gen
    LabelVolume high;  // remaining bronchioles
};

/// Partition the foreground of `y` by the generation of each voxel's nearest
/// centreline branch (see assign_voxels_to_branches).
GenerationSplit split_label_by_generation(const LabelVolume& y, const BranchGraph& g, int split_gen = 4,
                                          double max_dist = 10.0);

}  // namespace gdds
