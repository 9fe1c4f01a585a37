#include "gdds/label_split.hpp"

namespace gdds {

GenerationSplit split_label_by_generation(const LabelVolume& y, const BranchGraph& g, int split_gen,
                                          double max_dist) {
    const auto owner = assign_voxels_to_branches(y, g, max_dist);
    GenerationSplit out{LabelVolume(y.shape(), 0, y.spacing()), LabelVolume(y.shape(), 0, y.spacing())};
    for (int64_t i = 0; i < y.size(); ++i) {
        if (!y[i]) continue;
        if (g.at(owner[i]).generation < split_gen) {
            out.low[i] = 1;
        } else {
            out.high[i] = 1;
        }
    }
    return out;
}

}  // namespace gdds
