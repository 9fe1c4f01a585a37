#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gdds/volume.hpp"

namespace gdds {

/// Thin 26-connected centreline voxel set.
struct Skeleton {
    Shape3 shape;
    std::vector<Index3> voxels;  // raster order

    [[nodiscard]] LabelVolume to_mask() const;
};

struct Branch {
    int id = 0;
    std::vector<Index3> centerline;  // proximal -> distal, consecutive voxels 26-adjacent
    std::optional<int> parent;
    std::vector<int> children;
    int generation = 1;
};

/// Rooted airway tree. Branch ids equal their index in `branches`.
/// Centrelines are voxel-disjoint: a junction voxel belongs to the parent.
struct BranchGraph {
    std::vector<Branch> branches;
    int root_id = 0;

    [[nodiscard]] const Branch& at(int id) const { return branches.at(static_cast<size_t>(id)); }
    [[nodiscard]] Branch& at(int id) { return branches.at(static_cast<size_t>(id)); }
    [[nodiscard]] size_t size() const { return branches.size(); }
    [[nodiscard]] int64_t centerline_voxel_count() const;
};

/// Keep the largest 26-connected foreground component. Equal sizes are broken
/// in favour of the component holding the lowest raster index.
LabelVolume largest_component(const LabelVolume& mask, bool* was_empty = nullptr);

/// Number of 26-connected foreground components.
int count_components(const LabelVolume& mask);

/// Euclidean distance (in voxels) from each foreground voxel to the nearest
/// background voxel; 0 on background. Exact separable transform.
Grid3<float> distance_transform(const LabelVolume& mask);

/// True when deleting the centre of a 3x3x3 neighbourhood preserves 26/6
/// topology. `cube` is indexed (dz+1)*9 + (dy+1)*3 + (dx+1).
bool is_simple_point(const std::array<bool, 27>& cube);

/// Topology-preserving directional thinning down to a curve skeleton.
/// Endpoints are kept, so branches are not shortened.
Skeleton skeletonize(const LabelVolume& mask);

struct ParseOptions {
    std::optional<Index3> root_hint;  // overrides automatic root detection
    int prune_len = 3;                // spurs with fewer voxels are removed
};

struct ParseDiagnostics {
    std::vector<std::string> warnings;
    int components = 0;
    int cycles_broken = 0;
    int spurs_pruned = 0;
};

/// Split a skeleton into branches at junction and end voxels and orient the
/// result as a tree rooted at the most superior endpoint (largest local
/// radius breaks ties). `mask`, when given, supplies local radii for root
/// selection and for cutting cycles at their thinnest edge.
BranchGraph parse_branches(const Skeleton& s, const ParseOptions& opts = {},
                           const LabelVolume* mask = nullptr, ParseDiagnostics* diag = nullptr);

/// Breadth-first generation numbering: roots get 1, children parent + 1.
BranchGraph assign_generations(BranchGraph g);

/// Owner branch of every foreground voxel by nearest centreline voxel
/// (Euclidean, lower branch id on ties). Background is -1. Voxels farther
/// than `max_dist` from every centreline raise an error listing them.
Grid3<int32_t> assign_voxels_to_branches(const LabelVolume& y, const BranchGraph& g,
                                         double max_dist = 10.0);

struct BranchDetection {
    int id = 0;
    int generation = 1;
    bool detected = false;
    double fraction = 0.0;
};

struct MetricOptions {
    int fine_gen = 4;
    double detect_threshold = 0.8;
    /// Measure the detection fraction on the branch's assigned volume instead
    /// of its centreline voxels.
    bool volumetric_branch_voxels = false;
    double assign_max_dist = 10.0;
    /// Restrict the FPR denominator (and numerator) to this mask.
    const LabelVolume* fpr_region = nullptr;
    bool compute_branch_ratio = true;
    ParseOptions parse;
};

struct MetricsReport {
    double bd = 0.0, bd_star = 0.0, td = 0.0, td_star = 0.0;
    double tpr = 0.0, fpr = 0.0, br = 0.0;
    bool empty_prediction = false;
    int branches = 0, fine_branches = 0, detected = 0, fine_detected = 0;
    int64_t centerline_voxels = 0, fine_centerline_voxels = 0;
    int64_t detected_centerline_voxels = 0, fine_detected_centerline_voxels = 0;
    int predicted_branches = 0;
    std::vector<BranchDetection> per_branch;
};

/// Branch- and voxel-level scores of `pred` (already largest-component
/// filtered) against `ref` and its parsed tree. Starred scores cover
/// branches of generation >= fine_gen; they are NaN when there are none.
MetricsReport compute_metrics(const LabelVolume& pred, const LabelVolume& ref,
                              const BranchGraph& ref_graph, const MetricOptions& opts = {});

nlohmann::json graph_to_json(const BranchGraph& g);
BranchGraph graph_from_json(const nlohmann::json& j);
void save_graph(const BranchGraph& g, const std::filesystem::path& path);
BranchGraph load_graph(const std::filesystem::path& path);

nlohmann::json metrics_to_json(const MetricsReport& r);
/// Column order is fixed: case,BD,BD*,TD,TD*,TPR,FPR,BR
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& case_id, const MetricsReport& r);

}  // namespace gdds
