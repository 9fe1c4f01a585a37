#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "gdds/topology.hpp"
#include "gdds/volume.hpp"

namespace gdds {

/// Parameters of a synthetic bifurcating airway tree.
struct PhantomSpec {
    int64_t grid_size = 64;
    int generations = 5;
    double root_radius = 3.0;           // voxels
    double radius_decay = 0.75;         // per generation, in (0, 1)
    double min_radius = 1.4;            // thinner lumens can vanish under thinning
    double branch_length_min = 12.0;    // voxels, generation 1
    double branch_length_max = 16.0;
    double length_decay = 0.85;         // per generation
    double min_branch_length = 7.0;     // floor after decay
    double angle_min_deg = 25.0;        // half-angle between child and parent axis
    double angle_max_deg = 40.0;
    double noise_sigma = 20.0;          // HU
    uint64_t seed = 0;

    double lumen_hu = -1000.0;
    double wall_hu = -600.0;
    double parenchyma_hu = -850.0;
    double wall_ratio = 0.4;            // wall thickness relative to radius
    double min_wall = 0.8;              // voxels
    double smoothing_sigma = 0.6;       // voxels
    double clearance = 2.0;             // gap between unrelated tubes, voxels
    int max_attempts = 400;

    void validate() const;
    [[nodiscard]] double radius_at(int generation) const;
    [[nodiscard]] double terminal_radius() const;
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

struct PhantomCase {
    Volume image;       // Hounsfield units
    LabelVolume label;
    BranchGraph graph;  // exact by construction
};

/// Rasterize a random full-bifurcation tube tree. Deterministic given spec.seed.
PhantomCase generate_tree(const PhantomSpec& spec);

struct DatasetManifest {
    PhantomSpec spec;
    uint64_t seed = 0;
    std::vector<std::string> train;
    std::vector<std::string> test;
};

/// Per-case seed derived from the dataset seed.
uint64_t case_seed(uint64_t dataset_seed, int index);

/// Write `count` cases as case_XXXX/{image.nii.gz,label.nii.gz,graph.json}
/// plus manifest.json; the first round(train_fraction * count) cases form
/// the training split.
DatasetManifest generate_dataset(const PhantomSpec& spec, int count, uint64_t seed,
                                 const std::filesystem::path& out_dir, double train_fraction = 0.8);

DatasetManifest load_manifest(const std::filesystem::path& dataset_dir);

}  // namespace gdds
