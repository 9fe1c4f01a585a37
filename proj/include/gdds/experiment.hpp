#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gdds/phantom.hpp"
#include "gdds/pipeline.hpp"

namespace gdds {

struct DatasetConfig {
    int count = 40;
    uint64_t seed = 0;
    double train_fraction = 0.75;
    int val_count = 3;  // taken from the end of the training split
};

struct InferConfig {
    double overlap = 0.25;
    double threshold = 0.5;
    bool largest_component = true;
};

struct MetricConfig {
    int fine_gen = 4;
    double detect_threshold = 0.8;
    /// "all": FPR over the whole background; "dilated": within 3 voxels of the reference.
    std::string fpr_mode = "all";
};

struct AblationConfig {
    std::vector<std::string> variants = {"baseline", "gs_ds", "gs_dds", "gdds"};
    std::vector<uint64_t> seeds = {0, 1, 2};
    int n = 2;
};

/// Everything an experiment run needs, read from one JSON file.
struct ExperimentConfig {
    PhantomSpec phantom;
    DatasetConfig dataset;
    TrainConfig train;
    InferConfig infer;
    MetricConfig metrics;
    AblationConfig ablation;

    void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Missing sections keep their defaults; unknown keys anywhere are rejected.
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Heads and loss weights of one ablation row on top of a base config.
TrainConfig variant_config(const TrainConfig& base, Variant v, int n);

struct Split {
    std::vector<Case> train, val, test;
};

/// Loads a generated dataset; the last `val_count` training cases are held out for validation.
Split load_split(const std::filesystem::path& data_dir, int val_count, const HuWindow& window = {});

/// Sliding-window probability map, thresholded and optionally reduced to its largest component.
LabelVolume predict_mask(const GddsNet& net, const Volume& image, const InferConfig& ic, Volume* prob = nullptr);

MetricOptions metric_options(const MetricConfig& mc);

/// Metrics of a finished mask; the FPR region follows mc.fpr_mode.
MetricsReport evaluate_case(const LabelVolume& pred, const Case& c, const MetricConfig& mc);

/// Per-metric means over cases, skipping NaN entries.
struct MeanMetrics {
    double bd = 0, bd_star = 0, td = 0, td_star = 0, tpr = 0, fpr = 0;
};
MeanMetrics mean_metrics(const std::vector<MetricsReport>& rs);

struct AblationRun {
    std::string variant;
    uint64_t seed = 0;
    MeanMetrics test;
    int best_epoch = -1;
    double seconds = 0;
};

struct AblationSummary {
    std::string variant;
    MeanMetrics median;  // median over seeds
};

struct AblationResult {
    std::vector<AblationRun> runs;
    std::vector<AblationSummary> summary;
    double seconds = 0;
};

/// Trains every variant for every seed on data_dir's training split and scores
/// the test split. Writes runs.csv, ablation.csv and per-run logs under out_dir.
AblationResult run_ablation(const ExperimentConfig& cfg, const std::filesystem::path& data_dir,
                            const std::filesystem::path& out_dir,
                            const std::function<void(const std::string&)>& progress = {});

std::string ablation_runs_csv(const AblationResult& r);
std::string ablation_summary_csv(const AblationResult& r);

/// Fixed-precision number for CSV output ("nan" for NaN).
std::string fmt(double v);

}  // namespace gdds
