#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gdds/augment.hpp"
#include "gdds/losses.hpp"
#include "gdds/net.hpp"
#include "gdds/nn/tensor.hpp"
#include "gdds/preprocess.hpp"
#include "gdds/topology.hpp"

namespace gdds {

/// Which part of the airway a model is trained on (generation-aware training).
enum class LabelRole { full, low, high };

LabelRole parse_role(const std::string& s);
std::string role_name(LabelRole r);

struct TrainConfig {
    NetConfig model;
    double lr_init = 0.03;
    std::vector<int> lr_drop_epochs = {20, 40, 60};
    double lr_drop_factor = 10.0;
    int max_epochs = 80;
    LossWeights weights;
    uint64_t seed = 0;

    LabelRole role = LabelRole::full;
    int split_gen = 4;
    int fine_gen = 4;

    int64_t stride = 0;             // 0: half the patch size
    double keep_background = 0.1;
    int batch_size = 2;             // patches per optimizer step
    int steps_per_epoch = 0;        // 0: one pass over the patch pool
    bool augment = true;
    AugmentOptions augmentation;
    HuWindow window;

    int val_every = 1;
    double val_overlap = 0.25;
    bool deterministic = true;

    void validate() const;
    [[nodiscard]] int64_t patch_size() const { return model.backbone.patch_size; }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainConfig& c);

/// lr_init / factor^k where k counts the drop epochs <= epoch.
double lr_schedule(int epoch, const TrainConfig& cfg);

/// First/second-moment optimizer with bias correction.
class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(const std::vector<nn::Param*>& params, double lr);
    [[nodiscard]] int64_t steps() const { return t_; }

private:
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

/// One preprocessed case with its reference tree.
struct Case {
    std::string id;
    Volume image;       // normalised to [0, 1]
    LabelVolume label;  // full airway
    BranchGraph graph;
};

/// Reads case_dir/{image.nii.gz,label.nii.gz,graph.json}; the graph is parsed
/// from the label when graph.json is absent.
Case load_case(const std::filesystem::path& case_dir, const HuWindow& window = {});

/// Label the model is trained against for a given role.
LabelVolume role_label(const Case& c, LabelRole role, int split_gen);

/// Loss terms and output gradients for one patch.
LossBreakdown patch_loss(const GddsOutputs& out, const LabelVolume& y, const LossWeights& w,
                         const HeadConfig& heads, OutputGrads* grads);

struct EpochLog {
    int epoch = 0;
    double lr = 0;
    LossBreakdown loss;          // mean over the epoch's patches
    std::optional<double> val;   // validation TD* (TD for the low-generation role)
    double seconds = 0;
};

nlohmann::json epoch_log_json(const EpochLog& e, bool with_ds);

struct TrainResult {
    GddsNet best;
    int best_epoch = -1;
    std::optional<double> best_val;
    std::vector<EpochLog> log;
};

struct TrainHooks {
    std::function<void(const EpochLog&)> on_epoch;
    std::filesystem::path log_path;         // JSONL, one line per epoch
    std::filesystem::path checkpoint_path;  // best checkpoint
};

/// Trains one model. Non-finite losses abort with a diagnostic.
TrainResult train(const TrainConfig& cfg, const std::vector<Case>& train_cases,
                  const std::vector<Case>& val_cases, const TrainHooks& hooks = {});

using Predictor = std::function<Volume(const Volume&)>;

struct InferOptions {
    double overlap = 0.25;
    /// Visit windows in a shuffled order (testing order independence).
    std::optional<uint64_t> shuffle_seed;
};

/// Tiles `v` with stride patch*(1-overlap), clamped at the edges, and averages
/// the window predictions uniformly. Volumes smaller than the patch are padded
/// with zeros and cropped back; `warning` then receives a message.
Volume sliding_window_infer(const Predictor& predict, const Volume& v, int64_t patch,
                            const InferOptions& opts = {}, std::string* warning = nullptr);
Volume sliding_window_infer(const GddsNet& net, const Volume& v, int64_t patch,
                            const InferOptions& opts = {}, std::string* warning = nullptr);

/// p >= threshold.
LabelVolume binarize(const Volume& p, double threshold = 0.5);

/// Voxelwise union of the two generation-specific predictions.
LabelVolume merge_generation_outputs(const LabelVolume& low, const LabelVolume& high);

/// Validation score used for checkpoint selection.
double validation_score(const GddsNet& net, const std::vector<Case>& cases, const TrainConfig& cfg);

/// Pins single-threaded execution; also enabled by GDDS_DETERMINISTIC=1.
void set_deterministic(bool on);
bool deterministic_from_env();

}  // namespace gdds
