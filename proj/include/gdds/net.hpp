#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gdds/dtt.hpp"
#include "gdds/nn/layers.hpp"
#include "gdds/volume.hpp"

namespace gdds {

/// Reference encoder-decoder (UNet family). Level k has base_channels *
/// growth^k channels and runs at 1/2^k of the input resolution.
struct BackboneSpec {
    int depth = 4;
    int64_t base_channels = 16;
    int64_t growth = 2;
    int64_t in_channels = 1;
    int64_t patch_size = 80;

    void validate() const;
    [[nodiscard]] int64_t channels(int level) const;
    /// Patch sizes must be divisible by this.
    [[nodiscard]] int64_t granularity() const { return int64_t{1} << (depth - 1); }
};

void to_json(nlohmann::json& j, const BackboneSpec& s);
void from_json(const nlohmann::json& j, BackboneSpec& s);

/// Which supervision heads hang off the backbone.
struct HeadConfig {
    bool encoder_gs = true;
    bool encoder_gs_bottleneck = true;  // include the deepest level in encoder GS
    bool dds = true;
    int n = 2;                          // DTT factor of the deep dense head
    bool deep_supervision = false;      // plain per-scale heads (DS ablation)

    void validate(const BackboneSpec& b) const;
};

void to_json(nlohmann::json& j, const HeadConfig& h);
void from_json(const nlohmann::json& j, HeadConfig& h);

/// Rows of the ablation table.
enum class Variant { baseline, gs_ds, gs_dds, gdds };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);
HeadConfig variant_heads(Variant v, int n = 2);

struct NetConfig {
    BackboneSpec backbone;
    HeadConfig heads;
};

void to_json(nlohmann::json& j, const NetConfig& c);
void from_json(const nlohmann::json& j, NetConfig& c);

struct GddsOutputs {
    std::optional<Volume> p_en;
    Volume p_de;
    std::optional<DenseTopologyTensor<float>> phat_n;
    /// Deep supervision side outputs, coarsest first, with their scale.
    std::vector<std::pair<int, Volume>> p_ds;
};

/// dL/d(probability) for each output; empty vectors mean no gradient.
struct OutputGrads {
    std::vector<float> p_en, p_de, phat_n;
    std::vector<std::vector<float>> p_ds;
};

struct ParameterCount {
    int64_t backbone = 0;
    int64_t decoder_gs = 0;
    int64_t encoder_gs = 0;
    int64_t dds = 0;
    int64_t ds = 0;
    [[nodiscard]] int64_t total() const { return backbone + decoder_gs + encoder_gs + dds + ds; }
    /// Heads that GDDS adds on top of a decoder-GS segmentation model.
    [[nodiscard]] int64_t gdds_heads() const { return encoder_gs + dds; }
    [[nodiscard]] double overhead_ratio() const {
        return backbone + decoder_gs > 0 ? static_cast<double>(gdds_heads()) / static_cast<double>(backbone + decoder_gs) : 0.0;
    }
};

class GddsNet {
public:
    struct Block {
        nn::Conv3d conv;
        nn::InstanceNorm norm;
    };
    struct BlockTrace {
        nn::Tensor x, z, y;
        nn::InstanceNorm::Cache norm;
    };
    struct GsHead {
        std::vector<int> levels;   // backbone feature indices
        std::vector<int> scales;
        std::vector<int64_t> channels;
        nn::Param weight, bias;    // one pointwise conv over the concatenation
    };
    struct Trace {
        std::vector<std::vector<BlockTrace>> enc, dec;
        std::vector<std::vector<int32_t>> pool;
        nn::Tensor dds_hidden;
        GddsOutputs out;
    };

    GddsNet() = default;
    GddsNet(const NetConfig& cfg, uint64_t seed);

    [[nodiscard]] const NetConfig& config() const { return cfg_; }
    [[nodiscard]] uint64_t seed() const { return seed_; }

    /// Input is a single-channel patch. Reentrant: weights are not touched.
    [[nodiscard]] GddsOutputs forward(const Volume& x, Trace* trace = nullptr) const;
    /// Accumulates parameter gradients from the output gradients.
    void backward(const Trace& trace, const OutputGrads& g);

    std::vector<nn::Param*> parameters();
    [[nodiscard]] std::vector<const nn::Param*> parameters() const;
    void zero_grad();
    [[nodiscard]] ParameterCount count_parameters() const;

    /// Feature maps of the backbone for one input, tagged with their scale.
    struct Features {
        std::vector<std::pair<int, nn::Tensor>> encoder, decoder;
    };
    [[nodiscard]] Features features(const Volume& x) const;

    void save(const std::filesystem::path& path) const;
    static GddsNet load(const std::filesystem::path& path);

private:
    void build();
    [[nodiscard]] nn::Tensor run_block(const Block& b, const nn::Tensor& x, BlockTrace* t) const;
    [[nodiscard]] nn::Tensor block_backward(Block& b, const BlockTrace& t, nn::Tensor g) const;
    void gs_forward(const GsHead& h, const std::vector<const nn::Tensor*>& feats, Shape3 out_shape,
                    Volume& p) const;
    void gs_backward(GsHead& h, const std::vector<const nn::Tensor*>& feats, const Volume& p,
                     const std::vector<float>& dp, std::vector<nn::Tensor*> dfeats) const;

    NetConfig cfg_;
    uint64_t seed_ = 0;
    std::vector<std::vector<Block>> enc_, dec_;
    std::vector<nn::ConvTranspose2> up_;
    GsHead en_gs_, de_gs_;
    nn::Conv3d dds1_, dds2_;
    std::vector<nn::Conv3d> ds_;
};

/// Tensor form of a normalised patch.
nn::Tensor to_tensor(const Volume& v);

}  // namespace gdds
