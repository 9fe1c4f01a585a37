#include "gdds/net.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace gdds {
namespace {

constexpr char kMagic[8] = {'G', 'D', 'D', 'S', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCheckpointVersion = 1;

bool is_pow2(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

int log2i(int64_t v) { return std::countr_zero(static_cast<uint64_t>(v)); }

void add_into(nn::Tensor& dst, const nn::Tensor& src) {
    if (dst.v.empty()) {
        dst = src;
        return;
    }
    for (size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

void ensure(nn::Tensor& t, const nn::Tensor& like) {
    if (t.v.empty()) t = nn::Tensor(like.c, like.s);
}

nn::Tensor sigmoid_grad(const std::vector<float>& dp, const std::vector<float>& p, int64_t c, Shape3 s) {
    nn::Tensor dz(c, s);
    for (size_t i = 0; i < dz.v.size(); ++i) dz.v[i] = dp[i] * p[i] * (1.0f - p[i]);
    return dz;
}

}  // namespace

// ---------------------------------------------------------------- configs

void BackboneSpec::validate() const {
    if (depth < 2) throw Error("backbone depth must be >= 2, got " + std::to_string(depth));
    if (base_channels < 1) throw Error("base_channels must be >= 1");
    if (growth < 1) throw Error("channel growth must be >= 1");
    if (in_channels < 1) throw Error("in_channels must be >= 1");
    if (patch_size % granularity() != 0) {
        throw Error("patch size " + std::to_string(patch_size) + " is not divisible by 2^(depth-1) = " +
                    std::to_string(granularity()));
    }
}

int64_t BackboneSpec::channels(int level) const {
    int64_t c = base_channels;
    for (int k = 0; k < level; ++k) c *= growth;
    return c;
}

void HeadConfig::validate(const BackboneSpec& b) const {
    if (dds) {
        if (!is_pow2(n) || n > b.granularity()) {
            throw Error("deep dense head factor n=" + std::to_string(n) +
                        " must be a power of two no larger than 2^(depth-1) = " + std::to_string(b.granularity()));
        }
        if (b.patch_size % n != 0) throw Error("patch size is not divisible by n=" + std::to_string(n));
    }
    if (deep_supervision && b.depth < 3) throw Error("deep supervision needs a decoder scale above 1 (depth >= 3)");
}

void to_json(nlohmann::json& j, const BackboneSpec& s) {
    j = {{"depth", s.depth},
         {"base_channels", s.base_channels},
         {"growth", s.growth},
         {"in_channels", s.in_channels},
         {"patch_size", s.patch_size}};
}

void from_json(const nlohmann::json& j, BackboneSpec& s) {
    for (const auto& [k, v] : j.items()) {
        if (k == "depth") s.depth = v.get<int>();
        else if (k == "base_channels") s.base_channels = v.get<int64_t>();
        else if (k == "growth") s.growth = v.get<int64_t>();
        else if (k == "in_channels") s.in_channels = v.get<int64_t>();
        else if (k == "patch_size") s.patch_size = v.get<int64_t>();
        else throw Error("unknown backbone key '" + k + "'");
    }
}

void to_json(nlohmann::json& j, const HeadConfig& h) {
    j = {{"encoder_gs", h.encoder_gs},
         {"encoder_gs_bottleneck", h.encoder_gs_bottleneck},
         {"dds", h.dds},
         {"n", h.n},
         {"deep_supervision", h.deep_supervision}};
}

void from_json(const nlohmann::json& j, HeadConfig& h) {
    for (const auto& [k, v] : j.items()) {
        if (k == "encoder_gs") h.encoder_gs = v.get<bool>();
        else if (k == "encoder_gs_bottleneck") h.encoder_gs_bottleneck = v.get<bool>();
        else if (k == "dds") h.dds = v.get<bool>();
        else if (k == "n") h.n = v.get<int>();
        else if (k == "deep_supervision") h.deep_supervision = v.get<bool>();
        else throw Error("unknown heads key '" + k + "'");
    }
}

void to_json(nlohmann::json& j, const NetConfig& c) { j = {{"backbone", c.backbone}, {"heads", c.heads}}; }

void from_json(const nlohmann::json& j, NetConfig& c) {
    for (const auto& [k, v] : j.items()) {
        if (k == "backbone") c.backbone = v.get<BackboneSpec>();
        else if (k == "heads") c.heads = v.get<HeadConfig>();
        else throw Error("unknown model key '" + k + "'");
    }
}

Variant parse_variant(const std::string& name) {
    if (name == "baseline") return Variant::baseline;
    if (name == "gs_ds") return Variant::gs_ds;
    if (name == "gs_dds") return Variant::gs_dds;
    if (name == "gdds") return Variant::gdds;
    throw Error("unknown variant '" + name + "' (expected baseline, gs_ds, gs_dds or gdds)");
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::baseline: return "baseline";
        case Variant::gs_ds: return "gs_ds";
        case Variant::gs_dds: return "gs_dds";
        case Variant::gdds: return "gdds";
    }
    return "?";
}

HeadConfig variant_heads(Variant v, int n) {
    HeadConfig h;
    h.n = n;
    h.encoder_gs = true;
    h.dds = v == Variant::gs_dds || v == Variant::gdds;
    h.deep_supervision = v == Variant::gs_ds;
    return h;
}

nn::Tensor to_tensor(const Volume& v) {
    nn::Tensor t(1, v.shape());
    std::copy(v.data().begin(), v.data().end(), t.v.begin());
    return t;
}

// ---------------------------------------------------------------- construction

GddsNet::GddsNet(const NetConfig& cfg, uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg_.backbone.validate();
    cfg_.heads.validate(cfg_.backbone);
    build();
}

void GddsNet::build() {
    const auto& b = cfg_.backbone;
    const auto& h = cfg_.heads;
    const int D = b.depth;
    // every component draws from its own stream so that adding or removing a
    // head leaves the others' initial weights untouched
    std::mt19937_64 rng(splitmix64(seed_ ^ 0x01));
    auto make_block = [&](const std::string& name, int64_t cin, int64_t cout) {
        Block blk{nn::Conv3d(name + ".conv", cin, cout, 3, false), nn::InstanceNorm(name + ".norm", cout)};
        blk.conv.init(rng);
        return blk;
    };
    enc_.assign(static_cast<size_t>(D), {});
    for (int k = 0; k < D; ++k) {
        const int64_t cin = k == 0 ? b.in_channels : b.channels(k - 1);
        const std::string name = "enc" + std::to_string(k);
        enc_[k].push_back(make_block(name + ".0", cin, b.channels(k)));
        enc_[k].push_back(make_block(name + ".1", b.channels(k), b.channels(k)));
    }
    dec_.assign(static_cast<size_t>(D - 1), {});
    up_.assign(static_cast<size_t>(D - 1), {});
    for (int k = D - 2; k >= 0; --k) {
        const std::string name = "dec" + std::to_string(k);
        up_[k] = nn::ConvTranspose2(name + ".up", b.channels(k + 1), b.channels(k));
        up_[k].init(rng);
        dec_[k].push_back(make_block(name + ".0", 2 * b.channels(k), b.channels(k)));
        dec_[k].push_back(make_block(name + ".1", b.channels(k), b.channels(k)));
    }

    auto make_gs = [&](GsHead& g, const std::string& name, uint64_t stream) {
        int64_t total = 0;
        for (auto c : g.channels) total += c;
        g.weight.name = name + ".weight";
        g.bias.name = name + ".bias";
        g.weight.resize(static_cast<size_t>(total));
        g.bias.resize(1);
        std::mt19937_64 r(splitmix64(seed_ ^ stream));
        nn::init_uniform(g.weight, total, r, std::sqrt(0.5));
    };
    de_gs_ = {};
    for (int k = D - 2; k >= 0; --k) {
        de_gs_.levels.push_back(k);
        de_gs_.scales.push_back(1 << k);
        de_gs_.channels.push_back(b.channels(k));
    }
    make_gs(de_gs_, "decoder_gs", 0x03);

    en_gs_ = {};
    if (h.encoder_gs) {
        const int top = h.encoder_gs_bottleneck ? D - 1 : D - 2;
        for (int k = 0; k <= top; ++k) {
            en_gs_.levels.push_back(k);
            en_gs_.scales.push_back(1 << k);
            en_gs_.channels.push_back(b.channels(k));
        }
        make_gs(en_gs_, "encoder_gs", 0x02);
    }

    if (h.dds) {
        const int k = log2i(h.n);
        const int64_t c = b.channels(k);
        const int64_t n3 = static_cast<int64_t>(h.n) * h.n * h.n;
        std::mt19937_64 r(splitmix64(seed_ ^ 0x04));
        dds1_ = nn::Conv3d("dds.0", c, c, 1, true);
        dds2_ = nn::Conv3d("dds.1", c, n3, 1, true);
        dds1_.init(r);
        dds2_.init(r, std::sqrt(0.5));
    } else {
        dds1_ = {};
        dds2_ = {};
    }

    ds_.clear();
    if (h.deep_supervision) {
        std::mt19937_64 r(splitmix64(seed_ ^ 0x05));
        for (int k = D - 2; k >= 1; --k) {
            ds_.emplace_back("ds" + std::to_string(k), b.channels(k), 1, 1, true);
            ds_.back().init(r, std::sqrt(0.5));
        }
    }
}

// ---------------------------------------------------------------- blocks

nn::Tensor GddsNet::run_block(const Block& b, const nn::Tensor& x, BlockTrace* t) const {
    nn::InstanceNorm::Cache cache;
    nn::Tensor z = b.conv.forward(x);
    nn::Tensor y = b.norm.forward(z, cache);
    nn::leaky_relu_inplace(y);
    if (t) {
        t->x = x;
        t->z = std::move(z);
        t->y = y;
        t->norm = std::move(cache);
    }
    return y;
}

nn::Tensor GddsNet::block_backward(Block& b, const BlockTrace& t, nn::Tensor g) const {
    nn::leaky_relu_backward_inplace(t.y, g);
    nn::Tensor dz, dx;
    b.norm.backward(t.z, t.norm, g, dz);
    b.conv.backward(t.x, dz, &dx);
    return dx;
}

// ---------------------------------------------------------------- GS heads

void GddsNet::gs_forward(const GsHead& h, const std::vector<const nn::Tensor*>& feats, Shape3 out_shape,
                         Volume& p) const {
    p = Volume(out_shape, 0.0f);
    std::vector<float> low, up(static_cast<size_t>(out_shape.size()));
    size_t off = 0;
    for (size_t i = 0; i < feats.size(); ++i) {
        const nn::Tensor& f = *feats[i];
        low.assign(static_cast<size_t>(f.voxels()), 0.0f);
        for (int64_t c = 0; c < f.c; ++c) {
            const float w = h.weight.w[off + c];
            const float* src = f.channel(c);
            for (int64_t j = 0; j < f.voxels(); ++j) low[j] += w * src[j];
        }
        off += static_cast<size_t>(f.c);
        nn::upsample_trilinear(low.data(), f.s, h.scales[i], up.data());
        for (int64_t j = 0; j < p.size(); ++j) p[j] += up[j];
    }
    const float bias = h.bias.w[0];
    for (auto& v : p.data()) v = nn::sigmoid(v + bias);
}

void GddsNet::gs_backward(GsHead& h, const std::vector<const nn::Tensor*>& feats, const Volume& p,
                          const std::vector<float>& dp, std::vector<nn::Tensor*> dfeats) const {
    std::vector<float> dz(static_cast<size_t>(p.size()));
    double db = 0;
    for (int64_t j = 0; j < p.size(); ++j) {
        dz[j] = dp[j] * p[j] * (1.0f - p[j]);
        db += dz[j];
    }
    h.bias.g[0] += static_cast<float>(db);
    std::vector<float> dlow;
    size_t off = 0;
    for (size_t i = 0; i < feats.size(); ++i) {
        const nn::Tensor& f = *feats[i];
        dlow.assign(static_cast<size_t>(f.voxels()), 0.0f);
        nn::upsample_trilinear_backward(dz.data(), f.s, h.scales[i], dlow.data());
        for (int64_t c = 0; c < f.c; ++c) {
            const float* src = f.channel(c);
            double acc = 0;
            for (int64_t j = 0; j < f.voxels(); ++j) acc += static_cast<double>(src[j]) * dlow[j];
            h.weight.g[off + c] += static_cast<float>(acc);
            const float w = h.weight.w[off + c];
            float* d = dfeats[i]->channel(c);
            for (int64_t j = 0; j < f.voxels(); ++j) d[j] += w * dlow[j];
        }
        off += static_cast<size_t>(f.c);
    }
}

// ---------------------------------------------------------------- forward / backward

GddsOutputs GddsNet::forward(const Volume& x, Trace* trace) const {
    const auto& b = cfg_.backbone;
    const auto& hc = cfg_.heads;
    const int D = b.depth;
    const auto& s = x.shape();
    for (int k = 0; k < 3; ++k) {
        if (s[k] % b.granularity() != 0) {
            throw Error("input " + to_string(s) + " is not divisible by 2^(depth-1) = " +
                        std::to_string(b.granularity()));
        }
        if (hc.dds && s[k] % hc.n != 0) {
            throw Error("input " + to_string(s) + " is not divisible by n=" + std::to_string(hc.n));
        }
    }

    Trace local;
    Trace& t = trace ? *trace : local;
    const bool keep = trace != nullptr;
    t.enc.assign(static_cast<size_t>(D), std::vector<BlockTrace>(2));
    t.dec.assign(static_cast<size_t>(D - 1), std::vector<BlockTrace>(2));
    t.pool.assign(static_cast<size_t>(D), {});

    std::vector<nn::Tensor> e(static_cast<size_t>(D)), d(static_cast<size_t>(D - 1));
    for (int k = 0; k < D; ++k) {
        nn::Tensor cur = k == 0 ? to_tensor(x) : nn::max_pool2(e[k - 1], t.pool[k]);
        for (size_t j = 0; j < 2; ++j) cur = run_block(enc_[k][j], cur, keep ? &t.enc[k][j] : nullptr);
        e[k] = std::move(cur);
    }
    for (int k = D - 2; k >= 0; --k) {
        const nn::Tensor& below = k == D - 2 ? e[D - 1] : d[k + 1];
        nn::Tensor cur = nn::concat_channels(up_[k].forward(below), e[k]);
        for (size_t j = 0; j < 2; ++j) cur = run_block(dec_[k][j], cur, keep ? &t.dec[k][j] : nullptr);
        d[k] = std::move(cur);
    }

    GddsOutputs out;
    {
        std::vector<const nn::Tensor*> f;
        for (int k : de_gs_.levels) f.push_back(&d[k]);
        gs_forward(de_gs_, f, s, out.p_de);
    }
    if (hc.encoder_gs) {
        std::vector<const nn::Tensor*> f;
        for (int k : en_gs_.levels) f.push_back(&e[k]);
        out.p_en.emplace();
        gs_forward(en_gs_, f, s, *out.p_en);
    }
    if (hc.dds) {
        const int k = log2i(hc.n);
        const nn::Tensor& feat = k == D - 1 ? e[D - 1] : d[k];
        nn::Tensor hidden = dds1_.forward(feat);
        nn::relu_inplace(hidden);
        nn::Tensor z = dds2_.forward(hidden);
        DenseTopologyTensor<float> ph;
        ph.n = hc.n;
        ph.role = DttRole::Prediction;
        ph.channels = z.c;
        ph.spatial = z.s;
        ph.data = std::move(z.v);
        for (auto& v : ph.data) v = nn::sigmoid(v);
        out.phat_n = std::move(ph);
        if (keep) t.dds_hidden = std::move(hidden);
    }
    for (size_t i = 0; i < ds_.size(); ++i) {
        const int k = D - 2 - static_cast<int>(i);
        nn::Tensor z = ds_[i].forward(d[k]);
        Volume p(z.s);
        for (int64_t j = 0; j < p.size(); ++j) p[j] = nn::sigmoid(z.v[j]);
        out.p_ds.emplace_back(1 << k, std::move(p));
    }
    if (keep) {
        // decoder/encoder outputs live in the block traces; keep the outputs too
        t.out = out;
    }
    return out;
}

void GddsNet::backward(const Trace& t, const OutputGrads& g) {
    const auto& hc = cfg_.heads;
    const int D = cfg_.backbone.depth;
    auto E = [&](int k) -> const nn::Tensor& { return t.enc[k][1].y; };
    auto Dk = [&](int k) -> const nn::Tensor& { return t.dec[k][1].y; };
    std::vector<nn::Tensor> de(static_cast<size_t>(D)), dd(static_cast<size_t>(D - 1));

    if (!g.p_de.empty()) {
        std::vector<const nn::Tensor*> f;
        std::vector<nn::Tensor*> df;
        for (int k : de_gs_.levels) {
            f.push_back(&Dk(k));
            ensure(dd[k], Dk(k));
            df.push_back(&dd[k]);
        }
        gs_backward(de_gs_, f, t.out.p_de, g.p_de, df);
    }
    if (hc.encoder_gs && !g.p_en.empty()) {
        std::vector<const nn::Tensor*> f;
        std::vector<nn::Tensor*> df;
        for (int k : en_gs_.levels) {
            f.push_back(&E(k));
            ensure(de[k], E(k));
            df.push_back(&de[k]);
        }
        gs_backward(en_gs_, f, *t.out.p_en, g.p_en, df);
    }
    if (hc.dds && !g.phat_n.empty()) {
        const int k = log2i(hc.n);
        const nn::Tensor& feat = k == D - 1 ? E(D - 1) : Dk(k);
        const auto& ph = *t.out.phat_n;
        nn::Tensor dz = sigmoid_grad(g.phat_n, ph.data, ph.channels, ph.spatial);
        nn::Tensor dh, df;
        dds2_.backward(t.dds_hidden, dz, &dh);
        nn::relu_backward_inplace(t.dds_hidden, dh);
        dds1_.backward(feat, dh, &df);
        add_into(k == D - 1 ? de[D - 1] : dd[k], df);
    }
    for (size_t i = 0; i < ds_.size() && i < g.p_ds.size(); ++i) {
        if (g.p_ds[i].empty()) continue;
        const int k = D - 2 - static_cast<int>(i);
        const Volume& p = t.out.p_ds[i].second;
        nn::Tensor dz = sigmoid_grad(g.p_ds[i], p.data(), 1, p.shape());
        nn::Tensor df;
        ds_[i].backward(Dk(k), dz, &df);
        add_into(dd[k], df);
    }

    for (int k = 0; k <= D - 2; ++k) {
        ensure(dd[k], Dk(k));
        nn::Tensor cur = std::move(dd[k]);
        for (int j = 1; j >= 0; --j) cur = block_backward(dec_[k][j], t.dec[k][j], std::move(cur));
        const int64_t c = cfg_.backbone.channels(k);
        const int64_t V = cur.voxels();
        nn::Tensor gu(c, cur.s), gs(c, cur.s);
        std::copy(cur.v.begin(), cur.v.begin() + c * V, gu.v.begin());
        std::copy(cur.v.begin() + c * V, cur.v.end(), gs.v.begin());
        add_into(de[k], gs);
        const nn::Tensor& below = k == D - 2 ? E(D - 1) : Dk(k + 1);
        nn::Tensor gb;
        up_[k].backward(below, gu, &gb);
        add_into(k == D - 2 ? de[D - 1] : dd[k + 1], gb);
    }
    for (int k = D - 1; k >= 0; --k) {
        ensure(de[k], E(k));
        nn::Tensor cur = std::move(de[k]);
        cur = block_backward(enc_[k][1], t.enc[k][1], std::move(cur));
        if (k == 0) {
            // the image needs no gradient
            nn::leaky_relu_backward_inplace(t.enc[0][0].y, cur);
            nn::Tensor dz;
            enc_[0][0].norm.backward(t.enc[0][0].z, t.enc[0][0].norm, cur, dz);
            enc_[0][0].conv.backward(t.enc[0][0].x, dz, nullptr);
            break;
        }
        cur = block_backward(enc_[k][0], t.enc[k][0], std::move(cur));
        add_into(de[k - 1], nn::max_pool2_backward(cur, t.pool[k], E(k - 1).s));
    }
}

// ---------------------------------------------------------------- parameters

std::vector<nn::Param*> GddsNet::parameters() {
    std::vector<nn::Param*> out;
    for (auto& level : enc_)
        for (auto& b : level) {
            b.conv.collect(out);
            b.norm.collect(out);
        }
    for (int k = static_cast<int>(dec_.size()) - 1; k >= 0; --k) {
        up_[k].collect(out);
        for (auto& b : dec_[k]) {
            b.conv.collect(out);
            b.norm.collect(out);
        }
    }
    out.push_back(&de_gs_.weight);
    out.push_back(&de_gs_.bias);
    if (cfg_.heads.encoder_gs) {
        out.push_back(&en_gs_.weight);
        out.push_back(&en_gs_.bias);
    }
    if (cfg_.heads.dds) {
        dds1_.collect(out);
        dds2_.collect(out);
    }
    for (auto& c : ds_) c.collect(out);
    return out;
}

std::vector<const nn::Param*> GddsNet::parameters() const {
    auto ps = const_cast<GddsNet*>(this)->parameters();
    return {ps.begin(), ps.end()};
}

void GddsNet::zero_grad() {
    for (auto* p : parameters()) std::fill(p->g.begin(), p->g.end(), 0.0f);
}

ParameterCount GddsNet::count_parameters() const {
    ParameterCount pc;
    for (const auto& level : enc_)
        for (const auto& b : level) pc.backbone += static_cast<int64_t>(b.conv.weight.size() + b.norm.gamma.size() + b.norm.beta.size());
    for (size_t k = 0; k < dec_.size(); ++k) {
        pc.backbone += static_cast<int64_t>(up_[k].weight.size() + up_[k].bias.size());
        for (const auto& b : dec_[k]) pc.backbone += static_cast<int64_t>(b.conv.weight.size() + b.norm.gamma.size() + b.norm.beta.size());
    }
    pc.decoder_gs = static_cast<int64_t>(de_gs_.weight.size() + de_gs_.bias.size());
    if (cfg_.heads.encoder_gs) pc.encoder_gs = static_cast<int64_t>(en_gs_.weight.size() + en_gs_.bias.size());
    if (cfg_.heads.dds) {
        pc.dds = static_cast<int64_t>(dds1_.weight.size() + dds1_.bias.size() + dds2_.weight.size() + dds2_.bias.size());
    }
    for (const auto& c : ds_) pc.ds += static_cast<int64_t>(c.weight.size() + c.bias.size());
    return pc;
}

GddsNet::Features GddsNet::features(const Volume& x) const {
    Trace t;
    (void)forward(x, &t);
    Features f;
    const int D = cfg_.backbone.depth;
    for (int k = 0; k < D; ++k) f.encoder.emplace_back(1 << k, t.enc[k][1].y);
    for (int k = D - 2; k >= 0; --k) f.decoder.emplace_back(1 << k, t.dec[k][1].y);
    return f;
}

// ---------------------------------------------------------------- checkpoints

void GddsNet::save(const std::filesystem::path& path) const {
    nlohmann::json header;
    header["format_version"] = kCheckpointVersion;
    header["model"] = cfg_;
    header["seed"] = seed_;
    header["dtt_channel_ordering"] = std::string(kDttChannelOrdering);
    auto params = parameters();
    for (const auto* p : params) header["params"].push_back({{"name", p->name}, {"size", p->size()}});
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    const uint32_t version = kCheckpointVersion;
    const uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* p : params)
        out.write(reinterpret_cast<const char*>(p->w.data()), static_cast<std::streamsize>(p->w.size() * sizeof(float)));
    if (!out) throw Error("failed writing checkpoint " + path.string());
}

GddsNet GddsNet::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    char magic[8];
    uint32_t version = 0;
    uint64_t len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw Error(path.string() + " is not a GDDS checkpoint");
    if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
    if (len > (uint64_t{1} << 30)) throw Error("corrupt checkpoint header in " + path.string());
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw Error("truncated checkpoint " + path.string());
    const auto header = nlohmann::json::parse(text);
    const auto ordering = header.at("dtt_channel_ordering").get<std::string>();
    if (ordering != kDttChannelOrdering) {
        throw Error("checkpoint DTT channel ordering '" + ordering + "' does not match '" +
                    std::string(kDttChannelOrdering) + "'");
    }
    GddsNet net(header.at("model").get<NetConfig>(), header.at("seed").get<uint64_t>());
    auto params = net.parameters();
    const auto& listed = header.at("params");
    if (listed.size() != params.size()) throw Error("checkpoint parameter list does not match the model");
    for (size_t i = 0; i < params.size(); ++i) {
        if (listed[i].at("name").get<std::string>() != params[i]->name ||
            listed[i].at("size").get<size_t>() != params[i]->size()) {
            throw Error("checkpoint parameter " + listed[i].at("name").get<std::string>() + " does not match the model");
        }
        in.read(reinterpret_cast<char*>(params[i]->w.data()),
                static_cast<std::streamsize>(params[i]->size() * sizeof(float)));
        if (!in) throw Error("truncated checkpoint " + path.string());
    }
    return net;
}

}  // namespace gdds
