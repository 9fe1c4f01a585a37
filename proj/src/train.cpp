#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>

#include <Eigen/Core>

#include "gdds/label_split.hpp"
#include "gdds/nifti.hpp"
#include "gdds/patches.hpp"
#include "gdds/pipeline.hpp"

namespace gdds {
namespace {

template <class T>
void get_to(const nlohmann::json& v, T& out) {
    out = v.get<T>();
}

nlohmann::json weights_json(const LossWeights& w) {
    nlohmann::json j = {{"alpha", w.alpha},     {"beta", w.beta},
                        {"gamma", w.gamma},     {"epsilon", w.epsilon},
                        {"clamp_delta", w.clamp_delta},
                        {"consistency_stop_grad_p", w.consistency_stop_grad_p}};
    j["focal_alpha"] = w.focal_alpha ? nlohmann::json(*w.focal_alpha) : nlohmann::json(nullptr);
    return j;
}

LossWeights weights_from_json(const nlohmann::json& j) {
    LossWeights w;
    for (const auto& [k, v] : j.items()) {
        if (k == "alpha") get_to(v, w.alpha);
        else if (k == "beta") get_to(v, w.beta);
        else if (k == "gamma") get_to(v, w.gamma);
        else if (k == "epsilon") get_to(v, w.epsilon);
        else if (k == "clamp_delta") get_to(v, w.clamp_delta);
        else if (k == "consistency_stop_grad_p") get_to(v, w.consistency_stop_grad_p);
        else if (k == "focal_alpha") {
            if (v.is_null()) w.focal_alpha.reset();
            else w.focal_alpha = v.get<double>();
        } else throw Error("unknown weights key '" + k + "'");
    }
    return w;
}

nlohmann::json augment_json(const AugmentOptions& a) {
    return {{"flip", a.flip},
            {"rotate", a.rotate},
            {"contrast", a.contrast},
            {"flip_probability", a.flip_probability},
            {"rotate_probability", a.rotate_probability},
            {"max_rotation_deg", a.max_rotation_deg},
            {"contrast_probability", a.contrast_probability},
            {"gamma_low", a.gamma_low},
            {"gamma_high", a.gamma_high}};
}

AugmentOptions augment_from_json(const nlohmann::json& j) {
    AugmentOptions a;
    for (const auto& [k, v] : j.items()) {
        if (k == "flip") get_to(v, a.flip);
        else if (k == "rotate") get_to(v, a.rotate);
        else if (k == "contrast") get_to(v, a.contrast);
        else if (k == "flip_probability") get_to(v, a.flip_probability);
        else if (k == "rotate_probability") get_to(v, a.rotate_probability);
        else if (k == "max_rotation_deg") get_to(v, a.max_rotation_deg);
        else if (k == "contrast_probability") get_to(v, a.contrast_probability);
        else if (k == "gamma_low") get_to(v, a.gamma_low);
        else if (k == "gamma_high") get_to(v, a.gamma_high);
        else throw Error("unknown augmentation key '" + k + "'");
    }
    return a;
}

bool finite(const LossBreakdown& b) {
    return std::isfinite(b.total) && std::isfinite(b.l_zeta_en) && std::isfinite(b.l_zeta_de) &&
           std::isfinite(b.l_phi) && std::isfinite(b.l_xi) && std::isfinite(b.l_ds);
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b, double scale) {
    acc.total += scale * b.total;
    acc.l_zeta_en += scale * b.l_zeta_en;
    acc.l_zeta_de += scale * b.l_zeta_de;
    acc.l_phi += scale * b.l_phi;
    acc.l_xi += scale * b.l_xi;
    acc.l_ds += scale * b.l_ds;
}

// any foreground inside the s*s*s block
LabelVolume max_pool_label(const LabelVolume& y, int s) {
    const auto& sh = y.shape();
    LabelVolume out({sh.d / s, sh.h / s, sh.w / s}, 0);
    for (int64_t z = 0; z < sh.d; ++z)
        for (int64_t yy = 0; yy < sh.h; ++yy)
            for (int64_t x = 0; x < sh.w; ++x)
                if (y(z, yy, x)) out(z / s, yy / s, x / s) = 1;
    return out;
}

std::vector<float> to_float(const std::vector<double>& v, double scale = 1.0) {
    std::vector<float> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(scale * v[i]);
    return out;
}

}  // namespace

LabelRole parse_role(const std::string& s) {
    if (s == "full") return LabelRole::full;
    if (s == "low") return LabelRole::low;
    if (s == "high") return LabelRole::high;
    throw Error("unknown label role '" + s + "' (expected full, low or high)");
}

std::string role_name(LabelRole r) {
    switch (r) {
        case LabelRole::full: return "full";
        case LabelRole::low: return "low";
        case LabelRole::high: return "high";
    }
    return "?";
}

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
    model.backbone.validate();
    model.heads.validate(model.backbone);
    weights.validate();
    if (!(lr_init > 0)) throw Error("lr_init must be positive");
    if (!(lr_drop_factor >= 1)) throw Error("lr_drop_factor must be >= 1");
    if (max_epochs < 1) throw Error("max_epochs must be >= 1");
    if (stride < 0 || stride > patch_size()) throw Error("stride must lie in [1, patch_size] (0 selects patch_size/2)");
    if (!(keep_background >= 0 && keep_background <= 1)) throw Error("keep_background must lie in [0, 1]");
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    if (steps_per_epoch < 0) throw Error("steps_per_epoch must be >= 0");
    if (val_every < 1) throw Error("val_every must be >= 1");
    if (!(val_overlap >= 0 && val_overlap < 1)) throw Error("val_overlap must lie in [0, 1)");
    if (!(window.low < window.high)) throw Error("HU window must satisfy low < high");
    if (split_gen < 1 || fine_gen < 1) throw Error("generation thresholds must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"model", c.model},
         {"lr_init", c.lr_init},
         {"lr_drop_epochs", c.lr_drop_epochs},
         {"lr_drop_factor", c.lr_drop_factor},
         {"max_epochs", c.max_epochs},
         {"weights", weights_json(c.weights)},
         {"seed", c.seed},
         {"role", role_name(c.role)},
         {"split_gen", c.split_gen},
         {"fine_gen", c.fine_gen},
         {"stride", c.stride},
         {"keep_background", c.keep_background},
         {"batch_size", c.batch_size},
         {"steps_per_epoch", c.steps_per_epoch},
         {"augment", c.augment},
         {"augmentation", augment_json(c.augmentation)},
         {"window", {{"low", c.window.low}, {"high", c.window.high}}},
         {"val_every", c.val_every},
         {"val_overlap", c.val_overlap},
         {"deterministic", c.deterministic}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    if (!j.is_object()) throw Error("training config must be a JSON object");
    for (const auto& [k, v] : j.items()) {
        if (k == "model") c.model = v.get<NetConfig>();
        else if (k == "lr_init") get_to(v, c.lr_init);
        else if (k == "lr_drop_epochs") get_to(v, c.lr_drop_epochs);
        else if (k == "lr_drop_factor") get_to(v, c.lr_drop_factor);
        else if (k == "max_epochs") get_to(v, c.max_epochs);
        else if (k == "weights") c.weights = weights_from_json(v);
        else if (k == "seed") get_to(v, c.seed);
        else if (k == "role") c.role = parse_role(v.get<std::string>());
        else if (k == "split_gen") get_to(v, c.split_gen);
        else if (k == "fine_gen") get_to(v, c.fine_gen);
        else if (k == "stride") get_to(v, c.stride);
        else if (k == "keep_background") get_to(v, c.keep_background);
        else if (k == "batch_size") get_to(v, c.batch_size);
        else if (k == "steps_per_epoch") get_to(v, c.steps_per_epoch);
        else if (k == "augment") get_to(v, c.augment);
        else if (k == "augmentation") c.augmentation = augment_from_json(v);
        else if (k == "window") {
            for (const auto& [wk, wv] : v.items()) {
                if (wk == "low") get_to(wv, c.window.low);
                else if (wk == "high") get_to(wv, c.window.high);
                else throw Error("unknown window key '" + wk + "'");
            }
        } else if (k == "val_every") get_to(v, c.val_every);
        else if (k == "val_overlap") get_to(v, c.val_overlap);
        else if (k == "deterministic") get_to(v, c.deterministic);
        else throw Error("unknown training key '" + k + "'");
    }
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw Error("epoch must be >= 0");
    int k = 0;
    for (int e : cfg.lr_drop_epochs)
        if (e <= epoch) ++k;
    return cfg.lr_init / std::pow(cfg.lr_drop_factor, k);
}

void Adam::step(const std::vector<nn::Param*>& params, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const auto b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
    const auto step = static_cast<float>(lr / c1);
    const auto inv_c2 = static_cast<float>(1.0 / c2);
    const auto eps = static_cast<float>(eps_);
    for (auto* p : params) {
        for (size_t i = 0; i < p->size(); ++i) {
            const float g = p->g[i];
            p->m[i] = b1 * p->m[i] + (1.0f - b1) * g;
            p->u[i] = b2 * p->u[i] + (1.0f - b2) * g * g;
            p->w[i] -= step * p->m[i] / (std::sqrt(p->u[i] * inv_c2) + eps);
        }
    }
}

// ---------------------------------------------------------------- data

Case load_case(const std::filesystem::path& dir, const HuWindow& window) {
    Case c;
    c.id = dir.filename().string();
    c.image = preprocess(load_volume(dir / "image.nii.gz"), window);
    c.label = load_label(dir / "label.nii.gz");
    if (!(c.image.shape() == c.label.shape())) throw Error("image/label shape mismatch in " + dir.string());
    if (std::filesystem::exists(dir / "graph.json")) {
        c.graph = load_graph(dir / "graph.json");
    } else {
        c.graph = parse_branches(skeletonize(largest_component(c.label)), {}, &c.label);
    }
    return c;
}

LabelVolume role_label(const Case& c, LabelRole role, int split_gen) {
    if (role == LabelRole::full) return c.label;
    auto split = split_label_by_generation(c.label, c.graph, split_gen);
    return role == LabelRole::low ? std::move(split.low) : std::move(split.high);
}

// ---------------------------------------------------------------- loss

LossBreakdown patch_loss(const GddsOutputs& out, const LabelVolume& y, const LossWeights& w,
                         const HeadConfig& heads, OutputGrads* grads) {
    ProbGrid de(out.p_de.shape());
    std::copy(out.p_de.data().begin(), out.p_de.data().end(), de.data().begin());
    std::optional<ProbGrid> en;
    if (heads.encoder_gs && out.p_en) {
        en.emplace(out.p_en->shape());
        std::copy(out.p_en->data().begin(), out.p_en->data().end(), en->data().begin());
    }
    std::optional<DenseTensor> phat;
    if (heads.dds && out.phat_n) {
        phat.emplace();
        phat->n = out.phat_n->n;
        phat->role = DttRole::Prediction;
        phat->channels = out.phat_n->channels;
        phat->spatial = out.phat_n->spatial;
        phat->data.assign(out.phat_n->data.begin(), out.phat_n->data.end());
    }
    LossGradients lg;
    LossBreakdown lb = total_loss(en ? &*en : nullptr, de, phat ? &*phat : nullptr, y, w, grads ? &lg : nullptr);
    if (grads) {
        grads->p_de = to_float(lg.de_p);
        grads->p_en = to_float(lg.en_p);
        grads->phat_n = to_float(lg.phat_n);
        grads->p_ds.clear();
    }
    if (heads.deep_supervision && !out.p_ds.empty()) {
        const double share = 1.0 / static_cast<double>(out.p_ds.size());
        const auto fo = focal_options(w);
        for (const auto& [scale, p] : out.p_ds) {
            const LabelVolume ys = max_pool_label(y, scale);
            std::vector<double> pd(p.data().begin(), p.data().end()), t(ys.data().begin(), ys.data().end());
            std::vector<double> g(grads ? pd.size() : 0);
            lb.l_ds += share * focal_loss(pd, t, fo, g);
            if (grads) grads->p_ds.push_back(to_float(g, w.alpha * share));
        }
        lb.total += w.alpha * lb.l_ds;
    }
    return lb;
}

nlohmann::json epoch_log_json(const EpochLog& e, bool with_ds) {
    nlohmann::json j = {{"epoch", e.epoch},
                        {"lr", e.lr},
                        {"l_zeta_en", e.loss.l_zeta_en},
                        {"l_zeta_de", e.loss.l_zeta_de},
                        {"l_phi", e.loss.l_phi},
                        {"l_xi", e.loss.l_xi},
                        {"total", e.loss.total}};
    if (with_ds) j["l_ds"] = e.loss.l_ds;
    j["val_TD*"] = e.val ? nlohmann::json(*e.val) : nlohmann::json(nullptr);
    return j;
}

// ---------------------------------------------------------------- validation

double validation_score(const GddsNet& net, const std::vector<Case>& cases, const TrainConfig& cfg) {
    double sum = 0;
    int n = 0;
    MetricOptions mo;
    mo.fine_gen = cfg.fine_gen;
    mo.compute_branch_ratio = false;
    for (const auto& c : cases) {
        InferOptions io;
        io.overlap = cfg.val_overlap;
        const Volume p = sliding_window_infer(net, c.image, cfg.patch_size(), io);
        LabelVolume pred = binarize(p);
        // a single generation band is legitimately disconnected; only the
        // full-tree model is judged on its largest component
        if (cfg.role == LabelRole::full) pred = largest_component(pred);
        const auto r = compute_metrics(pred, c.label, c.graph, mo);
        const double v = cfg.role == LabelRole::low ? r.td : r.td_star;
        if (std::isfinite(v)) {
            sum += v;
            ++n;
        }
    }
    return n > 0 ? sum / n : 0.0;
}

// ---------------------------------------------------------------- training

void set_deterministic(bool on) {
    if (on) Eigen::setNbThreads(1);
}

bool deterministic_from_env() {
    const char* v = std::getenv("GDDS_DETERMINISTIC");
    return v && std::string(v) != "0" && std::string(v) != "";
}

TrainResult train(const TrainConfig& cfg, const std::vector<Case>& train_cases, const std::vector<Case>& val_cases,
                  const TrainHooks& hooks) {
    cfg.validate();
    set_deterministic(cfg.deterministic || deterministic_from_env());
    if (train_cases.empty()) throw Error("no training cases");
    const int64_t P = cfg.patch_size();
    const int64_t stride = cfg.stride > 0 ? cfg.stride : std::max<int64_t>(1, P / 2);

    std::vector<Patch> pool;
    for (size_t i = 0; i < train_cases.size(); ++i) {
        const auto& c = train_cases[i];
        const LabelVolume y = role_label(c, cfg.role, cfg.split_gen);
        auto ps = sample_patches(c.image, y, P, stride, cfg.keep_background, splitmix64(cfg.seed * 0x9e3779b1ULL + i + 1));
        for (auto& p : ps) pool.push_back(std::move(p));
    }
    if (pool.empty()) throw Error("patch sampling produced no training patches");

    TrainResult result;
    GddsNet net(cfg.model, cfg.seed);
    Adam opt;
    auto params = net.parameters();
    const int steps = cfg.steps_per_epoch > 0
                          ? cfg.steps_per_epoch
                          : static_cast<int>((pool.size() + cfg.batch_size - 1) / static_cast<size_t>(cfg.batch_size));
    std::ofstream log;
    if (!hooks.log_path.empty()) {
        if (hooks.log_path.has_parent_path()) std::filesystem::create_directories(hooks.log_path.parent_path());
        log.open(hooks.log_path);
        if (!log) throw Error("cannot write loss log " + hooks.log_path.string());
    }

    std::vector<size_t> order(pool.size());
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_schedule(epoch, cfg);
        std::iota(order.begin(), order.end(), size_t{0});
        std::mt19937_64 shuffle_rng(splitmix64(cfg.seed ^ (0x5eedULL + static_cast<uint64_t>(epoch) * 0x100000001b3ULL)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        EpochLog entry;
        entry.epoch = epoch;
        entry.lr = lr;
        size_t pos = 0;
        const double per_patch = 1.0 / static_cast<double>(steps * cfg.batch_size);
        for (int step = 0; step < steps; ++step) {
            net.zero_grad();
            for (int b = 0; b < cfg.batch_size; ++b, ++pos) {
                const Patch& src = pool[order[pos % order.size()]];
                const uint64_t aug_seed = splitmix64(cfg.seed ^ (static_cast<uint64_t>(epoch) << 32) ^ pos);
                const Patch patch = cfg.augment ? augment(src, aug_seed, cfg.augmentation) : src;
                GddsNet::Trace trace;
                const auto out = net.forward(patch.image, &trace);
                OutputGrads g;
                const auto lb = patch_loss(out, patch.label, cfg.weights, cfg.model.heads, &g);
                if (!finite(lb)) {
                    throw Error("training diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                                ": total=" + std::to_string(lb.total) + " (l_zeta_en=" + std::to_string(lb.l_zeta_en) +
                                ", l_zeta_de=" + std::to_string(lb.l_zeta_de) + ", l_phi=" + std::to_string(lb.l_phi) +
                                ", l_xi=" + std::to_string(lb.l_xi) + ")");
                }
                accumulate(entry.loss, lb, per_patch);
                const float inv = 1.0f / static_cast<float>(cfg.batch_size);
                for (auto* v : {&g.p_de, &g.p_en, &g.phat_n})
                    for (auto& x : *v) x *= inv;
                for (auto& v : g.p_ds)
                    for (auto& x : v) x *= inv;
                net.backward(trace, g);
            }
            opt.step(params, lr);
        }

        const bool last = epoch == cfg.max_epochs - 1;
        if (!val_cases.empty() && ((epoch + 1) % cfg.val_every == 0 || last)) {
            entry.val = validation_score(net, val_cases, cfg);
            if (!result.best_val || *entry.val > *result.best_val) {
                result.best_val = entry.val;
                result.best_epoch = epoch;
                result.best = net;
                if (!hooks.checkpoint_path.empty()) net.save(hooks.checkpoint_path);
            }
        } else if (val_cases.empty()) {
            result.best_epoch = epoch;
            if (last) {
                result.best = net;
                if (!hooks.checkpoint_path.empty()) net.save(hooks.checkpoint_path);
            }
        }
        entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (log) {
            log << epoch_log_json(entry, cfg.model.heads.deep_supervision).dump() << '\n';
            log.flush();
        }
        if (hooks.on_epoch) hooks.on_epoch(entry);
        result.log.push_back(entry);
    }
    return result;
}

}  // namespace gdds
