#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gdds/experiment.hpp"

namespace gdds {
namespace {

template <class F>
void for_keys(const nlohmann::json& j, const std::string& section, F&& f) {
    if (!j.is_object()) throw Error("'" + section + "' must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (!f(k, v)) throw Error("unknown key '" + k + "' in '" + section + "'");
}

// box dilation with Chebyshev radius r, one axis at a time
LabelVolume dilate(const LabelVolume& m, int r) {
    LabelVolume cur = m;
    const auto sh = m.shape();
    const int64_t ext[3] = {sh.d, sh.h, sh.w};
    for (int axis = 0; axis < 3; ++axis) {
        LabelVolume next(sh, 0, m.spacing());
        for (int64_t z = 0; z < sh.d; ++z)
            for (int64_t y = 0; y < sh.h; ++y)
                for (int64_t x = 0; x < sh.w; ++x) {
                    if (!cur(z, y, x)) continue;
                    int64_t p[3] = {z, y, x};
                    const int64_t c = p[axis];
                    for (int64_t t = std::max<int64_t>(0, c - r); t <= std::min<int64_t>(ext[axis] - 1, c + r); ++t) {
                        p[axis] = t;
                        next(p[0], p[1], p[2]) = 1;
                    }
                }
        cur = std::move(next);
    }
    return cur;
}

double nan_mean(const std::vector<double>& v) {
    double s = 0;
    int n = 0;
    for (double x : v)
        if (std::isfinite(x)) {
            s += x;
            ++n;
        }
    return n ? s / n : std::nan("");
}

double median(std::vector<double> v) {
    v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); }), v.end());
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const size_t k = v.size() / 2;
    return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

}  // namespace

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void ExperimentConfig::validate() const {
    phantom.validate();
    train.validate();
    if (dataset.count < 1) throw Error("dataset.count must be >= 1");
    if (!(dataset.train_fraction > 0 && dataset.train_fraction <= 1)) throw Error("dataset.train_fraction must lie in (0, 1]");
    if (dataset.val_count < 0) throw Error("dataset.val_count must be >= 0");
    if (!(infer.overlap >= 0 && infer.overlap < 1)) throw Error("infer.overlap must lie in [0, 1)");
    if (!(infer.threshold > 0 && infer.threshold < 1)) throw Error("infer.threshold must lie in (0, 1)");
    if (metrics.fine_gen < 1) throw Error("metrics.fine_gen must be >= 1");
    if (metrics.fpr_mode != "all" && metrics.fpr_mode != "dilated") throw Error("metrics.fpr_mode must be 'all' or 'dilated'");
    if (ablation.variants.empty() || ablation.seeds.empty()) throw Error("ablation needs at least one variant and one seed");
    for (const auto& v : ablation.variants) parse_variant(v);
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = {{"phantom", c.phantom},
         {"dataset",
          {{"count", c.dataset.count},
           {"seed", c.dataset.seed},
           {"train_fraction", c.dataset.train_fraction},
           {"val_count", c.dataset.val_count}}},
         {"train", c.train},
         {"infer",
          {{"overlap", c.infer.overlap},
           {"threshold", c.infer.threshold},
           {"largest_component", c.infer.largest_component}}},
         {"metrics",
          {{"fine_gen", c.metrics.fine_gen},
           {"detect_threshold", c.metrics.detect_threshold},
           {"fpr_mode", c.metrics.fpr_mode}}},
         {"ablation", {{"variants", c.ablation.variants}, {"seeds", c.ablation.seeds}, {"n", c.ablation.n}}}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    for_keys(j, "config", [&](const std::string& k, const nlohmann::json& v) {
        if (k == "phantom") {
            c.phantom = v.get<PhantomSpec>();
        } else if (k == "train") {
            c.train = v.get<TrainConfig>();
        } else if (k == "dataset") {
            for_keys(v, k, [&](const std::string& kk, const nlohmann::json& vv) {
                if (kk == "count") c.dataset.count = vv.get<int>();
                else if (kk == "seed") c.dataset.seed = vv.get<uint64_t>();
                else if (kk == "train_fraction") c.dataset.train_fraction = vv.get<double>();
                else if (kk == "val_count") c.dataset.val_count = vv.get<int>();
                else return false;
                return true;
            });
        } else if (k == "infer") {
            for_keys(v, k, [&](const std::string& kk, const nlohmann::json& vv) {
                if (kk == "overlap") c.infer.overlap = vv.get<double>();
                else if (kk == "threshold") c.infer.threshold = vv.get<double>();
                else if (kk == "largest_component") c.infer.largest_component = vv.get<bool>();
                else return false;
                return true;
            });
        } else if (k == "metrics") {
            for_keys(v, k, [&](const std::string& kk, const nlohmann::json& vv) {
                if (kk == "fine_gen") c.metrics.fine_gen = vv.get<int>();
                else if (kk == "detect_threshold") c.metrics.detect_threshold = vv.get<double>();
                else if (kk == "fpr_mode") c.metrics.fpr_mode = vv.get<std::string>();
                else return false;
                return true;
            });
        } else if (k == "ablation") {
            for_keys(v, k, [&](const std::string& kk, const nlohmann::json& vv) {
                if (kk == "variants") c.ablation.variants = vv.get<std::vector<std::string>>();
                else if (kk == "seeds") c.ablation.seeds = vv.get<std::vector<uint64_t>>();
                else if (kk == "n") c.ablation.n = vv.get<int>();
                else return false;
                return true;
            });
        } else {
            return false;
        }
        return true;
    });
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("config " + path.string() + " is not valid JSON: " + e.what());
    }
    ExperimentConfig c;
    try {
        c = j.get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw Error("config " + path.string() + ": " + e.what());
    }
    return c;
}

TrainConfig variant_config(const TrainConfig& base, Variant v, int n) {
    TrainConfig c = base;
    const auto bottleneck = c.model.heads.encoder_gs_bottleneck;
    c.model.heads = variant_heads(v, n);
    c.model.heads.encoder_gs_bottleneck = bottleneck;
    switch (v) {
        case Variant::baseline:
            c.weights.alpha = 0;
            c.weights.beta = 0;
            break;
        case Variant::gs_ds:
        case Variant::gs_dds:
            c.weights.beta = 0;
            break;
        case Variant::gdds:
            break;
    }
    return c;
}

Split load_split(const std::filesystem::path& data_dir, int val_count, const HuWindow& window) {
    const auto m = load_manifest(data_dir);
    if (static_cast<int>(m.train.size()) <= val_count) {
        throw Error("training split of " + std::to_string(m.train.size()) + " cases cannot spare " +
                    std::to_string(val_count) + " for validation");
    }
    Split s;
    const size_t n_fit = m.train.size() - static_cast<size_t>(val_count);
    for (size_t i = 0; i < m.train.size(); ++i)
        (i < n_fit ? s.train : s.val).push_back(load_case(data_dir / m.train[i], window));
    for (const auto& id : m.test) s.test.push_back(load_case(data_dir / id, window));
    return s;
}

LabelVolume predict_mask(const GddsNet& net, const Volume& image, const InferConfig& ic, Volume* prob) {
    InferOptions io;
    io.overlap = ic.overlap;
    Volume p = sliding_window_infer(net, image, net.config().backbone.patch_size, io);
    LabelVolume m = binarize(p, ic.threshold);
    if (ic.largest_component) m = largest_component(m);
    if (prob) *prob = std::move(p);
    return m;
}

MetricOptions metric_options(const MetricConfig& mc) {
    MetricOptions mo;
    mo.fine_gen = mc.fine_gen;
    mo.detect_threshold = mc.detect_threshold;
    return mo;
}

MetricsReport evaluate_case(const LabelVolume& pred, const Case& c, const MetricConfig& mc) {
    MetricOptions mo = metric_options(mc);
    LabelVolume region;
    if (mc.fpr_mode == "dilated") {
        region = dilate(c.label, 3);
        mo.fpr_region = &region;
    }
    return compute_metrics(pred, c.label, c.graph, mo);
}

MeanMetrics mean_metrics(const std::vector<MetricsReport>& rs) {
    auto col = [&](auto f) {
        std::vector<double> v;
        for (const auto& r : rs) v.push_back(f(r));
        return nan_mean(v);
    };
    MeanMetrics m;
    m.bd = col([](const MetricsReport& r) { return r.bd; });
    m.bd_star = col([](const MetricsReport& r) { return r.bd_star; });
    m.td = col([](const MetricsReport& r) { return r.td; });
    m.td_star = col([](const MetricsReport& r) { return r.td_star; });
    m.tpr = col([](const MetricsReport& r) { return r.tpr; });
    m.fpr = col([](const MetricsReport& r) { return r.fpr; });
    return m;
}

AblationResult run_ablation(const ExperimentConfig& cfg, const std::filesystem::path& data_dir,
                            const std::filesystem::path& out_dir,
                            const std::function<void(const std::string&)>& progress) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const Split split = load_split(data_dir, cfg.dataset.val_count, cfg.train.window);
    if (split.test.empty()) throw Error("dataset has no test cases");
    std::filesystem::create_directories(out_dir);

    AblationResult res;
    for (const auto& name : cfg.ablation.variants) {
        const Variant v = parse_variant(name);
        for (uint64_t seed : cfg.ablation.seeds) {
            const auto t1 = std::chrono::steady_clock::now();
            TrainConfig tc = variant_config(cfg.train, v, cfg.ablation.n);
            tc.seed = seed;
            const auto run_dir = out_dir / (name + "_seed" + std::to_string(seed));
            TrainHooks hooks;
            hooks.log_path = run_dir / "loss_log.jsonl";
            hooks.checkpoint_path = run_dir / "best.gdds";
            const auto tr = train(tc, split.train, split.val, hooks);

            std::vector<MetricsReport> reports;
            std::ostringstream csv;
            csv << metrics_csv_header() << '\n';
            for (const auto& c : split.test) {
                reports.push_back(evaluate_case(predict_mask(tr.best, c.image, cfg.infer), c, cfg.metrics));
                csv << metrics_csv_row(c.id, reports.back()) << '\n';
            }
            std::ofstream(run_dir / "test_metrics.csv") << csv.str();

            AblationRun run;
            run.variant = name;
            run.seed = seed;
            run.test = mean_metrics(reports);
            run.best_epoch = tr.best_epoch;
            run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
            res.runs.push_back(run);
            if (progress) {
                progress(name + " seed " + std::to_string(seed) + ": BD* " + fmt(run.test.bd_star) + " TD* " +
                         fmt(run.test.td_star) + " (best epoch " + std::to_string(run.best_epoch) + ", " +
                         std::to_string(static_cast<int>(run.seconds)) + " s)");
            }
        }
        AblationSummary s;
        s.variant = name;
        std::vector<double> bd, bds, td, tds, tpr, fpr;
        for (const auto& r : res.runs) {
            if (r.variant != name) continue;
            bd.push_back(r.test.bd);
            bds.push_back(r.test.bd_star);
            td.push_back(r.test.td);
            tds.push_back(r.test.td_star);
            tpr.push_back(r.test.tpr);
            fpr.push_back(r.test.fpr);
        }
        s.median = {median(bd), median(bds), median(td), median(tds), median(tpr), median(fpr)};
        res.summary.push_back(s);
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ofstream(out_dir / "runs.csv") << ablation_runs_csv(res);
    std::ofstream(out_dir / "ablation.csv") << ablation_summary_csv(res);
    return res;
}

std::string ablation_runs_csv(const AblationResult& r) {
    std::string s = "variant,seed,BD,BD*,TD,TD*,TPR,FPR,best_epoch,seconds\n";
    for (const auto& x : r.runs) {
        s += x.variant + "," + std::to_string(x.seed) + "," + fmt(x.test.bd) + "," + fmt(x.test.bd_star) + "," +
             fmt(x.test.td) + "," + fmt(x.test.td_star) + "," + fmt(x.test.tpr) + "," + fmt(x.test.fpr) + "," +
             std::to_string(x.best_epoch) + "," + std::to_string(static_cast<int64_t>(x.seconds)) + "\n";
    }
    return s;
}

std::string ablation_summary_csv(const AblationResult& r) {
    std::string s = "variant,BD,BD*,TD,TD*,TPR,FPR\n";
    for (const auto& x : r.summary) {
        s += x.variant + "," + fmt(x.median.bd) + "," + fmt(x.median.bd_star) + "," + fmt(x.median.td) + "," +
             fmt(x.median.td_star) + "," + fmt(x.median.tpr) + "," + fmt(x.median.fpr) + "\n";
    }
    return s;
}

}  // namespace gdds
