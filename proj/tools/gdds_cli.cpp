// gdds_cli: phantom | train | infer | merge | parse | eval | ablate | report
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "gdds/experiment.hpp"
#include "gdds/nifti.hpp"
#include "gdds/report.hpp"

namespace fs = std::filesystem;
using namespace gdds;

namespace {

struct ConfigError : Error {
    using Error::Error;
};

void note(const std::string& s) { std::cerr << s << '\n'; }

void write_text(const fs::path& p, const std::string& s) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    out << s;
}

void freeze_config(const ExperimentConfig& c, const fs::path& dir) {
    fs::create_directories(dir);
    write_text(dir / "config.json", nlohmann::json(c).dump(2) + "\n");
}

std::vector<std::string> split_ids(const DatasetManifest& m, const std::string& split) {
    if (split == "train") return m.train;
    if (split == "test") return m.test;
    if (split == "all") {
        auto v = m.train;
        v.insert(v.end(), m.test.begin(), m.test.end());
        return v;
    }
    throw ConfigError("--split must be train, test or all");
}

// options shared by subcommands that read an experiment config
struct Common {
    std::string config;
    std::optional<uint64_t> seed;
    std::optional<int> epochs;

    ExperimentConfig load() const {
        ExperimentConfig c;
        try {
            if (!config.empty()) c = load_experiment(config);
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
        if (seed) c.train.seed = *seed;
        if (epochs) c.train.max_epochs = *epochs;
        return c;
    }
};

void validated(const ExperimentConfig& c) {
    try {
        c.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Airway segmentation with group deep dense supervision"};
    app.require_subcommand(1);
    std::function<void()> run;

    // phantom
    Common ph_common;
    std::string ph_out;
    std::optional<int> ph_count, ph_generations;
    std::optional<int64_t> ph_grid;
    std::optional<uint64_t> ph_seed;
    std::optional<double> ph_noise;
    auto* ph = app.add_subcommand("phantom", "generate a synthetic airway dataset");
    ph->add_option("--config", ph_common.config, "experiment config (JSON)");
    ph->add_option("--out", ph_out, "dataset directory")->required();
    ph->add_option("--count", ph_count, "number of cases");
    ph->add_option("--seed", ph_seed, "dataset seed");
    ph->add_option("--generations", ph_generations, "tree generations");
    ph->add_option("--grid", ph_grid, "grid size in voxels");
    ph->add_option("--noise", ph_noise, "noise sigma in HU");
    ph->callback([&] {
        run = [&] {
            ExperimentConfig c = ph_common.load();
            if (ph_count) c.dataset.count = *ph_count;
            if (ph_seed) c.dataset.seed = *ph_seed;
            if (ph_generations) c.phantom.generations = *ph_generations;
            if (ph_grid) c.phantom.grid_size = *ph_grid;
            if (ph_noise) c.phantom.noise_sigma = *ph_noise;
            validated(c);
            const auto m = generate_dataset(c.phantom, c.dataset.count, c.dataset.seed, ph_out, c.dataset.train_fraction);
            freeze_config(c, ph_out);
            note("wrote " + std::to_string(m.train.size()) + " train / " + std::to_string(m.test.size()) +
                " test cases to " + ph_out);
        };
    });

    // train
    Common tr_common;
    std::string tr_data, tr_out, tr_role, tr_variant;
    auto* tr = app.add_subcommand("train", "train one model");
    tr->add_option("--config", tr_common.config, "experiment config (JSON)");
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--out", tr_out, "run directory")->required();
    tr->add_option("--seed", tr_common.seed, "training seed");
    tr->add_option("--epochs", tr_common.epochs, "maximum epochs");
    tr->add_option("--role", tr_role, "label role: full, low or high");
    tr->add_option("--variant", tr_variant, "baseline, gs_ds, gs_dds or gdds");
    tr->callback([&] {
        run = [&] {
            ExperimentConfig c = tr_common.load();
            try {
                if (!tr_role.empty()) c.train.role = parse_role(tr_role);
                if (!tr_variant.empty()) c.train = variant_config(c.train, parse_variant(tr_variant), c.ablation.n);
            } catch (const Error& e) {
                throw ConfigError(e.what());
            }
            validated(c);
            freeze_config(c, tr_out);
            const Split s = load_split(tr_data, c.dataset.val_count, c.train.window);
            TrainHooks hooks;
            hooks.log_path = fs::path(tr_out) / "loss_log.jsonl";
            hooks.checkpoint_path = fs::path(tr_out) / "model.gdds";
            hooks.on_epoch = [](const EpochLog& e) {
                char buf[160];
                std::snprintf(buf, sizeof(buf), "epoch %d  lr %.3g  loss %.5f  val %s  (%.1f s)", e.epoch, e.lr,
                              e.loss.total, e.val ? fmt(*e.val).c_str() : "-", e.seconds);
                note(buf);
            };
            const auto r = train(c.train, s.train, s.val, hooks);
            note("best epoch " + std::to_string(r.best_epoch) + ", checkpoint " + hooks.checkpoint_path.string());
        };
    });

    // infer
    std::string in_model, in_data, in_image, in_out, in_split = "test";
    std::optional<double> in_overlap, in_threshold;
    bool in_no_lcc = false;
    auto* inf = app.add_subcommand("infer", "sliding-window inference and binarization");
    inf->add_option("--model", in_model, "checkpoint")->required();
    auto* in_data_opt = inf->add_option("--data", in_data, "dataset directory");
    inf->add_option("--image", in_image, "single CT volume in HU")->excludes(in_data_opt);
    inf->add_option("--split", in_split, "train, test or all");
    inf->add_option("--out", in_out, "output directory")->required();
    inf->add_option("--overlap", in_overlap, "window overlap in [0, 1)");
    inf->add_option("--threshold", in_threshold, "binarization threshold");
    inf->add_flag("--no-lcc", in_no_lcc, "keep all components");
    inf->callback([&] {
        run = [&] {
            if (in_data.empty() == in_image.empty()) throw ConfigError("give exactly one of --data or --image");
            InferConfig ic;
            if (in_overlap) ic.overlap = *in_overlap;
            if (in_threshold) ic.threshold = *in_threshold;
            ic.largest_component = !in_no_lcc;
            if (!(ic.overlap >= 0 && ic.overlap < 1) || !(ic.threshold > 0 && ic.threshold < 1)) {
                throw ConfigError("overlap must lie in [0, 1) and threshold in (0, 1)");
            }
            set_deterministic(deterministic_from_env());
            const GddsNet net = GddsNet::load(in_model);
            fs::create_directories(in_out);
            auto one = [&](const Volume& img, const std::string& stem) {
                Volume prob;
                std::string warning;
                InferOptions io;
                io.overlap = ic.overlap;
                prob = sliding_window_infer(net, img, net.config().backbone.patch_size, io, &warning);
                if (!warning.empty()) note("warning: " + warning);
                LabelVolume m = binarize(prob, ic.threshold);
                if (ic.largest_component) m = largest_component(m);
                save_volume(prob, fs::path(in_out) / (stem + "_prob.nii.gz"));
                save_label(m, fs::path(in_out) / (stem + "_mask.nii.gz"));
            };
            if (!in_image.empty()) {
                one(preprocess(load_volume(in_image), HuWindow{}), "pred");
            } else {
                const auto m = load_manifest(in_data);
                for (const auto& id : split_ids(m, in_split)) {
                    one(preprocess(load_volume(fs::path(in_data) / id / "image.nii.gz"), HuWindow{}), id);
                    note("inferred " + id);
                }
            }
        };
    });

    // merge
    std::string mg_low, mg_high, mg_out;
    auto* mg = app.add_subcommand("merge", "voxelwise union of the low- and high-generation masks");
    mg->add_option("--low", mg_low, "low-generation mask")->required();
    mg->add_option("--high", mg_high, "bronchiole mask")->required();
    mg->add_option("--out", mg_out, "merged mask")->required();
    mg->callback([&] {
        run = [&] { save_label(merge_generation_outputs(load_label(mg_low), load_label(mg_high)), mg_out); };
    });

    // parse
    std::string pa_mask, pa_out;
    auto* pa = app.add_subcommand("parse", "mask to skeleton to branch graph JSON");
    pa->add_option("--mask", pa_mask, "binary mask")->required();
    pa->add_option("--out", pa_out, "graph JSON")->required();
    pa->callback([&] {
        run = [&] {
            const LabelVolume y = load_label(pa_mask);
            ParseDiagnostics d;
            const auto g = parse_branches(skeletonize(largest_component(y)), {}, &y, &d);
            for (const auto& w : d.warnings) note("warning: " + w);
            save_graph(g, pa_out);
            note(std::to_string(g.branches.size()) + " branches");
        };
    });

    // eval
    std::string ev_pred, ev_ref, ev_graph, ev_out, ev_csv, ev_pred_dir, ev_data, ev_split = "test";
    int ev_fine_gen = 4;
    std::string ev_fpr = "all";
    auto* ev = app.add_subcommand("eval", "airway metrics of a prediction");
    ev->add_option("--pred", ev_pred, "predicted mask");
    ev->add_option("--ref", ev_ref, "reference mask");
    ev->add_option("--graph", ev_graph, "reference graph JSON (parsed from --ref when absent)");
    ev->add_option("--pred-dir", ev_pred_dir, "directory of <case>_mask.nii.gz files");
    ev->add_option("--data", ev_data, "dataset directory for --pred-dir");
    ev->add_option("--split", ev_split, "train, test or all");
    ev->add_option("--fine-gen", ev_fine_gen, "first fine-scale generation");
    ev->add_option("--fpr-mode", ev_fpr, "all or dilated");
    ev->add_option("--out", ev_out, "report JSON");
    ev->add_option("--csv", ev_csv, "metrics CSV");
    ev->callback([&] {
        run = [&] {
            const bool single = !ev_pred.empty();
            if (single == !ev_pred_dir.empty()) throw ConfigError("give exactly one of --pred or --pred-dir");
            if (single && ev_ref.empty()) throw ConfigError("--pred needs --ref");
            if (!single && ev_data.empty()) throw ConfigError("--pred-dir needs --data");
            if (ev_fpr != "all" && ev_fpr != "dilated") throw ConfigError("--fpr-mode must be all or dilated");
            MetricConfig mc;
            mc.fine_gen = ev_fine_gen;
            mc.fpr_mode = ev_fpr;
            std::string csv = metrics_csv_header() + "\n";
            nlohmann::json reports = nlohmann::json::object();
            auto score = [&](const std::string& id, const LabelVolume& pred, Case c) {
                const auto r = evaluate_case(pred, c, mc);
                csv += metrics_csv_row(id, r) + "\n";
                reports[id] = metrics_to_json(r);
                note(metrics_csv_row(id, r));
            };
            if (single) {
                Case c;
                c.id = "case";
                c.label = load_label(ev_ref);
                c.graph = ev_graph.empty() ? parse_branches(skeletonize(largest_component(c.label)), {}, &c.label)
                                           : load_graph(ev_graph);
                score(fs::path(ev_pred).stem().stem().string(), load_label(ev_pred), c);
            } else {
                const auto m = load_manifest(ev_data);
                for (const auto& id : split_ids(m, ev_split)) {
                    Case c;
                    c.id = id;
                    c.label = load_label(fs::path(ev_data) / id / "label.nii.gz");
                    c.graph = load_graph(fs::path(ev_data) / id / "graph.json");
                    score(id, load_label(fs::path(ev_pred_dir) / (id + "_mask.nii.gz")), c);
                }
            }
            if (!ev_csv.empty()) write_text(ev_csv, csv);
            if (!ev_out.empty()) {
                write_text(ev_out, (single ? reports.begin().value() : reports).dump(2) + "\n");
            }
            if (ev_csv.empty() && ev_out.empty()) std::cout << csv;
        };
    });

    // ablate
    Common ab_common;
    std::string ab_data, ab_out;
    auto* ab = app.add_subcommand("ablate", "train and score every ablation variant");
    ab->add_option("--config", ab_common.config, "experiment config (JSON)");
    ab->add_option("--data", ab_data, "dataset directory (generated under --out when absent)");
    ab->add_option("--out", ab_out, "run directory")->required();
    ab->add_option("--epochs", ab_common.epochs, "maximum epochs");
    ab->callback([&] {
        run = [&] {
            ExperimentConfig c = ab_common.load();
            validated(c);
            freeze_config(c, ab_out);
            fs::path data = ab_data;
            if (data.empty()) {
                data = fs::path(ab_out) / "data";
                if (!fs::exists(data / "manifest.json")) {
                    generate_dataset(c.phantom, c.dataset.count, c.dataset.seed, data, c.dataset.train_fraction);
                }
            }
            const auto r = run_ablation(c, data, ab_out, note);
            std::cout << ablation_summary_csv(r);
            note("ablation took " + std::to_string(static_cast<int>(r.seconds)) + " s");
        };
    });

    // report
    std::string rp_image, rp_prob, rp_ref, rp_pred, rp_out;
    std::optional<int64_t> rp_axial, rp_coronal;
    int rp_scale = 4;
    auto* rp = app.add_subcommand("report", "PNG overlay slices");
    rp->add_option("--image", rp_image, "CT volume")->required();
    rp->add_option("--prob", rp_prob, "probability map");
    rp->add_option("--ref", rp_ref, "reference mask");
    rp->add_option("--pred", rp_pred, "predicted mask");
    rp->add_option("--out", rp_out, "output directory")->required();
    rp->add_option("--axial", rp_axial, "axial slice index");
    rp->add_option("--coronal", rp_coronal, "coronal slice index");
    rp->add_option("--scale", rp_scale, "pixel magnification")->check(CLI::Range(1, 16));
    rp->callback([&] {
        run = [&] {
            const Volume image = load_volume(rp_image);
            std::optional<Volume> prob;
            std::optional<LabelVolume> ref, pred;
            if (!rp_prob.empty()) prob = load_volume(rp_prob);
            if (!rp_ref.empty()) ref = load_label(rp_ref);
            if (!rp_pred.empty()) pred = load_label(rp_pred);
            ReportInputs in{&image, prob ? &*prob : nullptr, ref ? &*ref : nullptr, pred ? &*pred : nullptr};
            fs::create_directories(rp_out);
            for (auto [view, idx, name] : {std::tuple{View::axial, rp_axial, "axial"},
                                          std::tuple{View::coronal, rp_coronal, "coronal"}}) {
                const int64_t k = idx ? *idx : pick_slice(in, view);
                write_png(render_slice(in, view, k, rp_scale), fs::path(rp_out) / (std::string(name) + ".png"));
            }
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    try {
        run();
    } catch (const ConfigError& e) {
        note("config error: " + std::string(e.what()));
        return 1;
    } catch (const std::exception& e) {
        note("error: " + std::string(e.what()));
        return 2;
    }
    return 0;
}
