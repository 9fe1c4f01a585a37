#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "gdds/topology.hpp"

namespace gdds {
namespace {

double ratio_or_nan(double num, double den) {
    return den > 0 ? num / den : std::numeric_limits<double>::quiet_NaN();
}

nlohmann::json number_or_null(double v) {
    if (std::isnan(v)) return nullptr;
    return v;
}

}  // namespace

Grid3<int32_t> assign_voxels_to_branches(const LabelVolume& y, const BranchGraph& g, double max_dist) {
    const auto& s = y.shape();
    Grid3<int32_t> owner(s, -1, y.spacing());
    for (const auto& b : g.branches) {
        for (const auto& v : b.centerline) {
            if (!s.contains(v[0], v[1], v[2])) throw Error("centreline voxel outside the label grid");
            auto& o = owner(v[0], v[1], v[2]);
            if (o < 0 || b.id < o) o = b.id;
        }
    }
    Grid3<int32_t> out(s, -1, y.spacing());
    const auto reach = static_cast<int64_t>(std::ceil(max_dist));
    const double max_d2 = max_dist * max_dist;
    std::vector<Index3> orphans;
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t yy = 0; yy < s.h; ++yy)
            for (int64_t x = 0; x < s.w; ++x) {
                if (!y(z, yy, x)) continue;
                int64_t best_d2 = std::numeric_limits<int64_t>::max();
                int32_t best = -1;
                for (int64_t r = 0; r <= reach; ++r) {
                    if (best >= 0 && r * r > best_d2) break;
                    for (int64_t dz = -r; dz <= r; ++dz)
                        for (int64_t dy = -r; dy <= r; ++dy)
                            for (int64_t dx = -r; dx <= r; ++dx) {
                                if (std::max({std::abs(dz), std::abs(dy), std::abs(dx)}) != r) continue;
                                if (!s.contains(z + dz, yy + dy, x + dx)) continue;
                                const int32_t o = owner(z + dz, yy + dy, x + dx);
                                if (o < 0) continue;
                                const int64_t d2 = dz * dz + dy * dy + dx * dx;
                                if (d2 < best_d2 || (d2 == best_d2 && o < best)) {
                                    best_d2 = d2;
                                    best = o;
                                }
                            }
                }
                if (best < 0 || static_cast<double>(best_d2) > max_d2) {
                    orphans.push_back({z, yy, x});
                    continue;
                }
                out(z, yy, x) = best;
            }
    if (!orphans.empty()) {
        std::string msg = std::to_string(orphans.size()) +
                          " foreground voxel(s) farther than " + std::to_string(max_dist) +
                          " voxels from every centreline:";
        for (size_t i = 0; i < std::min<size_t>(orphans.size(), 10); ++i) {
            msg += " (" + std::to_string(orphans[i][0]) + "," + std::to_string(orphans[i][1]) + "," +
                   std::to_string(orphans[i][2]) + ")";
        }
        if (orphans.size() > 10) msg += " ...";
        throw Error(msg);
    }
    return out;
}

MetricsReport compute_metrics(const LabelVolume& pred, const LabelVolume& ref,
                              const BranchGraph& ref_graph, const MetricOptions& opts) {
    if (!(pred.shape() == ref.shape())) throw Error("compute_metrics: prediction/reference shapes differ");
    if (opts.fpr_region && !(opts.fpr_region->shape() == ref.shape())) {
        throw Error("compute_metrics: FPR region shape differs from reference");
    }
    const int64_t ref_count = count_foreground(ref);
    if (ref_count == 0) throw Error("compute_metrics: reference mask is empty");
    if (ref_graph.branches.empty()) throw Error("compute_metrics: reference graph has no branches");

    MetricsReport r;
    r.empty_prediction = count_foreground(pred) == 0;

    Grid3<int32_t> owner;
    std::vector<int64_t> vol_total, vol_hit;
    if (opts.volumetric_branch_voxels) {
        owner = assign_voxels_to_branches(ref, ref_graph, opts.assign_max_dist);
        vol_total.assign(ref_graph.size(), 0);
        vol_hit.assign(ref_graph.size(), 0);
        for (int64_t i = 0; i < ref.size(); ++i) {
            if (owner[i] < 0) continue;
            ++vol_total[owner[i]];
            if (pred[i]) ++vol_hit[owner[i]];
        }
    }

    for (const auto& b : ref_graph.branches) {
        int64_t hits = 0;
        for (const auto& v : b.centerline) hits += pred(v[0], v[1], v[2]) ? 1 : 0;
        const auto total = static_cast<int64_t>(b.centerline.size());
        const bool fine = b.generation >= opts.fine_gen;
        int64_t num = hits, den = total;
        if (opts.volumetric_branch_voxels) {
            num = vol_hit[b.id];
            den = vol_total[b.id];
        }
        BranchDetection det;
        det.id = b.id;
        det.generation = b.generation;
        det.fraction = den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
        det.detected = den > 0 && static_cast<double>(num) + 1e-9 >= opts.detect_threshold * static_cast<double>(den);
        r.per_branch.push_back(det);

        ++r.branches;
        r.detected += det.detected;
        r.centerline_voxels += total;
        r.detected_centerline_voxels += hits;
        if (fine) {
            ++r.fine_branches;
            r.fine_detected += det.detected;
            r.fine_centerline_voxels += total;
            r.fine_detected_centerline_voxels += hits;
        }
    }
    r.bd = ratio_or_nan(r.detected, r.branches);
    r.bd_star = ratio_or_nan(r.fine_detected, r.fine_branches);
    r.td = ratio_or_nan(static_cast<double>(r.detected_centerline_voxels), static_cast<double>(r.centerline_voxels));
    r.td_star = ratio_or_nan(static_cast<double>(r.fine_detected_centerline_voxels),
                             static_cast<double>(r.fine_centerline_voxels));

    int64_t tp = 0, fp = 0, negatives = 0;
    for (int64_t i = 0; i < ref.size(); ++i) {
        if (ref[i]) {
            tp += pred[i] ? 1 : 0;
            continue;
        }
        if (opts.fpr_region && !(*opts.fpr_region)[i]) continue;
        ++negatives;
        fp += pred[i] ? 1 : 0;
    }
    r.tpr = static_cast<double>(tp) / static_cast<double>(ref_count);
    r.fpr = negatives > 0 ? static_cast<double>(fp) / static_cast<double>(negatives) : 0.0;

    if (opts.compute_branch_ratio && !r.empty_prediction) {
        const auto g = parse_branches(skeletonize(pred), opts.parse, &pred);
        r.predicted_branches = static_cast<int>(g.size());
        r.br = static_cast<double>(g.size()) / static_cast<double>(ref_graph.size());
    }
    return r;
}

nlohmann::json graph_to_json(const BranchGraph& g) {
    nlohmann::json branches = nlohmann::json::array();
    for (const auto& b : g.branches) {
        nlohmann::json cl = nlohmann::json::array();
        for (const auto& v : b.centerline) cl.push_back({v[0], v[1], v[2]});
        branches.push_back({{"id", b.id},
                            {"parent", b.parent ? nlohmann::json(*b.parent) : nlohmann::json(nullptr)},
                            {"children", b.children},
                            {"generation", b.generation},
                            {"centerline", std::move(cl)}});
    }
    return {{"root_id", g.root_id}, {"branches", std::move(branches)}};
}

BranchGraph graph_from_json(const nlohmann::json& j) {
    try {
        BranchGraph g;
        g.root_id = j.at("root_id").get<int>();
        for (const auto& jb : j.at("branches")) {
            Branch b;
            b.id = jb.at("id").get<int>();
            if (!jb.at("parent").is_null()) b.parent = jb.at("parent").get<int>();
            b.children = jb.at("children").get<std::vector<int>>();
            b.generation = jb.at("generation").get<int>();
            for (const auto& v : jb.at("centerline")) {
                b.centerline.push_back({v.at(0).get<int64_t>(), v.at(1).get<int64_t>(), v.at(2).get<int64_t>()});
            }
            if (b.id != static_cast<int>(g.branches.size())) {
                throw Error("branch ids must be consecutive from 0");
            }
            g.branches.push_back(std::move(b));
        }
        if (!g.branches.empty() && (g.root_id < 0 || g.root_id >= static_cast<int>(g.size()))) {
            throw Error("root_id out of range");
        }
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed branch graph JSON: ") + e.what());
    }
}

void save_graph(const BranchGraph& g, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << graph_to_json(g).dump() << '\n';
}

BranchGraph load_graph(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path.string());
    try {
        return graph_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("invalid JSON in " + path.string() + ": " + e.what());
    }
}

nlohmann::json metrics_to_json(const MetricsReport& r) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& b : r.per_branch) {
        per.push_back({{"id", b.id}, {"generation", b.generation}, {"detected", b.detected},
                       {"fraction", b.fraction}});
    }
    return {{"BD", number_or_null(r.bd)},
            {"BD*", number_or_null(r.bd_star)},
            {"TD", number_or_null(r.td)},
            {"TD*", number_or_null(r.td_star)},
            {"TPR", number_or_null(r.tpr)},
            {"FPR", number_or_null(r.fpr)},
            {"BR", number_or_null(r.br)},
            {"empty_prediction", r.empty_prediction},
            {"branches", r.branches},
            {"fine_branches", r.fine_branches},
            {"predicted_branches", r.predicted_branches},
            {"per_branch", std::move(per)}};
}

std::string metrics_csv_header() { return "case,BD,BD*,TD,TD*,TPR,FPR,BR"; }

std::string metrics_csv_row(const std::string& case_id, const MetricsReport& r) {
    std::string row = case_id;
    for (double v : {r.bd, r.bd_star, r.td, r.td_star, r.tpr, r.fpr, r.br}) {
        char buf[32];
        if (std::isnan(v)) {
            std::snprintf(buf, sizeof(buf), ",nan");
        } else {
            std::snprintf(buf, sizeof(buf), ",%.6f", v);
        }
        row += buf;
    }
    return row;
}

}  // namespace gdds
