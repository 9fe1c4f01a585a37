// Acceptance checks. One PASS/FAIL line per criterion; exit status 0 only if all selected pass.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "gdds/dtt.hpp"
#include "gdds/experiment.hpp"
#include "gdds/label_split.hpp"
#include "gdds/losses.hpp"
#include "gdds/net.hpp"
#include "gdds/phantom.hpp"
#include "gdds/topology.hpp"

using namespace gdds;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int prec = 6) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------- 1

template <class T>
std::vector<T> nested_forward(const Grid3<T>& v, int n) {
    const auto& s = v.shape();
    const int64_t H = s.d / n, W = s.h / n, L = s.w / n;
    std::vector<T> out(static_cast<size_t>(v.size()));
    for (int dz = 0; dz < n; ++dz)
        for (int dy = 0; dy < n; ++dy)
            for (int dx = 0; dx < n; ++dx)
                for (int64_t a = 0; a < H; ++a)
                    for (int64_t b = 0; b < W; ++b)
                        for (int64_t d = 0; d < L; ++d) {
                            const int64_t c = dz * n * n + dy * n + dx;
                            out[static_cast<size_t>(((c * H + a) * W + b) * L + d)] = v(a * n + dz, b * n + dy, d * n + dx);
                        }
    return out;
}

Outcome dtt_bijection() {
    std::mt19937_64 rng(20240601);
    const int factors[] = {1, 2, 4, 8};
    std::uniform_real_distribution<float> u(-1e3f, 1e3f);
    int exact = 0, layout = 0;
    double seconds = 0;
    for (int i = 0; i < 200; ++i) {
        const int n = factors[i % 4];
        std::uniform_int_distribution<int64_t> k(1, std::max<int64_t>(1, 24 / n));
        const Shape3 s{n * k(rng), n * k(rng), n * k(rng)};
        Volume v(s);
        for (auto& x : v.data()) x = u(rng);
        const auto t0 = Clock::now();
        const auto t = dtt_forward(v, n);
        const Volume back = dtt_inverse(t, n);
        seconds += since(t0);
        if (back.shape() == s && std::memcmp(back.data().data(), v.data().data(), sizeof(float) * v.data().size()) == 0)
            ++exact;
        if (t.data == nested_forward(v, n)) ++layout;
    }
    return {exact == 200 && layout == 200 && seconds < 5.0,
            std::to_string(exact) + "/200 round trips bit-exact, " + std::to_string(layout) +
                "/200 match the nested-loop layout, " + num(seconds, 3) + " s"};
}

// ---------------------------------------------------------------- 2

Outcome loss_values() {
    struct Row {
        const char* name;
        double got, want;
    };
    std::vector<Row> rows;
    rows.push_back({"focal(0.5|1)", focal_loss(std::vector<double>{0.5}, std::vector<double>{1.0}), 0.173287});
    rows.push_back({"focal(0.9|0)", focal_loss(std::vector<double>{0.9}, std::vector<double>{0.0}), 1.865094});

    DenseTensor t;
    t.n = 1;
    t.channels = 1;
    t.spatial = {1, 1, 1};
    ProbGrid p({1, 1, 1});
    t.data = {0.8};
    p[0] = 0.9;
    rows.push_back({"consistency fg", consistency_loss(t, p, LabelVolume({1, 1, 1}, 1), 1), 0.025755});
    t.data = {0.2};
    p[0] = 0.4;
    rows.push_back({"consistency bg", consistency_loss(t, p, LabelVolume({1, 1, 1}, 0), 1), 0.032101});

    rows.push_back({"dicefocal", dice_focal_loss(std::vector<double>{1 - 1e-7, 0.5}, std::vector<double>{1, 1}, 1e-5, 1e-7),
                    -0.770497});

    LossBreakdown parts;
    parts.l_zeta_en = -0.9;
    parts.l_zeta_de = -0.95;
    parts.l_phi = 0.05;
    parts.l_xi = 0.02;
    rows.push_back({"total", weighted_total(parts, LossWeights{}), -1.794});

    double worst = 0;
    std::string bad;
    for (const auto& r : rows) {
        const double e = std::abs(r.got - r.want);
        worst = std::max(worst, e);
        if (!(e <= 1e-5)) bad += std::string(" ") + r.name + "=" + num(r.got, 8);
    }
    return {bad.empty(), std::to_string(rows.size()) + " values, max abs error " + num(worst, 3) + bad};
}

// ---------------------------------------------------------------- 3

std::vector<double> as_double(const std::vector<uint8_t>& v) { return {v.begin(), v.end()}; }

LabelVolume random_label(Shape3 s, std::mt19937_64& rng) {
    std::bernoulli_distribution b(0.3);
    LabelVolume y(s);
    for (auto& x : y.data()) x = b(rng) ? 1 : 0;
    return y;
}

ProbGrid random_prob(Shape3 s, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.02, 0.98);
    ProbGrid p(s);
    for (auto& x : p.data()) x = u(rng);
    return p;
}

DenseTensor random_dense(Shape3 s, int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.02, 0.98);
    DenseTensor t;
    t.n = n;
    t.channels = int64_t{n} * n * n;
    t.spatial = {s.d / n, s.h / n, s.w / n};
    t.data.resize(static_cast<size_t>(s.size()));
    for (auto& x : t.data) x = u(rng);
    return t;
}

double fd_error(std::vector<double>& x, const std::vector<double>& analytic, const std::function<double()>& f) {
    const double h = 1e-5;
    double worst = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double old = x[i];
        x[i] = old + h;
        const double fp = f();
        x[i] = old - h;
        const double fm = f();
        x[i] = old;
        const double fd = (fp - fm) / (2 * h);
        worst = std::max(worst, std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), 1e-6}));
    }
    return worst;
}

Outcome gradient_checks() {
    const Shape3 s{4, 4, 4};
    std::mt19937_64 rng(77);
    double focal = 0, dice = 0, dds = 0, cons = 0;
    for (int rep = 0; rep < 20; ++rep) {
        const LabelVolume y = random_label(s, rng);
        const auto t = as_double(y.data());
        {
            auto p = random_prob(s, rng).data();
            std::vector<double> g(p.size());
            focal_loss(p, t, {}, g);
            focal = std::max(focal, fd_error(p, g, [&] { return focal_loss(p, t); }));
        }
        {
            auto p = random_prob(s, rng).data();
            std::vector<double> g(p.size());
            dice_focal_loss(p, t, 1e-5, 1e-7, g);
            dice = std::max(dice, fd_error(p, g, [&] { return dice_focal_loss(p, t); }));
        }
        {
            DenseTensor a = random_dense(s, 2, rng);
            std::vector<double> g(a.data.size());
            dds_loss(a, y, 2, {}, g);
            dds = std::max(dds, fd_error(a.data, g, [&] { return dds_loss(a, y, 2); }));
        }
        {
            DenseTensor a = random_dense(s, 2, rng);
            ProbGrid p = random_prob(s, rng);
            std::vector<double> ga(a.data.size()), gp(static_cast<size_t>(p.size()));
            consistency_loss(a, p, y, 2, {}, ga, gp);
            auto f = [&] { return consistency_loss(a, p, y, 2); };
            cons = std::max({cons, fd_error(a.data, ga, f), fd_error(p.data(), gp, f)});
        }
    }
    const double worst = std::max({focal, dice, dds, cons});
    return {worst < 1e-4, "max relative error focal " + num(focal, 3) + ", dicefocal " + num(dice, 3) + ", dds " +
                              num(dds, 3) + ", consistency " + num(cons, 3)};
}

// ---------------------------------------------------------------- 4

PhantomCase phantom(int generations, uint64_t seed) {
    PhantomSpec s;
    s.generations = generations;
    s.seed = seed;
    s.grid_size = generations >= 6 ? 96 : 64;
    return generate_tree(s);
}

struct Tally {
    int64_t b = 0, fb = 0, det = 0, fdet = 0, cl = 0, fcl = 0, dcl = 0, fdcl = 0, tp = 0, ref = 0, fp = 0, bg = 0;
};

Tally brute_force(const LabelVolume& pred, const LabelVolume& ref, const BranchGraph& g, int fine_gen) {
    Tally o;
    for (const auto& b : g.branches) {
        int64_t in = 0;
        for (const auto& v : b.centerline) in += pred(v[0], v[1], v[2]) ? 1 : 0;
        const auto len = static_cast<int64_t>(b.centerline.size());
        const bool detected = 10 * in >= 8 * len;
        ++o.b;
        o.det += detected;
        o.cl += len;
        o.dcl += in;
        if (b.generation >= fine_gen) {
            ++o.fb;
            o.fdet += detected;
            o.fcl += len;
            o.fdcl += in;
        }
    }
    for (int64_t i = 0; i < ref.size(); ++i) {
        if (ref[i]) {
            ++o.ref;
            o.tp += pred[i] ? 1 : 0;
        } else {
            ++o.bg;
            o.fp += pred[i] ? 1 : 0;
        }
    }
    return o;
}

double ratio(int64_t a, int64_t b) { return static_cast<double>(a) / static_cast<double>(b); }

bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

Outcome metrics_oracle() {
    int phantoms = 0, agree = 0, deletions = 0, deletions_ok = 0;
    MetricOptions mo;
    mo.compute_branch_ratio = false;
    for (int gens : {3, 4, 5, 6}) {
        for (uint64_t seed = 0; seed < 6; ++seed) {
            const auto pc = phantom(gens, 700 + seed);
            const auto& g = pc.graph;
            const auto owner = assign_voxels_to_branches(pc.label, g);
            ++phantoms;

            std::mt19937_64 rng(seed * 31 + static_cast<uint64_t>(gens));
            std::bernoulli_distribution drop(0.3), flip(0.002);
            std::vector<bool> dropped(g.size());
            for (auto&& d : dropped) d = drop(rng);
            LabelVolume pred = pc.label;
            for (int64_t i = 0; i < pred.size(); ++i) {
                if (owner[i] >= 0 && dropped[static_cast<size_t>(owner[i])]) pred[i] = 0;
                if (flip(rng)) pred[i] = 1 - pred[i];
            }
            const auto r = compute_metrics(pred, pc.label, g, mo);
            const auto o = brute_force(pred, pc.label, g, mo.fine_gen);
            const double nan = std::nan("");
            const bool ok = r.branches == o.b && r.detected == o.det && r.fine_branches == o.fb &&
                            r.fine_detected == o.fdet && r.centerline_voxels == o.cl &&
                            r.detected_centerline_voxels == o.dcl && r.fine_centerline_voxels == o.fcl &&
                            r.fine_detected_centerline_voxels == o.fdcl && same(r.bd, ratio(o.det, o.b)) &&
                            same(r.td, ratio(o.dcl, o.cl)) && same(r.bd_star, o.fb ? ratio(o.fdet, o.fb) : nan) &&
                            same(r.td_star, o.fcl ? ratio(o.fdcl, o.fcl) : nan) && same(r.tpr, ratio(o.tp, o.ref)) &&
                            same(r.fpr, ratio(o.fp, o.bg));
            agree += ok;

            const auto B = static_cast<int64_t>(g.size());
            const auto total = static_cast<int64_t>(g.centerline_voxel_count());
            for (const auto& b : g.branches) {
                LabelVolume cut = pc.label;
                for (int64_t i = 0; i < cut.size(); ++i)
                    if (owner[i] == b.id) cut[i] = 0;
                const auto d = compute_metrics(cut, pc.label, g, mo);
                const auto len = static_cast<int64_t>(b.centerline.size());
                ++deletions;
                deletions_ok += d.detected == B - 1 && d.detected_centerline_voxels == total - len &&
                                std::abs(d.bd - (1.0 - 1.0 / static_cast<double>(B))) < 1e-12 &&
                                std::abs(d.td - (1.0 - ratio(len, total))) < 1e-12;
            }
        }
    }
    return {phantoms >= 20 && agree == phantoms && deletions_ok == deletions,
            std::to_string(agree) + "/" + std::to_string(phantoms) + " phantoms match the oracle, " +
                std::to_string(deletions_ok) + "/" + std::to_string(deletions) + " single-branch deletions exact"};
}

// ---------------------------------------------------------------- 5

Outcome parser_recovery() {
    int total = 0, ok = 0;
    std::string bad;
    for (int gens = 1; gens <= 6; ++gens) {
        for (uint64_t seed = 0; seed < (gens == 6 ? 3u : 6u); ++seed) {
            const auto pc = phantom(gens, 4000 + 10 * static_cast<uint64_t>(gens) + seed);
            const auto g = assign_generations(parse_branches(skeletonize(largest_component(pc.label)), {}, &pc.label));
            std::multiset<int> got, want;
            for (const auto& b : g.branches) got.insert(b.generation);
            for (int k = 1; k <= gens; ++k)
                for (int i = 0; i < (1 << (k - 1)); ++i) want.insert(k);
            ++total;
            if (g.size() == (size_t{1} << gens) - 1 && got == want) {
                ++ok;
            } else {
                bad += " g" + std::to_string(gens) + "/s" + std::to_string(seed) + ":" + std::to_string(g.size());
            }
        }
    }
    return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " phantoms (1-6 generations) recovered" + bad};
}

// ---------------------------------------------------------------- 6

Outcome parameter_overhead() {
    std::string detail;
    bool pass = true;
    for (int n : {2, 4}) {
        NetConfig cfg;
        cfg.backbone.depth = 4;
        cfg.backbone.base_channels = 16;
        cfg.heads = variant_heads(Variant::gdds, n);
        const auto pc = GddsNet(cfg, 0).count_parameters();

        // closed forms: pointwise GS heads and the two-layer dense head
        int64_t enc = 1, dec = 1;
        for (int l = 0; l < 4; ++l) enc += cfg.backbone.channels(l);
        for (int l = 0; l < 3; ++l) dec += cfg.backbone.channels(l);
        const int64_t c = cfg.backbone.channels(n == 2 ? 1 : 2), n3 = int64_t{n} * n * n;
        const int64_t dds = c * c + c + c * n3 + n3;
        const bool forms = pc.encoder_gs == enc && pc.decoder_gs == dec && pc.dds == dds;

        const double r = pc.overhead_ratio();
        // the bound applies at the default n = 2; n = 4 is reported for reference
        pass = pass && forms && (n != 2 || r < 0.005);
        detail += (detail.empty() ? "" : "; ") + std::string("n=") + std::to_string(n) + ": " +
                  std::to_string(pc.gdds_heads()) + " / " + std::to_string(pc.backbone + pc.decoder_gs) + " = " +
                  num(100 * r, 4) + "%" + (n == 2 ? "" : " (reference only)") + (forms ? "" : " (head counts disagree with closed form)");
    }
    return {pass, detail};
}

// ---------------------------------------------------------------- 7

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(slurp(p));
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

int run(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

struct Env {
    fs::path cli, work, ablation_dir, ablation_config;
    bool run_ablation = false;
};

Outcome ablation(const Env& env) {
    const fs::path dir = env.ablation_dir.empty() ? env.work / "ablation" : env.ablation_dir;
    std::optional<double> wall;
    if (!fs::exists(dir / "runs.csv")) {
        if (!env.run_ablation) return {false, "no results in " + dir.string() + " (use --run-ablation)"};
        const auto t0 = Clock::now();
        const int code = run("GDDS_DETERMINISTIC=1 " + q(env.cli) + " ablate --config " + q(env.ablation_config) +
                             " --out " + q(dir) + " >" + q(dir.string() + ".log") + " 2>&1");
        wall = since(t0);
        if (code != 0) return {false, "ablate exited with " + std::to_string(code)};
    }

    // the run must follow the required protocol
    const auto c = load_experiment(dir / "config.json");
    std::string protocol;
    const auto m = load_manifest(dir / "data");
    if (m.train.size() != 30 || m.test.size() != 10) protocol += " split";
    if (m.spec.grid_size != 64 || m.spec.generations != 5) protocol += " phantom";
    if (c.metrics.fine_gen != 4) protocol += " fine_gen";
    if (c.train.max_epochs > 40) protocol += " epochs";
    if (c.ablation.seeds.size() != 3) protocol += " seeds";
    if (c.ablation.n != 2) protocol += " n";
    const std::set<std::string> variants(c.ablation.variants.begin(), c.ablation.variants.end());
    if (variants != std::set<std::string>{"baseline", "gs_ds", "gs_dds", "gdds"}) protocol += " variants";
    if (!protocol.empty()) return {false, "config deviates from the protocol:" + protocol};

    const auto rows = read_csv(dir / "runs.csv");
    if (rows.empty()) return {false, "empty runs.csv"};
    const auto& head = rows[0];
    auto col = [&](const std::string& name) {
        return static_cast<size_t>(std::find(head.begin(), head.end(), name) - head.begin());
    };
    const size_t ibd = col("BD*"), itd = col("TD*"), isec = col("seconds");
    std::map<std::string, std::vector<double>> bd, td;
    double seconds = 0;
    for (size_t i = 1; i < rows.size(); ++i) {
        bd[rows[i][0]].push_back(std::stod(rows[i][ibd]));
        td[rows[i][0]].push_back(std::stod(rows[i][itd]));
        if (isec < rows[i].size()) seconds += std::stod(rows[i][isec]);
    }
    for (const auto& v : variants)
        if (bd[v].size() != 3) return {false, v + " has " + std::to_string(bd[v].size()) + " runs, expected 3"};
    if (wall) seconds = *wall;

    std::map<std::string, double> mb, mt;
    for (const auto& v : variants) {
        mb[v] = median(bd[v]);
        mt[v] = median(td[v]);
    }
    const bool order = mb["gdds"] >= mb["gs_dds"] && mb["gs_dds"] >= mb["baseline"] && mt["gdds"] >= mt["gs_dds"] &&
                       mt["gs_dds"] >= mt["baseline"];
    const bool margin = mb["gdds"] - mb["baseline"] >= 0.02;
    const bool time_ok = seconds > 0 && seconds <= 7200;
    std::string detail = "median BD*/TD*:";
    for (const char* v : {"baseline", "gs_ds", "gs_dds", "gdds"})
        detail += std::string(" ") + v + " " + num(mb[v], 4) + "/" + num(mt[v], 4);
    detail += "; order " + std::string(order ? "holds" : "violated") + ", GDDS-baseline BD* " +
              num(100 * (mb["gdds"] - mb["baseline"]), 3) + " pp; runtime " + num(seconds / 60, 3) + " min";
    return {order && margin && time_ok, detail};
}

// ---------------------------------------------------------------- 8

const char* kTinyConfig = R"({
  "phantom": {"grid_size": 32, "generations": 3, "root_radius": 2.0},
  "dataset": {"count": 4, "seed": 11, "train_fraction": 0.5, "val_count": 1},
  "train": {
    "max_epochs": 2, "steps_per_epoch": 3, "batch_size": 2,
    "model": {"backbone": {"depth": 3, "base_channels": 4, "patch_size": 16}}
  },
  "metrics": {"fine_gen": 3}
})";

Outcome determinism(const Env& env) {
    const fs::path dir = env.work / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "config.json") << kTinyConfig;
    const std::string log = " >>" + q(dir / "log.txt") + " 2>&1";
    const std::string cli = "GDDS_DETERMINISTIC=1 " + q(env.cli);
    if (run(cli + " phantom --config " + q(dir / "config.json") + " --out " + q(dir / "data") + log) != 0)
        return {false, "phantom failed"};
    std::vector<std::string> csv;
    for (const char* tag : {"a", "b"}) {
        const auto r = dir / tag;
        if (run(cli + " train --config " + q(dir / "config.json") + " --data " + q(dir / "data") + " --out " + q(r) +
                " --seed 3" + log) != 0 ||
            run(cli + " infer --model " + q(r / "model.gdds") + " --data " + q(dir / "data") + " --split test --out " +
                q(r / "pred") + log) != 0 ||
            run(cli + " eval --pred-dir " + q(r / "pred") + " --data " + q(dir / "data") + " --split test --csv " +
                q(r / "metrics.csv") + log) != 0)
            return {false, std::string("pipeline failed in run ") + tag + ", see " + (dir / "log.txt").string()};
        csv.push_back(slurp(r / "metrics.csv"));
    }
    const auto lines = std::count(csv[0].begin(), csv[0].end(), '\n');
    return {csv[0] == csv[1] && lines == 3,
            std::string(csv[0] == csv[1] ? "identical" : "different") + " metric CSVs (" + std::to_string(lines - 1) +
                " test cases)"};
}

// ---------------------------------------------------------------- 9

Outcome generation_merge(const Env& env) {
    const fs::path dir = env.work / "generations";
    fs::remove_all(dir);
    PhantomSpec spec;
    spec.grid_size = 96;
    spec.generations = 6;
    generate_dataset(spec, 6, 21, dir / "data", 0.5);
    const auto split = load_split(dir / "data", 1);

    // the two label roles partition the reference
    int64_t partition_errors = 0;
    for (const auto& c : split.test) {
        const auto s = split_label_by_generation(c.label, c.graph);
        for (int64_t i = 0; i < c.label.size(); ++i)
            partition_errors += (s.low[i] && s.high[i]) || ((s.low[i] || s.high[i]) != (c.label[i] != 0));
    }

    TrainConfig tc;
    tc.model.backbone.depth = 3;
    tc.model.backbone.base_channels = 8;
    tc.model.backbone.patch_size = 32;
    tc.lr_init = 0.003;
    tc.max_epochs = 3;
    tc.steps_per_epoch = 10;
    tc.batch_size = 2;
    tc.val_overlap = 0;
    tc.seed = 5;
    tc.role = LabelRole::low;
    const auto low = train(tc, split.train, split.val);
    tc.role = LabelRole::high;
    const auto high = train(tc, split.train, split.val);

    InferConfig ic;
    ic.largest_component = false;
    MetricConfig mc;
    int dominated = 0;
    std::vector<MetricsReport> rl, rh, rm;
    for (const auto& c : split.test) {
        const auto ml = predict_mask(low.best, c.image, ic), mh = predict_mask(high.best, c.image, ic);
        const auto merged = merge_generation_outputs(ml, mh);
        rl.push_back(evaluate_case(ml, c, mc));
        rh.push_back(evaluate_case(mh, c, mc));
        rm.push_back(evaluate_case(merged, c, mc));
        dominated += rm.back().td >= std::max(rl.back().td, rh.back().td);
    }
    const auto n = static_cast<int>(split.test.size());
    const double tl = mean_metrics(rl).td, th = mean_metrics(rh).td, tm = mean_metrics(rm).td;
    return {partition_errors == 0 && dominated == n && tm >= std::max(tl, th),
            "TD low " + num(tl, 4) + ", high " + num(th, 4) + ", merged " + num(tm, 4) + "; " +
                std::to_string(dominated) + "/" + std::to_string(n) + " test cases dominated" +
                (partition_errors ? ", label split is not a partition" : "")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GDDS acceptance checks"};
    std::vector<int> only;
    Env env;
    env.cli = GDDS_CLI;
    env.ablation_config = fs::path(GDDS_SOURCE_DIR) / "configs" / "ablation.json";
    env.work = fs::temp_directory_path() / "gdds_acceptance";
    app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 9));
    app.add_option("--work", env.work, "scratch directory");
    app.add_option("--cli", env.cli, "gdds_cli binary");
    app.add_option("--ablation-dir", env.ablation_dir, "finished ablation run to score (default: <work>/ablation)");
    app.add_option("--ablation-config", env.ablation_config, "config used with --run-ablation");
    app.add_flag("--run-ablation", env.run_ablation, "run the ablation when no results exist");
    CLI11_PARSE(app, argc, argv);

    set_deterministic(true);
    fs::create_directories(env.work);

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"DTT bijection", dtt_bijection},
        {"loss values", loss_values},
        {"loss gradients", gradient_checks},
        {"metrics oracle", metrics_oracle},
        {"parser recovery", parser_recovery},
        {"parameter overhead", parameter_overhead},
        {"desk-scale ablation", [&] { return ablation(env); }},
        {"determinism", [&] { return determinism(env); }},
        {"generation merge", [&] { return generation_merge(env); }},
    };
    bool all = true;
    for (size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome o;
        const auto t0 = Clock::now();
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        all = all && o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << " " << criteria[i].first << ": " << o.detail << " ["
                  << num(since(t0), 3) << " s]" << std::endl;
    }
    return all ? 0 : 1;
}
