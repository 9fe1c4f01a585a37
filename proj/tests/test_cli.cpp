#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "gdds/experiment.hpp"
#include "gdds/nifti.hpp"
#include "gdds/report.hpp"
#include "test_util.hpp"

using namespace gdds;
using namespace gdds::testing;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Run cli(const std::string& args, const fs::path& dir) {
    const auto o = dir / "stdout.txt", e = dir / "stderr.txt";
    const std::string cmd = std::string(GDDS_CLI) + " " + args + " >" + o.string() + " 2>" + e.string();
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(o);
    r.err = slurp(e);
    return r;
}

// small enough to train in a second or two
const char* kTinyConfig = R"({
  "phantom": {"grid_size": 32, "generations": 3, "root_radius": 2.0},
  "dataset": {"count": 4, "seed": 5, "train_fraction": 0.5, "val_count": 1},
  "train": {
    "max_epochs": 1, "steps_per_epoch": 2, "batch_size": 1,
    "model": {"backbone": {"depth": 3, "base_channels": 4, "patch_size": 16}}
  },
  "metrics": {"fine_gen": 3},
  "ablation": {"variants": ["baseline", "gdds"], "seeds": [0]}
})";

fs::path write_config(const fs::path& dir, const std::string& text = kTinyConfig) {
    std::ofstream(dir / "config.json") << text;
    return dir / "config.json";
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST(Cli, PhantomWritesCasesAndManifest) {
    const auto dir = scratch_dir("cli");
    const auto r = cli("phantom --count 5 --seed 7 --out " + q(dir / "d"), dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto m = load_manifest(dir / "d");
    EXPECT_EQ(m.train.size() + m.test.size(), 5u);
    EXPECT_EQ(m.seed, 7u);
    EXPECT_TRUE(fs::exists(dir / "d" / "config.json"));
    for (const auto& id : m.train) EXPECT_TRUE(fs::exists(dir / "d" / id / "graph.json"));
}

TEST(Cli, ExitCodes) {
    const auto dir = scratch_dir("cli");
    EXPECT_EQ(cli("", dir).code, 1);
    EXPECT_EQ(cli("frobnicate", dir).code, 1);
    EXPECT_EQ(cli("phantom", dir).code, 1);  // --out is required
    EXPECT_EQ(cli("report --image x.nii.gz --out o --scale 99", dir).code, 1);

    write_config(dir, R"({"train": {"max_epochs": 2, "learning_rate": 1}})");
    auto r = cli("phantom --config " + q(dir / "config.json") + " --out " + q(dir / "d"), dir);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("learning_rate"), std::string::npos) << r.err;

    write_config(dir, R"({"train": {"lr_init": -1}})");
    EXPECT_EQ(cli("train --config " + q(dir / "config.json") + " --data d --out o", dir).code, 1);

    // well-formed request that fails at run time
    EXPECT_EQ(cli("train --data " + q(dir / "missing") + " --out " + q(dir / "o"), dir).code, 2);
    EXPECT_EQ(cli("parse --mask " + q(dir / "missing.nii.gz") + " --out " + q(dir / "g.json"), dir).code, 2);
}

TEST(Cli, EvalOfReferenceAgainstItselfIsPerfect) {
    const auto dir = scratch_dir("cli");
    ASSERT_EQ(cli("phantom --count 1 --seed 2 --generations 4 --out " + q(dir / "d"), dir).code, 0);
    const auto id = load_manifest(dir / "d").train.at(0);
    const auto label = dir / "d" / id / "label.nii.gz";
    auto r = cli("eval --pred " + q(label) + " --ref " + q(label) + " --graph " + q(dir / "d" / id / "graph.json") +
                     " --out " + q(dir / "report.json"),
                 dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
    EXPECT_EQ(j.at("BD").get<double>(), 1.0);
    EXPECT_EQ(j.at("TD").get<double>(), 1.0);
    EXPECT_EQ(j.at("FPR").get<double>(), 0.0);

    // the graph is parsed from the reference when not given
    r = cli("eval --pred " + q(label) + " --ref " + q(label) + " --csv " + q(dir / "m.csv"), dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = slurp(dir / "m.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), metrics_csv_header());

    EXPECT_EQ(cli("eval --pred " + q(label), dir).code, 1);
    EXPECT_EQ(cli("eval --pred " + q(label) + " --ref " + q(label) + " --fpr-mode lungs", dir).code, 1);
}

TEST(Cli, ParseAndMerge) {
    const auto dir = scratch_dir("cli");
    ASSERT_EQ(cli("phantom --count 1 --seed 3 --generations 3 --out " + q(dir / "d"), dir).code, 0);
    const auto id = load_manifest(dir / "d").train.at(0);
    const auto label = dir / "d" / id / "label.nii.gz";
    ASSERT_EQ(cli("parse --mask " + q(label) + " --out " + q(dir / "g.json"), dir).code, 0);
    EXPECT_EQ(load_graph(dir / "g.json").size(), 7u);

    const LabelVolume y = load_label(label);
    LabelVolume top(y.shape(), 0), bottom(y.shape(), 0);
    for (int64_t i = 0; i < y.size(); ++i) (i < y.size() / 2 ? top : bottom)[i] = y[i];
    save_label(top, dir / "low.nii.gz");
    save_label(bottom, dir / "high.nii.gz");
    ASSERT_EQ(cli("merge --low " + q(dir / "low.nii.gz") + " --high " + q(dir / "high.nii.gz") + " --out " +
                      q(dir / "merged.nii.gz"),
                  dir)
                  .code,
              0);
    EXPECT_EQ(load_label(dir / "merged.nii.gz").data(), y.data());
}

TEST(Cli, TrainInferEvalReportAndReproducibility) {
    const auto dir = scratch_dir("cli");
    const auto cfg = write_config(dir);
    const auto data = dir / "data";
    ASSERT_EQ(cli("phantom --config " + q(cfg) + " --out " + q(data), dir).code, 0);

    auto pipeline = [&](const std::string& tag) {
        const auto run = dir / tag;
        auto r = cli("train --config " + q(cfg) + " --data " + q(data) + " --out " + q(run) + " --seed 1", dir);
        EXPECT_EQ(r.code, 0) << r.err;
        r = cli("infer --model " + q(run / "model.gdds") + " --data " + q(data) + " --split test --out " +
                    q(run / "pred"),
                dir);
        EXPECT_EQ(r.code, 0) << r.err;
        r = cli("eval --pred-dir " + q(run / "pred") + " --data " + q(data) + " --split test --csv " +
                    q(run / "metrics.csv"),
                dir);
        EXPECT_EQ(r.code, 0) << r.err;
        return run;
    };
    const auto a = pipeline("a"), b = pipeline("b");
    for (const char* f : {"config.json", "loss_log.jsonl", "model.gdds", "metrics.csv"}) {
        ASSERT_TRUE(fs::exists(a / f)) << f;
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    }
    const auto csv = slurp(a / "metrics.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);  // header + 2 test cases
    const auto frozen = load_experiment(a / "config.json");
    EXPECT_EQ(frozen.train.seed, 1u);
    EXPECT_EQ(frozen.train.max_epochs, 1);

    // overlay images
    const auto m = load_manifest(data);
    const auto id = m.test.at(0);
    const auto r = cli("report --image " + q(data / id / "image.nii.gz") + " --prob " + q(a / "pred" / (id + "_prob.nii.gz")) +
                           " --ref " + q(data / id / "label.nii.gz") + " --pred " + q(a / "pred" / (id + "_mask.nii.gz")) +
                           " --scale 2 --out " + q(dir / "png"),
                       dir);
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"axial.png", "coronal.png"}) {
        const auto img = read_png(dir / "png" / f);
        EXPECT_EQ(img.height, 32 * 2) << f;
        EXPECT_EQ(img.width % (32 * 2), 0) << f;
    }
}

TEST(Cli, AblateWritesOneRowPerVariant) {
    const auto dir = scratch_dir("cli");
    const auto cfg = write_config(dir);
    const auto r = cli("ablate --config " + q(cfg) + " --out " + q(dir / "ab"), dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = slurp(dir / "ab" / "ablation.csv");
    std::istringstream lines(csv);
    std::string header, row;
    std::getline(lines, header);
    EXPECT_EQ(header, "variant,BD,BD*,TD,TD*,TPR,FPR");
    std::vector<std::string> variants;
    while (std::getline(lines, row)) variants.push_back(row.substr(0, row.find(',')));
    EXPECT_EQ(variants, (std::vector<std::string>{"baseline", "gdds"}));
    EXPECT_TRUE(fs::exists(dir / "ab" / "runs.csv"));
    EXPECT_TRUE(fs::exists(dir / "ab" / "gdds_seed0" / "loss_log.jsonl"));
    EXPECT_TRUE(fs::exists(dir / "ab" / "config.json"));
}
