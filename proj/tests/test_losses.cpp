#include <cmath>
#include <functional>

#include "gdds/losses.hpp"
#include "test_util.hpp"

using namespace gdds;
using namespace gdds::testing;

namespace {

constexpr double kTol = 1e-5;

std::vector<double> to_double(const std::vector<uint8_t>& v) { return {v.begin(), v.end()}; }

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

// central differences, step 1e-5; returns max relative error
double fd_check(std::vector<double>& x, const std::vector<double>& analytic,
                const std::function<double()>& f) {
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
        const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
        worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST(Focal, HandComputedValues) {
    const std::vector<double> one{1.0}, zero{0.0};
    EXPECT_NEAR(focal_loss(std::vector<double>{0.5}, one), 0.173287, kTol);
    EXPECT_NEAR(focal_loss(std::vector<double>{0.9}, zero), 1.865094, kTol);
}

TEST(Focal, PerfectPredictionAndMonotonicity) {
    const std::vector<double> t{1, 0, 1, 0};
    EXPECT_LE(focal_loss(t, t), 1e-10);
    double prev = focal_loss(std::vector<double>{0.1}, std::vector<double>{1.0});
    for (double p = 0.15; p < 0.999; p += 0.05) {
        const double l = focal_loss(std::vector<double>{p}, std::vector<double>{1.0});
        EXPECT_GE(l, 0.0);
        EXPECT_LT(l, prev);
        prev = l;
    }
    EXPECT_THROW(focal_loss(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0}), Error);
}

TEST(Focal, OptionalClassBalance) {
    FocalOptions o;
    o.alpha = 0.25;
    // alpha_t = alpha on positives, 1 - alpha on negatives
    EXPECT_NEAR(focal_loss(std::vector<double>{0.5}, std::vector<double>{1.0}, o), 0.25 * 0.173287, kTol);
    EXPECT_NEAR(focal_loss(std::vector<double>{0.9}, std::vector<double>{0.0}, o), 0.75 * 1.865094, kTol);
}

TEST(Dds, HandComputedAndPerfect) {
    const LabelVolume y({4, 4, 4}, 0);
    DenseTensor t;
    t.n = 2;
    t.channels = 8;
    t.spatial = {2, 2, 2};
    t.data.assign(64, 0.5);
    EXPECT_NEAR(dds_loss(t, y, 2), 0.173287, kTol);

    std::mt19937_64 rng(1);
    const LabelVolume z = random_label({4, 4, 4}, rng);
    auto exact = dtt_forward(Grid3<double>(z.shape()), 2);
    exact.data = to_double(dtt_forward(z, 2).data);
    EXPECT_LE(dds_loss(exact, z, 2), 1e-10);
}

TEST(Dds, EqualsFocalOnTransformedLabel) {
    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 100; ++rep) {
        const int n = rep % 2 ? 2 : 4;
        const Shape3 s{8, 4 * (1 + rep % 2), 8};
        const LabelVolume y = random_label(s, rng);
        const DenseTensor t = random_dense(s, n, rng);
        const auto yn = dtt_forward(y, n, DttRole::Label);
        ASSERT_EQ(dds_loss(t, y, n), focal_loss(t.data, to_double(yn.data)));
    }
}

TEST(Consistency, HandComputedValues) {
    LabelVolume fg({1, 1, 1}, 1), bg({1, 1, 1}, 0);
    DenseTensor t;
    t.n = 1;
    t.channels = 1;
    t.spatial = {1, 1, 1};
    ProbGrid p({1, 1, 1});
    t.data = {0.8};
    p[0] = 0.9;
    EXPECT_NEAR(consistency_loss(t, p, fg, 1), 0.025755, kTol);
    t.data = {0.2};
    p[0] = 0.4;
    EXPECT_NEAR(consistency_loss(t, p, bg, 1), 0.032101, kTol);
}

TEST(Consistency, PerfectAgreementIsFree) {
    std::mt19937_64 rng(3);
    const LabelVolume y = random_label({4, 4, 4}, rng);
    ProbGrid p(y.shape());
    for (int64_t i = 0; i < p.size(); ++i) p[i] = y[i];
    DenseTensor t = dtt_forward(p, 2);
    EXPECT_LE(consistency_loss(t, p, y, 2), 1e-9);
}

TEST(Consistency, MatchesDirectTranscription) {
    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        const LabelVolume y = random_label({4, 4, 4}, rng);
        const ProbGrid p = random_prob(y.shape(), rng);
        const DenseTensor a = random_dense(y.shape(), 2, rng);
        const auto b = dtt_forward(p, 2);
        const auto yn = dtt_forward(y, 2);
        double sum = 0;
        for (size_t i = 0; i < a.data.size(); ++i) {
            const double q = yn.data[i] ? a.data[i] * b.data[i] : 0.5 * (a.data[i] + b.data[i]);
            const double pt = yn.data[i] ? q : 1 - q;
            sum += (1 - pt) * (1 - pt) * -std::log(pt);
        }
        EXPECT_NEAR(consistency_loss(a, p, y, 2), sum / a.data.size(), 1e-12);
    }
}

TEST(DiceFocal, HandComputedValue) {
    const std::vector<double> p{1 - 1e-7, 0.5}, y{1, 1};
    EXPECT_NEAR(dice_focal_loss(p, y, 1e-5, 1e-7), -0.770497, kTol);
}

TEST(DiceFocal, PerfectAndEmpty) {
    std::vector<double> y(200, 0.0);
    for (int i = 0; i < 120; ++i) y[i] = 1.0;
    EXPECT_NEAR(dice_focal_loss(y, y), -1.0, 1e-4);
    const std::vector<double> z(64, 0.0);
    EXPECT_NEAR(dice_focal_loss(z, z), 0.0, 1e-5);
}

TEST(DiceFocal, BoundedBelow) {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 200; ++rep) {
        const LabelVolume y = random_label({4, 4, 4}, rng, 0.5);
        const ProbGrid p = random_prob(y.shape(), rng);
        EXPECT_GE(dice_focal_loss(p.data(), to_double(y.data())), -1.0 - 1e-6);
    }
}

TEST(TotalLoss, WeightedSumOfParts) {
    LossBreakdown parts;
    parts.l_zeta_en = -0.9;
    parts.l_zeta_de = -0.95;
    parts.l_phi = 0.05;
    parts.l_xi = 0.02;
    const LossWeights w;
    EXPECT_EQ(w.alpha, 0.8);
    EXPECT_EQ(w.beta, 0.8);
    EXPECT_NEAR(weighted_total(parts, w), -1.794, kTol);
}

TEST(TotalLoss, BreakdownIdentityAndZeroWeights) {
    std::mt19937_64 rng(6);
    for (int rep = 0; rep < 100; ++rep) {
        const LabelVolume y = random_label({4, 8, 4}, rng);
        const ProbGrid en = random_prob(y.shape(), rng), de = random_prob(y.shape(), rng);
        const DenseTensor t = random_dense(y.shape(), 2, rng);
        LossWeights w;
        w.alpha = std::uniform_real_distribution<double>(0, 2)(rng);
        w.beta = std::uniform_real_distribution<double>(0, 2)(rng);
        const auto b = total_loss(&en, de, &t, y, w);
        const double sum = b.l_zeta_en + b.l_zeta_de + w.alpha * b.l_phi + w.beta * b.l_xi;
        EXPECT_NEAR(b.total, sum, 1e-9 * std::max(1.0, std::abs(sum)));
        EXPECT_EQ(b.l_zeta_de, dice_focal_loss(de.data(), to_double(y.data())));
        EXPECT_EQ(b.l_phi, dds_loss(t, y, 2));
        EXPECT_EQ(b.l_xi, consistency_loss(t, de, y, 2));
        w.alpha = w.beta = 0;
        const auto z = total_loss(&en, de, &t, y, w);
        EXPECT_EQ(z.total, z.l_zeta_en + z.l_zeta_de);
    }
}

TEST(Gradients, FocalMatchesFiniteDifferences) {
    std::mt19937_64 rng(10);
    for (int rep = 0; rep < 20; ++rep) {
        const auto t = to_double(random_label({4, 4, 4}, rng).data());
        auto p = random_prob({4, 4, 4}, rng).data();
        std::vector<double> g(p.size());
        focal_loss(p, t, {}, g);
        EXPECT_LT(fd_check(p, g, [&] { return focal_loss(p, t); }), 1e-4);
    }
}

TEST(Gradients, DiceFocalMatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        const auto t = to_double(random_label({4, 4, 4}, rng).data());
        auto p = random_prob({4, 4, 4}, rng).data();
        std::vector<double> g(p.size());
        dice_focal_loss(p, t, 1e-5, 1e-7, g);
        EXPECT_LT(fd_check(p, g, [&] { return dice_focal_loss(p, t); }), 1e-4);
    }
}

TEST(Gradients, DdsMatchesFiniteDifferences) {
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 20; ++rep) {
        const LabelVolume y = random_label({4, 4, 4}, rng);
        DenseTensor t = random_dense(y.shape(), 2, rng);
        std::vector<double> g(t.data.size());
        dds_loss(t, y, 2, {}, g);
        EXPECT_LT(fd_check(t.data, g, [&] { return dds_loss(t, y, 2); }), 1e-4);
    }
}

TEST(Gradients, ConsistencyMatchesFiniteDifferences) {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 20; ++rep) {
        const LabelVolume y = random_label({4, 4, 4}, rng);
        DenseTensor t = random_dense(y.shape(), 2, rng);
        ProbGrid p = random_prob(y.shape(), rng);
        std::vector<double> ga(t.data.size()), gp(static_cast<size_t>(p.size()));
        consistency_loss(t, p, y, 2, {}, ga, gp);
        auto f = [&] { return consistency_loss(t, p, y, 2); };
        EXPECT_LT(fd_check(t.data, ga, f), 1e-4);
        EXPECT_LT(fd_check(p.data(), gp, f), 1e-4);
    }
}

TEST(Gradients, TotalLossMatchesFiniteDifferences) {
    std::mt19937_64 rng(14);
    for (int rep = 0; rep < 5; ++rep) {
        const LabelVolume y = random_label({4, 4, 4}, rng);
        ProbGrid en = random_prob(y.shape(), rng), de = random_prob(y.shape(), rng);
        DenseTensor t = random_dense(y.shape(), 2, rng);
        const LossWeights w;
        LossGradients g;
        total_loss(&en, de, &t, y, w, &g);
        auto f = [&] { return total_loss(&en, de, &t, y, w).total; };
        EXPECT_LT(fd_check(en.data(), g.en_p, f), 1e-4);
        EXPECT_LT(fd_check(de.data(), g.de_p, f), 1e-4);
        EXPECT_LT(fd_check(t.data, g.phat_n, f), 1e-4);
    }
}

TEST(Gradients, StopGradientThroughSegmentation) {
    std::mt19937_64 rng(15);
    const LabelVolume y = random_label({4, 4, 4}, rng);
    const ProbGrid p = random_prob(y.shape(), rng);
    const DenseTensor t = random_dense(y.shape(), 2, rng);
    std::vector<double> ga(64), gp(64, 1.0);
    consistency_loss(t, p, y, 2, {}, ga, gp, true);
    for (double v : gp) EXPECT_EQ(v, 0.0);
}

TEST(LossWeights, Validation) {
    LossWeights w;
    EXPECT_NO_THROW(w.validate());
    w.alpha = -1;
    EXPECT_THROW(w.validate(), Error);
    w = {};
    w.clamp_delta = 0.5;
    EXPECT_THROW(w.validate(), Error);
    w = {};
    w.epsilon = 0;
    EXPECT_THROW(w.validate(), Error);
}
