#include <fstream>
#include <limits>

#include "gdds/augment.hpp"
#include "gdds/label_split.hpp"
#include "gdds/nifti.hpp"
#include "gdds/patches.hpp"
#include "gdds/phantom.hpp"
#include "gdds/preprocess.hpp"
#include "test_util.hpp"

using namespace gdds;
using namespace gdds::testing;

TEST(Nifti, LabelRoundTrip) {
    const auto dir = scratch_dir("nii");
    const LabelVolume y = tube_z({64, 64, 64}, 4.0, 4, 60);
    save_label(y, dir / "tube.nii.gz");
    const LabelVolume back = load_label(dir / "tube.nii.gz");
    EXPECT_EQ(back.shape(), (Shape3{64, 64, 64}));
    EXPECT_EQ(back.data(), y.data());
}

TEST(Nifti, VolumeRoundTripKeepsSpacing) {
    const auto dir = scratch_dir("nii");
    std::mt19937_64 rng(3);
    Volume v = random_volume({5, 6, 7}, rng, -1000, 600);
    v.set_spacing({0.5, 0.7, 0.9});
    save_volume(v, dir / "v.nii");
    const Volume back = load_volume(dir / "v.nii");
    EXPECT_EQ(back.shape(), v.shape());
    EXPECT_EQ(back.data(), v.data());
    EXPECT_NEAR(back.spacing().z, 0.5, 1e-6);
    EXPECT_NEAR(back.spacing().x, 0.9, 1e-6);
}

TEST(Nifti, Label255IsBinarized) {
    const auto dir = scratch_dir("nii");
    Volume v({4, 4, 4}, 0.f);
    v(1, 2, 3) = 255.f;
    v(0, 0, 0) = 255.f;
    save_volume(v, dir / "m.nii.gz");
    const LabelVolume y = load_label(dir / "m.nii.gz");
    EXPECT_EQ(count(y), 2);
    EXPECT_EQ(y(1, 2, 3), 1);
}

TEST(Nifti, NonBinaryLabelRejected) {
    const auto dir = scratch_dir("nii");
    Volume v({4, 4, 4}, 0.f);
    v(0, 0, 0) = 1.f;
    v(0, 0, 1) = 0.5f;
    save_volume(v, dir / "m.nii");
    EXPECT_THROW(load_label(dir / "m.nii"), Error);
    v(0, 0, 1) = 1.0005f;  // within tolerance
    save_volume(v, dir / "ok.nii");
    EXPECT_EQ(count(load_label(dir / "ok.nii")), 2);
}

TEST(Nifti, TruncatedFileIsAnError) {
    const auto dir = scratch_dir("nii");
    save_volume(Volume({8, 8, 8}, 1.f), dir / "v.nii");
    std::filesystem::resize_file(dir / "v.nii", 600);
    EXPECT_THROW(load_volume(dir / "v.nii"), Error);
    std::filesystem::resize_file(dir / "v.nii", 100);
    EXPECT_THROW(load_volume(dir / "v.nii"), Error);
    EXPECT_THROW(load_volume(dir / "missing.nii"), Error);
}

TEST(Preprocess, WindowEndpointsAndMidpoint) {
    Volume v({1, 1, 5});
    v(0, 0, 0) = -1000;
    v(0, 0, 1) = 600;
    v(0, 0, 2) = -200;
    v(0, 0, 3) = -3000;
    v(0, 0, 4) = 2000;
    const Volume p = preprocess(v, {-1000, 600});
    EXPECT_FLOAT_EQ(p(0, 0, 0), 0.0f);
    EXPECT_FLOAT_EQ(p(0, 0, 1), 1.0f);
    EXPECT_FLOAT_EQ(p(0, 0, 2), 0.5f);
    EXPECT_FLOAT_EQ(p(0, 0, 3), 0.0f);
    EXPECT_FLOAT_EQ(p(0, 0, 4), 1.0f);
    EXPECT_THROW(preprocess(v, {5, 5}), Error);
}

TEST(Preprocess, MonotoneAndIdempotentOnUnitWindow) {
    std::mt19937_64 rng(11);
    Volume v = random_volume({1, 1, 500}, rng, -1500, 1000);
    std::sort(v.data().begin(), v.data().end());
    const Volume p = preprocess(v);
    for (int64_t i = 1; i < p.size(); ++i) EXPECT_LE(p[i - 1], p[i]);
    const Volume q = preprocess(p, {0, 1});
    EXPECT_EQ(q.data(), p.data());
}

TEST(Patches, ExactTiling) {
    const Volume v({160, 160, 160}, 0.f);
    const LabelVolume y({160, 160, 160}, 0);
    const auto ps = sample_patches(v, y, 80, 80, 1.0, 1);
    ASSERT_EQ(ps.size(), 8u);
    for (const auto& p : ps) {
        for (auto o : p.origin) EXPECT_TRUE(o == 0 || o == 80);
        EXPECT_EQ(p.image.shape(), (Shape3{80, 80, 80}));
    }
}

TEST(Patches, LastWindowClamped) {
    EXPECT_EQ(window_starts(100, 80, 80), (std::vector<int64_t>{0, 20}));
    EXPECT_EQ(window_starts(80, 80, 40), (std::vector<int64_t>{0}));
    EXPECT_EQ(window_starts(100, 40, 30), (std::vector<int64_t>{0, 30, 60}));
    const Volume v({100, 100, 100}, 0.f);
    const LabelVolume y({100, 100, 100}, 0);
    const auto ps = sample_patches(v, y, 80, 80, 1.0);
    ASSERT_EQ(ps.size(), 8u);
    EXPECT_EQ(ps.back().origin, (Index3{20, 20, 20}));
    EXPECT_THROW(sample_patches(v, y, 120, 60, 1.0), Error);
    EXPECT_THROW(sample_patches(v, y, 40, 0, 1.0), Error);
}

TEST(Patches, BackgroundFilterAndContentIndependence) {
    std::mt19937_64 rng(2);
    LabelVolume y({64, 64, 64}, 0);
    for (int z = 2; z < 8; ++z) y(z, 3, 3) = 1;  // foreground in one corner
    const Volume v1({64, 64, 64}, 0.f), v2 = random_volume({64, 64, 64}, rng);
    const auto ps = sample_patches(v1, y, 32, 16, 0.0, 5);
    ASSERT_FALSE(ps.empty());
    for (const auto& p : ps) EXPECT_GT(count(p.label), 0);
    const auto all1 = sample_patches(v1, y, 32, 16, 1.0, 5);
    const auto all2 = sample_patches(v2, y, 32, 16, 1.0, 5);
    ASSERT_EQ(all1.size(), 27u);
    for (size_t i = 0; i < all1.size(); ++i) EXPECT_EQ(all1[i].origin, all2[i].origin);
    const auto a = sample_patches(v1, y, 32, 16, 0.4, 9), b = sample_patches(v1, y, 32, 16, 0.4, 9);
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].origin, b[i].origin);
}

namespace {

Patch tube_patch() {
    Patch p;
    p.size = 32;
    p.label = tube_z({32, 32, 32}, 6.0, 0, 32);
    p.image = Volume({32, 32, 32}, 0.2f);
    for (int64_t i = 0; i < p.image.size(); ++i) p.image[i] = p.label[i] ? 0.05f : 0.4f + 0.001f * (i % 17);
    return p;
}

double dice(const LabelVolume& a, const LabelVolume& b) {
    int64_t inter = 0, sa = 0, sb = 0;
    for (int64_t i = 0; i < a.size(); ++i) {
        inter += (a[i] && b[i]) ? 1 : 0;
        sa += a[i] ? 1 : 0;
        sb += b[i] ? 1 : 0;
    }
    return 2.0 * inter / static_cast<double>(sa + sb);
}

}  // namespace

TEST(Augment, IdentityDrawsAreNoOp) {
    const Patch p = tube_patch();
    AugmentDraws d;
    ASSERT_TRUE(d.is_identity());
    const Patch q = apply_augmentation(p, d);
    EXPECT_EQ(q.image.data(), p.image.data());
    EXPECT_EQ(q.label.data(), p.label.data());
    AugmentOptions off;
    off.flip = off.rotate = off.contrast = false;
    EXPECT_EQ(augment(p, 99, off).image.data(), p.image.data());
}

TEST(Augment, FlipIsInvolutionAndKeepsCount) {
    Patch p = tube_patch();
    p.label(3, 2, 1) = 1;  // break the symmetry
    for (int axis = 0; axis < 3; ++axis) {
        AugmentDraws d;
        d.flip[axis] = true;
        const Patch once = apply_augmentation(p, d);
        EXPECT_EQ(count(once.label), count(p.label));
        EXPECT_NE(once.label.data(), p.label.data());
        const Patch twice = apply_augmentation(once, d);
        EXPECT_EQ(twice.label.data(), p.label.data());
        EXPECT_EQ(twice.image.data(), p.image.data());
    }
}

TEST(Augment, RotationRoundTripDice) {
    const Patch p = tube_patch();
    for (double theta : {-15.0, -7.5, 4.0, 12.0, 15.0}) {
        for (int axis = 0; axis < 3; ++axis) {
            const Patch back = rotate_patch(rotate_patch(p, axis, theta), axis, -theta);
            EXPECT_GE(dice(back.label, p.label), 0.95) << "axis " << axis << " angle " << theta;
        }
    }
}

TEST(Augment, DeterministicAndContrastTouchesImageOnly) {
    const Patch p = tube_patch();
    const Patch a = augment(p, 1234), b = augment(p, 1234);
    EXPECT_EQ(a.image.data(), b.image.data());
    EXPECT_EQ(a.label.data(), b.label.data());
    AugmentDraws d;
    d.contrast = true;
    d.gamma = 1.3;
    const Patch c = apply_augmentation(p, d);
    EXPECT_EQ(c.label.data(), p.label.data());
    EXPECT_NE(c.image.data(), p.image.data());
    for (int i = 0; i < 200; ++i) {
        const auto dr = draw_augmentation(static_cast<uint64_t>(i));
        if (dr.contrast) {
            EXPECT_GE(dr.gamma, 0.7);
            EXPECT_LE(dr.gamma, 1.3);
        }
        if (dr.rotate) {
            EXPECT_LE(std::abs(dr.angle_deg), 15.0);
        }
    }
}

namespace {

PhantomCase phantom(int generations, uint64_t seed, int64_t grid = 64) {
    PhantomSpec s;
    s.grid_size = grid;
    s.generations = generations;
    s.seed = seed;
    return generate_tree(s);
}

}  // namespace

TEST(LabelSplit, PartitionAndNearestCenterlineOracle) {
    for (uint64_t seed : {1u, 2u, 3u}) {
        const auto pc = phantom(5, seed);
        const auto split = split_label_by_generation(pc.label, pc.graph, 4);
        // brute force: nearest centreline voxel, lower branch id on ties
        std::vector<std::pair<Index3, int>> cl;
        for (const auto& b : pc.graph.branches)
            for (const auto& v : b.centerline) cl.push_back({v, b.id});
        for (int64_t i = 0; i < pc.label.size(); ++i) {
            const bool lo = split.low[i] != 0, hi = split.high[i] != 0;
            ASSERT_FALSE(lo && hi);
            ASSERT_EQ(lo || hi, pc.label[i] != 0);
            if (!pc.label[i]) continue;
            const Index3 p = pc.label.unravel(i);
            int64_t best = std::numeric_limits<int64_t>::max();
            int owner = -1;
            for (const auto& [c, id] : cl) {
                const int64_t d2 = (c[0] - p[0]) * (c[0] - p[0]) + (c[1] - p[1]) * (c[1] - p[1]) + (c[2] - p[2]) * (c[2] - p[2]);
                if (d2 < best || (d2 == best && id < owner)) {
                    best = d2;
                    owner = id;
                }
            }
            ASSERT_EQ(lo, pc.graph.at(owner).generation < 4) << "voxel " << i;
        }
    }
}

TEST(LabelSplit, Boundaries) {
    const auto pc = phantom(3, 4);
    const auto s4 = split_label_by_generation(pc.label, pc.graph, 4);
    EXPECT_EQ(count(s4.high), 0);
    EXPECT_EQ(s4.low.data(), pc.label.data());
    const auto s1 = split_label_by_generation(pc.label, pc.graph, 1);
    EXPECT_EQ(count(s1.low), 0);
    EXPECT_EQ(s1.high.data(), pc.label.data());
}

TEST(LabelSplit, OrphanVoxelsRejected) {
    auto pc = phantom(3, 5);
    LabelVolume y = pc.label;
    y(0, 0, 0) = 1;
    y(63, 63, 63) = 1;
    EXPECT_THROW(split_label_by_generation(y, pc.graph, 4, 10.0), Error);
}
