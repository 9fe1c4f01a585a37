#include "gdds/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <set>

#include "gdds/nifti.hpp"

namespace gdds {
namespace {

using Vec3 = std::array<double, 3>;  // (z, y, x)

Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
Vec3 normalized(const Vec3& a) { return (1.0 / norm(a)) * a; }
Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

// Rodrigues rotation of v about unit axis k.
Vec3 rotate(const Vec3& v, const Vec3& k, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return c * v + s * cross(k, v) + ((1.0 - c) * dot(k, v)) * k;
}

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 ab = b - a;
    const double len2 = dot(ab, ab);
    const double t = len2 > 0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
    return norm(p - (a + t * ab));
}

// Closest distance between segments [p1,q1] and [p2,q2].
double segment_distance(const Vec3& p1, const Vec3& q1, const Vec3& p2, const Vec3& q2) {
    const Vec3 d1 = q1 - p1, d2 = q2 - p2, r = p1 - p2;
    const double a = dot(d1, d1), e = dot(d2, d2), f = dot(d2, r);
    double s = 0.0, t = 0.0;
    constexpr double eps = 1e-12;
    if (a <= eps && e <= eps) return norm(r);
    if (a <= eps) {
        t = std::clamp(f / e, 0.0, 1.0);
    } else {
        const double c = dot(d1, r);
        if (e <= eps) {
            s = std::clamp(-c / a, 0.0, 1.0);
        } else {
            const double b = dot(d1, d2);
            const double denom = a * e - b * b;
            s = denom > eps ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
            t = (b * s + f) / e;
            if (t < 0.0) {
                t = 0.0;
                s = std::clamp(-c / a, 0.0, 1.0);
            } else if (t > 1.0) {
                t = 1.0;
                s = std::clamp((b - c) / a, 0.0, 1.0);
            }
        }
    }
    return norm((p1 + s * d1) - (p2 + t * d2));
}

Index3 round_voxel(const Vec3& p) {
    return {std::llround(p[0]), std::llround(p[1]), std::llround(p[2])};
}

// 26-connected digital line, both ends included.
std::vector<Index3> bresenham3d(Index3 a, const Index3& b) {
    std::vector<Index3> out;
    const std::array<int64_t, 3> d = {std::abs(b[0] - a[0]), std::abs(b[1] - a[1]), std::abs(b[2] - a[2])};
    const std::array<int64_t, 3> step = {b[0] > a[0] ? 1 : -1, b[1] > a[1] ? 1 : -1, b[2] > a[2] ? 1 : -1};
    const int major = static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin());
    const int m1 = (major + 1) % 3, m2 = (major + 2) % 3;
    int64_t e1 = 2 * d[m1] - d[major];
    int64_t e2 = 2 * d[m2] - d[major];
    out.push_back(a);
    for (int64_t i = 0; i < d[major]; ++i) {
        if (e1 > 0) {
            a[m1] += step[m1];
            e1 -= 2 * d[major];
        }
        if (e2 > 0) {
            a[m2] += step[m2];
            e2 -= 2 * d[major];
        }
        e1 += 2 * d[m1];
        e2 += 2 * d[m2];
        a[major] += step[major];
        out.push_back(a);
    }
    return out;
}

struct Segment {
    Vec3 a, b;
    double radius = 1.0;
    int generation = 1;
    int parent = -1;
    Vec3 plane;  // branching-plane direction for this segment's children
};

double wall_of(const PhantomSpec& s, double r) { return std::max(s.min_wall, s.wall_ratio * r); }

class TreeBuilder {
public:
    TreeBuilder(const PhantomSpec& spec, uint64_t stream, double length_scale)
        : spec_(spec), rng_(stream), length_scale_(length_scale) {}

    bool build(std::vector<Segment>& out) {
        const double n = static_cast<double>(spec_.grid_size);
        const double r0 = spec_.root_radius;
        Segment root;
        root.a = {r0 + wall_of(spec_, r0) + 1.5, (n - 1) / 2 + jitter(1.5), (n - 1) / 2 + jitter(1.5)};
        const Vec3 dir = normalized({1.0, jitter(0.08), jitter(0.08)});
        // thinning eats into the blunt top of a thick tube, so the trachea needs headroom
        const double trachea = std::max(length(1), 4.0 * (r0 + wall_of(spec_, r0)) * length_scale_);
        root.b = root.a + trachea * dir;
        root.radius = r0;
        root.generation = 1;
        root.plane = normalized(cross(dir, normalized({0.0, std::cos(angle_draw()), std::sin(angle_draw())})));
        top_z_ = root.a[0];
        if (!inside(root)) return false;
        out = {root};
        std::deque<int> queue{0};
        while (!queue.empty()) {
            const int cur = queue.front();
            queue.pop_front();
            if (out[cur].generation >= spec_.generations) continue;
            int first_child = -1;
            for (int side = 0; side < 2; ++side) {
                bool placed = false;
                for (int tries = 0; tries < 40 && !placed; ++tries) {
                    Segment c = make_child(out[cur], side);
                    c.parent = cur;
                    if (!fits(c, out, cur, first_child)) continue;
                    out.push_back(c);
                    placed = true;
                }
                if (!placed) return false;
                const int id = static_cast<int>(out.size()) - 1;
                if (side == 0) first_child = id;
                queue.push_back(id);
            }
        }
        return true;
    }

private:
    double jitter(double amp) { return amp * (2.0 * unit_(rng_) - 1.0); }
    double angle_draw() { return 2.0 * std::numbers::pi * unit_(rng_); }

    // floor keeps the part of a child outside its parent's tube long enough to survive thinning
    double length(int generation, double parent_outer = 0.0) {
        const double base = spec_.branch_length_min +
                            unit_(rng_) * (spec_.branch_length_max - spec_.branch_length_min);
        return std::max(spec_.min_branch_length + parent_outer,
                        base * std::pow(spec_.length_decay, generation - 1) * length_scale_);
    }

    Segment make_child(const Segment& p, int side) {
        const Vec3 d = normalized(p.b - p.a);
        const double deg = std::numbers::pi / 180.0;
        const double theta =
            (spec_.angle_min_deg + unit_(rng_) * (spec_.angle_max_deg - spec_.angle_min_deg)) * deg;
        const Vec3 u = normalized(rotate(p.plane, d, jitter(15.0 * deg)));
        const Vec3 cd = normalized(std::cos(theta) * d + (side == 0 ? 1.0 : -1.0) * std::sin(theta) * u);
        Segment c;
        c.generation = p.generation + 1;
        c.radius = spec_.radius_at(c.generation);
        c.a = p.b;
        c.b = c.a + length(c.generation, p.radius + wall_of(spec_, p.radius)) * cd;
        // next bifurcation plane turns roughly a right angle
        c.plane = normalized(rotate(normalized(cross(cd, u)), cd, jitter(20.0 * deg)));
        return c;
    }

    bool inside(const Segment& s) const {
        const double margin = s.radius + wall_of(spec_, s.radius) + 1.0;
        const double hi = static_cast<double>(spec_.grid_size - 1) - margin;
        for (int k = 0; k < 3; ++k) {
            if (s.b[k] < margin || s.b[k] > hi) return false;
        }
        return s.b[0] >= top_z_ + 3.0;
    }

    bool fits(const Segment& c, const std::vector<Segment>& placed, int parent, int sibling) const {
        if (!inside(c)) return false;
        const double wc = wall_of(spec_, c.radius);
        for (size_t i = 0; i < placed.size(); ++i) {
            const auto& s = placed[i];
            if (static_cast<int>(i) == parent) continue;
            const double need = c.radius + s.radius + spec_.clearance;
            if (static_cast<int>(i) == sibling) {
                if (point_segment_distance(c.b, s.a, s.b) < need + wc) return false;
                continue;
            }
            if (segment_distance(c.a, c.b, s.a, s.b) < need + wc + wall_of(spec_, s.radius)) return false;
        }
        return true;
    }

    const PhantomSpec& spec_;
    std::mt19937_64 rng_;
    std::uniform_real_distribution<double> unit_{0.0, 1.0};
    double length_scale_;
    double top_z_ = 0.0;
};

Volume gaussian_smooth(const Volume& v, double sigma) {
    if (sigma <= 0) return v;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& w : k) w /= sum;
    Volume cur = v;
    const auto& s = v.shape();
    for (int axis = 0; axis < 3; ++axis) {
        Volume next = cur;
        const int64_t n = s[axis];
        for (int64_t z = 0; z < s.d; ++z)
            for (int64_t y = 0; y < s.h; ++y)
                for (int64_t x = 0; x < s.w; ++x) {
                    double acc = 0;
                    for (int i = -radius; i <= radius; ++i) {
                        std::array<int64_t, 3> p = {z, y, x};
                        p[axis] = std::clamp<int64_t>(p[axis] + i, 0, n - 1);
                        acc += k[i + radius] * cur(p[0], p[1], p[2]);
                    }
                    next(z, y, x) = static_cast<float>(acc);
                }
        cur = std::move(next);
    }
    return cur;
}

}  // namespace

void PhantomSpec::validate() const {
    if (grid_size < 8) throw Error("phantom grid must be at least 8 voxels");
    if (generations < 1) throw Error("phantom needs at least one generation");
    if (root_radius < 1.0) throw Error("phantom root radius must be >= 1 voxel");
    if (!(radius_decay > 0.0 && radius_decay < 1.0)) throw Error("radius decay must lie in (0, 1)");
    if (terminal_radius() < 0.5 - 1e-9) {
        throw Error("terminal radius " + std::to_string(terminal_radius()) + " is below 0.5 voxel");
    }
    if (!(branch_length_min > 0 && branch_length_min <= branch_length_max)) {
        throw Error("invalid branch length range");
    }
    if (!(length_decay > 0 && length_decay <= 1.0)) throw Error("length decay must lie in (0, 1]");
    if (!(angle_min_deg >= 0 && angle_min_deg <= angle_max_deg && angle_max_deg < 90)) {
        throw Error("invalid branching angle range");
    }
    if (noise_sigma < 0 || smoothing_sigma < 0) throw Error("noise/smoothing must be non-negative");
    if (max_attempts < 1) throw Error("max_attempts must be positive");
}

double PhantomSpec::radius_at(int generation) const {
    return std::max(min_radius, root_radius * std::pow(radius_decay, generation - 1));
}

double PhantomSpec::terminal_radius() const {
    return radius_at(generations);
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
    j = {{"grid_size", s.grid_size},
         {"generations", s.generations},
         {"root_radius", s.root_radius},
         {"radius_decay", s.radius_decay},
         {"min_radius", s.min_radius},
         {"branch_length_min", s.branch_length_min},
         {"branch_length_max", s.branch_length_max},
         {"length_decay", s.length_decay},
         {"min_branch_length", s.min_branch_length},
         {"angle_min_deg", s.angle_min_deg},
         {"angle_max_deg", s.angle_max_deg},
         {"noise_sigma", s.noise_sigma},
         {"seed", s.seed},
         {"lumen_hu", s.lumen_hu},
         {"wall_hu", s.wall_hu},
         {"parenchyma_hu", s.parenchyma_hu},
         {"wall_ratio", s.wall_ratio},
         {"min_wall", s.min_wall},
         {"smoothing_sigma", s.smoothing_sigma},
         {"clearance", s.clearance},
         {"max_attempts", s.max_attempts}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
    static const std::set<std::string> known = {
        "grid_size", "generations", "root_radius", "radius_decay", "min_radius", "branch_length_min",
        "branch_length_max", "length_decay", "min_branch_length", "angle_min_deg", "angle_max_deg", "noise_sigma", "seed",
        "lumen_hu", "wall_hu", "parenchyma_hu", "wall_ratio", "min_wall", "smoothing_sigma",
        "clearance", "max_attempts"};
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw Error("unknown phantom key: " + key);
    }
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("grid_size", s.grid_size);
    get("generations", s.generations);
    get("root_radius", s.root_radius);
    get("radius_decay", s.radius_decay);
    get("min_radius", s.min_radius);
    get("branch_length_min", s.branch_length_min);
    get("branch_length_max", s.branch_length_max);
    get("length_decay", s.length_decay);
    get("min_branch_length", s.min_branch_length);
    get("angle_min_deg", s.angle_min_deg);
    get("angle_max_deg", s.angle_max_deg);
    get("noise_sigma", s.noise_sigma);
    get("seed", s.seed);
    get("lumen_hu", s.lumen_hu);
    get("wall_hu", s.wall_hu);
    get("parenchyma_hu", s.parenchyma_hu);
    get("wall_ratio", s.wall_ratio);
    get("min_wall", s.min_wall);
    get("smoothing_sigma", s.smoothing_sigma);
    get("clearance", s.clearance);
    get("max_attempts", s.max_attempts);
}

PhantomCase generate_tree(const PhantomSpec& spec) {
    spec.validate();
    // Centrelines are voxel-disjoint: a voxel belongs to the first branch
    // claiming it. A tree whose digital centrelines collide is redrawn.
    auto trace_centrelines = [](const std::vector<Segment>& segs) -> std::optional<BranchGraph> {
        BranchGraph g;
        std::set<Index3> claimed;
        for (size_t i = 0; i < segs.size(); ++i) {
            const auto& s = segs[i];
            auto line = bresenham3d(round_voxel(s.a), round_voxel(s.b));
            size_t skip = 0;
            while (skip < line.size() && claimed.count(line[skip])) ++skip;
            for (size_t k = skip; k < line.size(); ++k)
                if (claimed.count(line[k])) return std::nullopt;
            Branch b;
            b.id = static_cast<int>(i);
            b.centerline.assign(line.begin() + static_cast<std::ptrdiff_t>(skip), line.end());
            if (b.centerline.empty()) return std::nullopt;
            for (const auto& v : b.centerline) claimed.insert(v);
            if (s.parent >= 0) {
                b.parent = s.parent;
                g.at(s.parent).children.push_back(b.id);
            }
            b.generation = s.generation;
            g.branches.push_back(std::move(b));
        }
        return g;
    };

    std::vector<Segment> segs;
    std::optional<BranchGraph> graph;
    for (int attempt = 0; attempt < spec.max_attempts && !graph; ++attempt) {
        const double scale = std::pow(0.97, attempt / 20);
        TreeBuilder builder(spec, splitmix64(spec.seed * 1000003ULL + static_cast<uint64_t>(attempt)), scale);
        if (builder.build(segs)) graph = trace_centrelines(segs);
    }
    if (!graph) {
        throw Error("could not place a " + std::to_string(spec.generations) + "-generation tree in a " +
                    std::to_string(spec.grid_size) + "^3 grid; try grid_size >= " +
                    std::to_string(spec.grid_size * 3 / 2));
    }

    const Shape3 shape{spec.grid_size, spec.grid_size, spec.grid_size};
    PhantomCase pc;
    pc.label = LabelVolume(shape, 0);
    pc.graph = std::move(*graph);
    LabelVolume wall(shape, 0);

    for (const auto& s : segs) {
        const double wt = wall_of(spec, s.radius);
        const double reach = s.radius + wt + 1.0;
        std::array<int64_t, 3> lo{}, hi{};
        for (int k = 0; k < 3; ++k) {
            lo[k] = std::max<int64_t>(0, static_cast<int64_t>(std::floor(std::min(s.a[k], s.b[k]) - reach)));
            hi[k] = std::min<int64_t>(spec.grid_size - 1,
                                      static_cast<int64_t>(std::ceil(std::max(s.a[k], s.b[k]) + reach)));
        }
        for (int64_t z = lo[0]; z <= hi[0]; ++z)
            for (int64_t y = lo[1]; y <= hi[1]; ++y)
                for (int64_t x = lo[2]; x <= hi[2]; ++x) {
                    const double d = point_segment_distance({double(z), double(y), double(x)}, s.a, s.b);
                    if (d <= s.radius) pc.label(z, y, x) = 1;
                    else if (d <= s.radius + wt) wall(z, y, x) = 1;
                }
    }
    for (const auto& b : pc.graph.branches)
        for (const auto& v : b.centerline) pc.label(v[0], v[1], v[2]) = 1;

    Volume img(shape, static_cast<float>(spec.parenchyma_hu));
    for (int64_t i = 0; i < img.size(); ++i) {
        if (pc.label[i]) img[i] = static_cast<float>(spec.lumen_hu);
        else if (wall[i]) img[i] = static_cast<float>(spec.wall_hu);
    }
    img = gaussian_smooth(img, spec.smoothing_sigma);
    if (spec.noise_sigma > 0) {
        std::mt19937_64 rng(splitmix64(spec.seed ^ 0x6e6f697365ULL));
        std::normal_distribution<double> noise(0.0, spec.noise_sigma);
        for (auto& v : img.data()) v = static_cast<float>(v + noise(rng));
    }
    pc.image = std::move(img);
    return pc;
}

uint64_t case_seed(uint64_t dataset_seed, int index) {
    return splitmix64(dataset_seed * 0x100000001b3ULL + static_cast<uint64_t>(index) + 1);
}

namespace {

std::string case_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "case_%04d", i);
    return buf;
}

}  // namespace

DatasetManifest generate_dataset(const PhantomSpec& spec, int count, uint64_t seed,
                                 const std::filesystem::path& out_dir, double train_fraction) {
    if (count < 1) throw Error("dataset needs at least one case");
    if (!(train_fraction >= 0 && train_fraction <= 1)) throw Error("train fraction must lie in [0, 1]");
    spec.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) {
        throw Error("cannot create output directory " + out_dir.string());
    }
    DatasetManifest m;
    m.spec = spec;
    m.seed = seed;
    const int n_train = static_cast<int>(std::lround(train_fraction * count));
    for (int i = 0; i < count; ++i) {
        PhantomSpec cs = spec;
        cs.seed = case_seed(seed, i);
        const auto pc = generate_tree(cs);
        const auto dir = out_dir / case_name(i);
        std::filesystem::create_directories(dir);
        save_volume(pc.image, dir / "image.nii.gz");
        save_label(pc.label, dir / "label.nii.gz");
        save_graph(pc.graph, dir / "graph.json");
        (i < n_train ? m.train : m.test).push_back(case_name(i));
    }
    nlohmann::json j = {{"spec", spec}, {"seed", seed}, {"count", count},
                        {"splits", {{"train", m.train}, {"test", m.test}}}};
    std::ofstream out(out_dir / "manifest.json");
    if (!out) throw Error("cannot write manifest in " + out_dir.string());
    out << j.dump(2) << '\n';
    return m;
}

DatasetManifest load_manifest(const std::filesystem::path& dataset_dir) {
    std::ifstream in(dataset_dir / "manifest.json");
    if (!in) throw Error("no manifest.json in " + dataset_dir.string());
    try {
        const auto j = nlohmann::json::parse(in);
        DatasetManifest m;
        m.spec = j.at("spec").get<PhantomSpec>();
        m.seed = j.at("seed").get<uint64_t>();
        m.train = j.at("splits").at("train").get<std::vector<std::string>>();
        m.test = j.at("splits").at("test").get<std::vector<std::string>>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed manifest in " + dataset_dir.string() + ": " + e.what());
    }
}

}  // namespace gdds
