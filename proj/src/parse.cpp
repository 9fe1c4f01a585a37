#include <algorithm>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "gdds/topology.hpp"

namespace gdds {
namespace {

struct Node {
    std::vector<int> voxels;  // skeleton voxel indices
    bool alive = true;
};

struct Edge {
    int a = -1, b = -1;
    int a_vox = -1, b_vox = -1;  // attachment voxels inside node a / node b
    std::vector<int> path;       // interior voxels ordered a -> b
    bool alive = true;
};

class SkeletonGraph {
public:
    SkeletonGraph(const Skeleton& s, const LabelVolume* mask) : sk_(s), index_(s.shape, -1) {
        for (size_t i = 0; i < s.voxels.size(); ++i) {
            const auto& v = s.voxels[i];
            if (!s.shape.contains(v[0], v[1], v[2])) throw Error("skeleton voxel out of bounds");
            index_(v[0], v[1], v[2]) = static_cast<int32_t>(i);
        }
        radius_.assign(s.voxels.size(), 1.0f);
        if (mask) {
            if (!(mask->shape() == s.shape)) throw Error("parse_branches: mask/skeleton shape mismatch");
            const auto dt = distance_transform(*mask);
            for (size_t i = 0; i < s.voxels.size(); ++i) {
                const auto& v = s.voxels[i];
                radius_[i] = dt(v[0], v[1], v[2]);
            }
        }
        neighbours_.resize(s.voxels.size());
        for (size_t i = 0; i < s.voxels.size(); ++i) {
            const auto& v = s.voxels[i];
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (!dz && !dy && !dx) continue;
                        const int64_t z = v[0] + dz, y = v[1] + dy, x = v[2] + dx;
                        if (!s.shape.contains(z, y, x)) continue;
                        const int32_t j = index_(z, y, x);
                        if (j >= 0) neighbours_[i].push_back(j);
                    }
        }
        build();
    }

    std::vector<Node> nodes;
    std::vector<Edge> edges;

    [[nodiscard]] const Index3& voxel(int i) const { return sk_.voxels[static_cast<size_t>(i)]; }
    [[nodiscard]] float radius(int i) const { return radius_[static_cast<size_t>(i)]; }

    [[nodiscard]] int degree(int node) const {
        int d = 0;
        for (int ei : node_edges_[node]) {
            const auto& e = edges[ei];
            if (e.alive) d += (e.a == node) + (e.b == node);
        }
        return d;
    }

    [[nodiscard]] std::vector<int> incident(int node) const {
        std::vector<int> out;
        for (int ei : node_edges_[node])
            if (edges[ei].alive) out.push_back(ei);
        return out;
    }

    void add_edge(Edge e) {
        const int id = static_cast<int>(edges.size());
        if (static_cast<size_t>(std::max(e.a, e.b)) >= node_edges_.size()) node_edges_.resize(nodes.size());
        node_edges_[e.a].push_back(id);
        if (e.b != e.a) node_edges_[e.b].push_back(id);
        edges.push_back(std::move(e));
    }

    [[nodiscard]] bool is_endpoint(int node) const { return nodes[node].voxels.size() == 1 && degree(node) == 1; }

    /// Shortest voxel path inside a node cluster, inclusive of both ends.
    [[nodiscard]] std::vector<int> cluster_path(int node, int from, int to) const {
        if (from == to) return {from};
        std::map<int, int> prev;
        std::deque<int> q{from};
        prev[from] = from;
        while (!q.empty()) {
            const int cur = q.front();
            q.pop_front();
            if (cur == to) break;
            for (int nb : neighbours_[cur]) {
                if (prev.count(nb) || node_of_[nb] != node) continue;
                prev[nb] = cur;
                q.push_back(nb);
            }
        }
        std::vector<int> out;
        if (!prev.count(to)) return {from, to};
        for (int cur = to; cur != from; cur = prev[cur]) out.push_back(cur);
        out.push_back(from);
        std::reverse(out.begin(), out.end());
        return out;
    }

    /// Fuse the two edges meeting at a degree-2 node into one.
    void merge_through(int node) {
        auto inc = incident(node);
        if (inc.size() != 2 || inc[0] == inc[1]) return;
        Edge e1 = oriented(edges[inc[0]], node, /*towards=*/true);
        Edge e2 = oriented(edges[inc[1]], node, /*towards=*/false);
        if (e1.a == node || e2.b == node) return;  // self loop
        Edge merged;
        merged.a = e1.a;
        merged.a_vox = e1.a_vox;
        merged.b = e2.b;
        merged.b_vox = e2.b_vox;
        merged.path = e1.path;
        const auto through = cluster_path(node, e1.b_vox, e2.a_vox);
        merged.path.insert(merged.path.end(), through.begin(), through.end());
        merged.path.insert(merged.path.end(), e2.path.begin(), e2.path.end());
        edges[inc[0]].alive = false;
        edges[inc[1]].alive = false;
        nodes[node].alive = false;
        for (int v : nodes[node].voxels) node_of_[v] = -1;
        add_edge(std::move(merged));
    }

    /// Copy of `e` oriented so that `node` is its b end (towards) or a end (from).
    static Edge oriented(const Edge& e, int node, bool towards) {
        const bool flip = towards ? e.b != node : e.a != node;
        if (!flip) return e;
        Edge r = e;
        std::swap(r.a, r.b);
        std::swap(r.a_vox, r.b_vox);
        std::reverse(r.path.begin(), r.path.end());
        return r;
    }

    [[nodiscard]] double edge_weight(const Edge& e) const {
        double sum = radius(e.a_vox) + radius(e.b_vox);
        for (int v : e.path) sum += radius(v);
        return sum / static_cast<double>(e.path.size() + 2);
    }

private:
    void build() {
        const int n = static_cast<int>(sk_.voxels.size());
        node_of_.assign(static_cast<size_t>(n), -1);
        std::vector<int> deg(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) deg[i] = static_cast<int>(neighbours_[i].size());
        // junction clusters and endpoints become nodes
        for (int i = 0; i < n; ++i) {
            if (node_of_[i] >= 0 || deg[i] == 2) continue;
            const int id = static_cast<int>(nodes.size());
            nodes.push_back({});
            if (deg[i] < 2) {
                nodes.back().voxels = {i};
                node_of_[i] = id;
                continue;
            }
            std::vector<int> stack{i};
            node_of_[i] = id;
            while (!stack.empty()) {
                const int cur = stack.back();
                stack.pop_back();
                nodes[id].voxels.push_back(cur);
                for (int nb : neighbours_[cur]) {
                    if (deg[nb] >= 3 && node_of_[nb] < 0) {
                        node_of_[nb] = id;
                        stack.push_back(nb);
                    }
                }
            }
            std::sort(nodes[id].voxels.begin(), nodes[id].voxels.end());
        }
        std::vector<bool> visited(static_cast<size_t>(n), false);
        std::set<std::pair<int, int>> direct;
        auto trace_from = [&](int start_node) {
            for (int u : nodes[start_node].voxels) {
                for (int w : neighbours_[u]) {
                    if (node_of_[w] >= 0) {
                        const int other = node_of_[w];
                        if (other == start_node) continue;
                        const auto key = std::minmax(start_node, other);
                        if (direct.insert({key.first, key.second}).second) {
                            add_edge({start_node, other, u, w, {}, true});
                        }
                        continue;
                    }
                    if (visited[w]) continue;
                    Edge e;
                    e.a = start_node;
                    e.a_vox = u;
                    int prev = u, cur = w;
                    while (true) {
                        visited[cur] = true;
                        e.path.push_back(cur);
                        int next = -1;
                        for (int nb : neighbours_[cur]) {
                            if (nb == prev) continue;
                            if (node_of_[nb] >= 0) {
                                next = nb;
                                break;
                            }
                            if (!visited[nb]) next = nb;
                        }
                        if (next < 0) {
                            // closed back onto already traced voxels: treat cur as dead end
                            e.b = start_node;
                            e.b_vox = u;
                            break;
                        }
                        if (node_of_[next] >= 0) {
                            e.b = node_of_[next];
                            e.b_vox = next;
                            break;
                        }
                        prev = cur;
                        cur = next;
                    }
                    add_edge(std::move(e));
                }
            }
        };
        for (int id = 0; id < static_cast<int>(nodes.size()); ++id) trace_from(id);
        // loops without any junction or endpoint
        for (int i = 0; i < n; ++i) {
            if (visited[i] || node_of_[i] >= 0) continue;
            const int id = static_cast<int>(nodes.size());
            nodes.push_back({{i}, true});
            node_of_[i] = id;
            trace_from(id);
        }
    }

    const Skeleton& sk_;
    Grid3<int32_t> index_;
    std::vector<float> radius_;
    std::vector<std::vector<int>> neighbours_;
    std::vector<int> node_of_;
    std::vector<std::vector<int>> node_edges_;
};

}  // namespace

int64_t BranchGraph::centerline_voxel_count() const {
    int64_t n = 0;
    for (const auto& b : branches) n += static_cast<int64_t>(b.centerline.size());
    return n;
}

BranchGraph assign_generations(BranchGraph g) {
    std::deque<int> q;
    std::vector<bool> seen(g.size(), false);
    for (auto& b : g.branches) {
        if (!b.parent) {
            b.generation = 1;
            q.push_back(b.id);
            seen[static_cast<size_t>(b.id)] = true;
        }
    }
    while (!q.empty()) {
        const int cur = q.front();
        q.pop_front();
        for (int c : g.at(cur).children) {
            if (seen[static_cast<size_t>(c)]) throw Error("branch graph contains a cycle");
            seen[static_cast<size_t>(c)] = true;
            g.at(c).generation = g.at(cur).generation + 1;
            q.push_back(c);
        }
    }
    return g;
}

BranchGraph parse_branches(const Skeleton& s, const ParseOptions& opts, const LabelVolume* mask,
                           ParseDiagnostics* diag) {
    ParseDiagnostics local;
    ParseDiagnostics& dg = diag ? *diag : local;
    BranchGraph out;
    if (s.voxels.empty()) return out;

    SkeletonGraph sg(s, mask);
    auto& nodes = sg.nodes;
    auto& edges = sg.edges;

    // self loops carry no branch structure
    for (auto& e : edges) {
        if (e.alive && e.a == e.b) {
            e.alive = false;
            ++dg.cycles_broken;
            dg.warnings.push_back("removed closed skeleton loop");
        }
    }

    // cut remaining cycles at their thinnest edges (maximum spanning forest)
    {
        std::vector<int> order;
        for (size_t i = 0; i < edges.size(); ++i)
            if (edges[i].alive) order.push_back(static_cast<int>(i));
        std::vector<double> weight(edges.size());
        for (int i : order) weight[i] = sg.edge_weight(edges[i]);
        std::stable_sort(order.begin(), order.end(), [&](int l, int r) { return weight[l] > weight[r]; });
        std::vector<int> parent(nodes.size());
        std::iota(parent.begin(), parent.end(), 0);
        auto find = [&](int x) {
            while (parent[x] != x) x = parent[x] = parent[parent[x]];
            return x;
        };
        for (int i : order) {
            const int ra = find(edges[i].a), rb = find(edges[i].b);
            if (ra == rb) {
                edges[i].alive = false;
                ++dg.cycles_broken;
            } else {
                parent[ra] = rb;
            }
        }
        if (dg.cycles_broken > 0) {
            dg.warnings.push_back("skeleton contained " + std::to_string(dg.cycles_broken) +
                                  " cycle(s); cut at the thinnest edge");
        }
    }

    auto hinted_node = [&]() -> int {
        if (!opts.root_hint) return -1;
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < nodes.size(); ++i) {
            if (!nodes[i].alive || sg.degree(static_cast<int>(i)) > 1) continue;
            for (int v : nodes[i].voxels) {
                const auto& p = sg.voxel(v);
                double d = 0;
                for (int k = 0; k < 3; ++k) d += double(p[k] - (*opts.root_hint)[k]) * double(p[k] - (*opts.root_hint)[k]);
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<int>(i);
                }
            }
        }
        return best;
    };

    auto merge_degree_two = [&]() {
        for (size_t i = 0; i < nodes.size(); ++i) {
            if (nodes[i].alive && sg.degree(static_cast<int>(i)) == 2) sg.merge_through(static_cast<int>(i));
        }
    };
    merge_degree_two();

    // prune spurs one at a time, shortest first
    int protected_node = hinted_node();
    while (opts.prune_len > 1) {
        int best = -1;
        size_t best_len = 0;
        for (size_t i = 0; i < edges.size(); ++i) {
            const auto& e = edges[i];
            if (!e.alive) continue;
            for (int side = 0; side < 2; ++side) {
                const int tip = side ? e.b : e.a;
                const int base = side ? e.a : e.b;
                if (tip == protected_node || !sg.is_endpoint(tip) || sg.degree(base) < 3) continue;
                const size_t len = e.path.size() + 1;
                if (len >= static_cast<size_t>(opts.prune_len)) continue;
                if (best < 0 || len < best_len) {
                    best = static_cast<int>(i);
                    best_len = len;
                }
            }
        }
        if (best < 0) break;
        auto& e = edges[best];
        const int tip = sg.is_endpoint(e.a) && sg.degree(e.b) >= 3 ? e.a : e.b;
        const int base = tip == e.a ? e.b : e.a;
        e.alive = false;
        nodes[tip].alive = false;
        ++dg.spurs_pruned;
        if (sg.degree(base) == 2) sg.merge_through(base);
    }

    // connected components over live nodes
    std::vector<int> comp(nodes.size(), -1);
    int ncomp = 0;
    for (size_t i = 0; i < nodes.size(); ++i) {
        if (!nodes[i].alive || comp[i] >= 0) continue;
        std::vector<int> stack{static_cast<int>(i)};
        comp[i] = ncomp;
        while (!stack.empty()) {
            const int cur = stack.back();
            stack.pop_back();
            for (int ei : sg.incident(cur)) {
                const int other = edges[ei].a == cur ? edges[ei].b : edges[ei].a;
                if (comp[other] < 0) {
                    comp[other] = ncomp;
                    stack.push_back(other);
                }
            }
        }
        ++ncomp;
    }
    dg.components = ncomp;
    if (ncomp > 1) {
        dg.warnings.push_back("skeleton has " + std::to_string(ncomp) +
                              " components; each is parsed as its own tree");
    }

    // root per component: hint, else most superior endpoint, then widest
    auto better_root = [&](int cand, int cur) {
        if (cur < 0) return true;
        const auto& pc = sg.voxel(nodes[cand].voxels.front());
        const auto& pr = sg.voxel(nodes[cur].voxels.front());
        if (pc[0] != pr[0]) return pc[0] < pr[0];
        const float rc = sg.radius(nodes[cand].voxels.front());
        const float rr = sg.radius(nodes[cur].voxels.front());
        if (rc != rr) return rc > rr;
        return pc < pr;
    };
    std::vector<int> roots(static_cast<size_t>(ncomp), -1);
    for (size_t i = 0; i < nodes.size(); ++i) {
        if (!nodes[i].alive) continue;
        const int c = comp[i];
        const int deg = sg.degree(static_cast<int>(i));
        if (deg > 1) continue;
        if (better_root(static_cast<int>(i), roots[c])) roots[c] = static_cast<int>(i);
    }
    for (size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].alive && roots[comp[i]] < 0) roots[comp[i]] = static_cast<int>(i);
    }
    const int hinted = hinted_node();
    if (hinted >= 0) roots[comp[hinted]] = hinted;

    // main tree first: the one holding the hinted or most superior root
    std::vector<int> comp_order(static_cast<size_t>(ncomp));
    std::iota(comp_order.begin(), comp_order.end(), 0);
    int main_comp = hinted >= 0 ? comp[hinted] : 0;
    if (hinted < 0) {
        for (int c = 1; c < ncomp; ++c)
            if (better_root(roots[c], roots[main_comp])) main_comp = c;
    }
    std::stable_partition(comp_order.begin(), comp_order.end(), [&](int c) { return c == main_comp; });

    auto voxels_of = [&](const std::vector<int>& ids) {
        std::vector<Index3> v;
        v.reserve(ids.size());
        for (int i : ids) v.push_back(sg.voxel(i));
        return v;
    };

    for (int c : comp_order) {
        const int root = roots[c];
        const auto root_edges = sg.incident(root);
        if (root_edges.empty()) {
            Branch b;
            b.id = static_cast<int>(out.branches.size());
            b.centerline = voxels_of(nodes[root].voxels);
            out.branches.push_back(std::move(b));
            continue;
        }
        struct Pending {
            int edge;
            int from_node;
            std::optional<int> parent;
        };
        std::deque<Pending> q;
        q.push_back({root_edges.front(), root, std::nullopt});
        // a root with several edges (junction root) fans out directly
        for (size_t k = 1; k < root_edges.size(); ++k) q.push_back({root_edges[k], root, std::nullopt});
        std::vector<bool> edge_done(edges.size(), false);
        bool first = true;
        while (!q.empty()) {
            const auto item = q.front();
            q.pop_front();
            if (edge_done[item.edge]) continue;
            edge_done[item.edge] = true;
            const Edge e = SkeletonGraph::oriented(edges[item.edge], item.from_node, false);
            std::vector<int> line;
            if (first && sg.is_endpoint(root)) line.push_back(e.a_vox);
            first = false;
            line.insert(line.end(), e.path.begin(), e.path.end());
            line.push_back(e.b_vox);
            Branch b;
            b.id = static_cast<int>(out.branches.size());
            b.parent = item.parent;
            b.centerline = voxels_of(line);
            if (item.parent) out.at(*item.parent).children.push_back(b.id);
            out.branches.push_back(std::move(b));
            const int id = out.branches.back().id;
            // children ordered by their first voxel for determinism
            std::vector<std::pair<Index3, int>> next;
            for (int ei : sg.incident(e.b)) {
                if (edge_done[ei]) continue;
                const Edge ce = SkeletonGraph::oriented(edges[ei], e.b, false);
                const int first_vox = ce.path.empty() ? ce.b_vox : ce.path.front();
                next.push_back({sg.voxel(first_vox), ei});
            }
            std::sort(next.begin(), next.end());
            for (const auto& [_, ei] : next) q.push_back({ei, e.b, id});
        }
    }
    if (!out.branches.empty()) out.root_id = 0;
    return assign_generations(std::move(out));
}

}  // namespace gdds
