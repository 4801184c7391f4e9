#include "warptile/dependence.h"

#include <algorithm>
#include <numeric>
#include <set>
#include <tuple>

#include "warptile/error.h"

namespace warptile {

std::vector<DependenceVector> compute_dependence_vectors(const PipelineGraph &g) {
    std::vector<DependenceVector> out;
    for (int c = 0; c < g.num_stages(); ++c) {
        const Stage &st = g.stages()[c];
        std::set<std::pair<int, std::vector<int64_t>>> seen;
        for (const LoadNode *ld : collect_loads(*st.expr)) {
            if (ld->from_image) continue;
            int p = *g.stage_index(ld->source);
            std::vector<int64_t> off;
            for (const auto &ix : ld->index) off.push_back(-ix.offset);
            seen.insert({p, off});
        }
        for (const auto &[p, off] : seen) out.push_back({g.stages()[p].name, st.name, off});
    }
    return out;
}

std::vector<int> resolve_group(const PipelineGraph &g, const std::vector<std::string> &group) {
    std::vector<int> idx;
    for (const auto &n : group) {
        auto i = g.stage_index(n);
        if (!i) throw ValidationError("unknown stage '" + n + "' in group");
        if (std::find(idx.begin(), idx.end(), *i) != idx.end())
            throw ValidationError("stage '" + n + "' listed twice in group");
        idx.push_back(*i);
    }
    return idx;
}

namespace {

bool in_group(const std::vector<int> &group, int s) {
    return std::find(group.begin(), group.end(), s) != group.end();
}

}  // namespace

bool constant_dependences(const PipelineGraph &g, const std::vector<int> &group) {
    for (int c : group) {
        for (const LoadNode *ld : collect_loads(*g.stages()[c].expr)) {
            if (ld->from_image) continue;
            if (!in_group(group, *g.stage_index(ld->source))) continue;
            for (const auto &ix : ld->index)
                if (ix.coef != 1) return false;
        }
    }
    return true;
}

bool constant_dependences(const PipelineGraph &g, const std::vector<std::string> &group) {
    return constant_dependences(g, resolve_group(g, group));
}

bool reads_within_domain(const PipelineGraph &g, const std::vector<int> &group) {
    for (int c : group) {
        const Stage &cs = g.stages()[c];
        for (const LoadNode *ld : collect_loads(*cs.expr)) {
            if (ld->from_image) continue;
            int p = *g.stage_index(ld->source);
            if (!in_group(group, p)) continue;
            const Stage &ps = g.stages()[p];
            for (size_t d = 0; d < ld->index.size(); ++d) {
                const auto &ix = ld->index[d];
                int64_t a = ix.coef * cs.domain[d].lo + ix.offset;
                int64_t b = ix.coef * cs.domain[d].hi + ix.offset;
                if (!ps.domain[d].contains(std::min(a, b)) || !ps.domain[d].contains(std::max(a, b))) return false;
            }
        }
    }
    return true;
}

std::vector<int> group_outputs(const PipelineGraph &g, const std::vector<int> &group) {
    std::vector<int> out;
    for (int s : topo_order_indices(g)) {
        if (!in_group(group, s)) continue;
        bool leaves = g.is_liveout(g.stages()[s].name);
        for (int c : g.consumers(s))
            if (!in_group(group, c)) leaves = true;
        if (leaves) out.push_back(s);
    }
    return out;
}

int GroupGeometry::member(int stage) const {
    for (size_t i = 0; i < stages.size(); ++i)
        if (stages[i] == stage) return static_cast<int>(i);
    return -1;
}

GroupGeometry group_geometry(const PipelineGraph &g, const std::vector<int> &group) {
    if (group.empty()) throw ValidationError("empty group");
    if (!constant_dependences(g, group)) throw ValidationError("non-constant dependences in group");

    GroupGeometry geom;
    for (int s : topo_order_indices(g))
        if (in_group(group, s)) geom.stages.push_back(s);
    if (geom.stages.size() != group.size()) throw ValidationError("group contains an unknown stage index");
    geom.dims = g.stages()[geom.stages.front()].dims();
    for (int s : geom.stages) {
        if (g.stages()[s].dims() != geom.dims) throw ValidationError("group members differ in dimensionality");
        geom.names.push_back(g.stages()[s].name);
    }
    geom.outputs = group_outputs(g, group);

    const int n = static_cast<int>(geom.stages.size());
    geom.left.assign(n, std::vector<int64_t>(geom.dims, 0));
    geom.right.assign(n, std::vector<int64_t>(geom.dims, 0));
    geom.buffered.assign(n, false);

    // Consumers come later in topological order, so a reverse sweep sees them first.
    for (int m = n - 1; m >= 0; --m) {
        const int c = geom.stages[m];
        for (const LoadNode *ld : collect_loads(*g.stages()[c].expr)) {
            if (ld->from_image) continue;
            int pm = geom.member(*g.stage_index(ld->source));
            if (pm < 0) continue;
            geom.buffered[pm] = true;
            for (int d = 0; d < geom.dims; ++d) {
                int64_t b = ld->index[d].offset;
                geom.left[pm][d] = std::max(geom.left[pm][d], geom.left[m][d] + std::max<int64_t>(0, -b));
                geom.right[pm][d] = std::max(geom.right[pm][d], geom.right[m][d] + std::max<int64_t>(0, b));
            }
        }
    }
    geom.phi_r.assign(geom.dims, 0);
    for (int m = 0; m < n; ++m)
        for (int d = 0; d < geom.dims; ++d) geom.phi_r[d] = std::max(geom.phi_r[d], geom.right[m][d]);

    for (int d = 0; d < geom.dims; ++d) {
        Interval box{0, 0};
        bool first = true;
        for (int s : geom.outputs) {
            const Interval &iv = g.stages()[s].domain[d];
            if (first) box = iv;
            box.lo = std::min(box.lo, iv.lo);
            box.hi = std::max(box.hi, iv.hi);
            first = false;
        }
        geom.box.push_back(box);
    }
    return geom;
}

GroupGeometry group_geometry(const PipelineGraph &g, const std::vector<std::string> &group) {
    return group_geometry(g, resolve_group(g, group));
}

Rational overlap_fraction(const GroupGeometry &geom, const std::vector<int64_t> &tile,
                         const std::vector<int64_t> &warp) {
    int64_t redundant = 0, total = 0;
    for (size_t m = 0; m < geom.stages.size(); ++m) {
        if (!geom.buffered[m]) continue;
        int64_t core = 1, all = 1;
        for (int d = 0; d < geom.dims; ++d) {
            int64_t t = d < static_cast<int>(tile.size()) ? tile[d] : 1;
            int64_t w = d < static_cast<int>(warp.size()) ? warp[d] : 1;
            if (t < 1 || w < 1) throw ValidationError("tile and warp sizes must be positive");
            core *= t * w;
            all *= t * w + geom.overlap(static_cast<int>(m), d);
        }
        redundant += all - core;
        total += all;
    }
    if (total == 0) return {0, 1};
    int64_t gcd = std::gcd(redundant, total);
    return {redundant / gcd, total / gcd};
}

}  // namespace warptile
