#include "warptile/autoscheduler.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "warptile/dependence.h"
#include "warptile/error.h"

namespace warptile {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Profiles

ProfileLoad load_profile(const std::string &text, const PipelineGraph &g) {
    ProfileLoad out;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        std::istringstream ls(line);
        std::vector<std::string> toks;
        for (std::string t; ls >> t;) toks.push_back(t);
        if (toks.empty()) continue;
        if (toks[0] != "stage" || toks.size() < 2) throw ParseError(line_no, 1, "expected 'stage <name> ...'");
        const std::string &name = toks[1];
        std::optional<int64_t> reg;
        std::optional<double> tpi;
        for (size_t i = 2; i < toks.size(); ++i) {
            auto eq = toks[i].find('=');
            if (eq == std::string::npos) throw ParseError(line_no, 1, "expected key=value, got '" + toks[i] + "'");
            std::string key = toks[i].substr(0, eq), val = toks[i].substr(eq + 1);
            try {
                size_t used = 0;
                if (key == "reg") {
                    long long v = std::stoll(val, &used);
                    if (used != val.size() || v < 0) throw std::invalid_argument("reg");
                    reg = v;
                } else if (key == "time_per_iter") {
                    double v = std::stod(val, &used);
                    if (used != val.size() || !(v > 0) || !std::isfinite(v)) throw std::invalid_argument("time");
                    tpi = v;
                } else {
                    throw ParseError(line_no, 1, "unknown field '" + key + "'");
                }
            } catch (const std::invalid_argument &) {
                throw ParseError(line_no, 1, "bad value for '" + key + "': " + val);
            } catch (const std::out_of_range &) {
                throw ParseError(line_no, 1, "value out of range for '" + key + "'");
            }
        }
        if (!reg || !tpi) throw ParseError(line_no, 1, "record needs reg=<int> and time_per_iter=<float>");
        if (out.table.count(name)) throw ParseError(line_no, 1, "duplicate profile for stage '" + name + "'");
        if (!g.stage_index(name)) out.warnings.push_back("profile entry for unknown stage '" + name + "' ignored");
        out.table[name] = StageProfile{*reg, *tpi};
    }
    for (const auto &st : g.stages()) {
        if (out.table.count(st.name)) continue;
        out.table[st.name] = StageProfile{};
        out.warnings.push_back("no profile for stage '" + st.name + "', using reg=16 time_per_iter=1e-9");
    }
    return out;
}

ProfileLoad load_profile_file(const std::string &path, const PipelineGraph &g) {
    std::ifstream in(path);
    if (!in) throw ValidationError("profile not found: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return load_profile(ss.str(), g);
}

// ---------------------------------------------------------------------------
// Search space

SearchSpace SearchSpace::defaults(int dims, const GpuSpec &gpu) {
    SearchSpace s;
    for (int d = 0; d < 3; ++d) {
        s.tiles[d].clear();
        if (d < dims) {
            for (int64_t t = 1; t <= 32; ++t) s.tiles[d].push_back(t);
        } else {
            s.tiles[d].push_back(1);
        }
    }
    for (int64_t bx = 1; bx <= 1024; bx *= 2)
        for (int64_t by = 1; bx * by <= 1024; by *= 2) {
            if (dims < 2 && by > 1) continue;
            if (bx * by < gpu.warp_size) continue;
            s.blocks.push_back({bx, by, 1});
        }
    std::sort(s.blocks.begin(), s.blocks.end(), [](const Dim3 &a, const Dim3 &b) {
        int64_t va = a[0] * a[1] * a[2], vb = b[0] * b[1] * b[2];
        if (va != vb) return va < vb;
        return a < b;
    });
    for (int f = 0; f <= 10; ++f) s.frac_reg_tenths.push_back(f);
    s.tx_sizes = gpu.tx_sizes;
    std::sort(s.tx_sizes.begin(), s.tx_sizes.end());
    return s;
}

int64_t SearchSpace::grid_size() const {
    return static_cast<int64_t>(tiles[0].size() * tiles[1].size() * tiles[2].size() * blocks.size());
}

int64_t SearchSpace::size() const {
    return grid_size() * static_cast<int64_t>(frac_reg_tenths.size() * tx_sizes.size());
}

void SearchSpace::validate() const {
    if (size() == 0) throw ValidationError("search space is empty");
    for (const auto &axis : tiles)
        for (int64_t t : axis)
            if (t < 1) throw ValidationError("tile sizes must be >= 1");
    for (int f : frac_reg_tenths)
        if (f < 0 || f > 10) throw ValidationError("register fractions must be in [0, 1]");
}

SearchSpace bound_search(const SearchSpace &space, int64_t budget) {
    if (budget < 1) throw ValidationError("budget must be at least 1");
    std::array<int64_t, 4> len{static_cast<int64_t>(space.tiles[0].size()), static_cast<int64_t>(space.tiles[1].size()),
                               static_cast<int64_t>(space.tiles[2].size()),
                               static_cast<int64_t>(space.blocks.size())};
    auto prod = [&] { return len[0] * len[1] * len[2] * len[3]; };
    while (prod() > budget) {
        int best = 0;
        for (int a = 1; a < 4; ++a)
            if (len[a] > len[best]) best = a;
        if (len[best] <= 1) break;
        len[best] = (len[best] + 1) / 2;
    }
    auto sample = [](const auto &axis, int64_t n) {
        std::decay_t<decltype(axis)> out;
        const int64_t m = static_cast<int64_t>(axis.size());
        for (int64_t i = 0; i < n; ++i) out.push_back(axis[static_cast<size_t>((2 * i + 1) * m / (2 * n))]);
        return out;
    };
    SearchSpace out = space;
    for (int d = 0; d < 3; ++d) out.tiles[d] = sample(space.tiles[d], len[d]);
    out.blocks = sample(space.blocks, len[3]);
    return out;
}

// ---------------------------------------------------------------------------
// Per-group search

namespace {

int64_t volume(const Dim3 &v) { return v[0] * v[1] * v[2]; }

}  // namespace

bool prefer_candidate(const KernelConfig &a, double cost_a, const KernelConfig &b, double cost_b) {
    if (cost_a != cost_b) return cost_a < cost_b;
    if (volume(a.tile) != volume(b.tile)) return volume(a.tile) < volume(b.tile);
    if (volume(a.block) != volume(b.block)) return volume(a.block) < volume(b.block);
    if (a.frac_reg_tenths != b.frac_reg_tenths) return a.frac_reg_tenths < b.frac_reg_tenths;
    if (a.tx_size != b.tx_size) return a.tx_size > b.tx_size;
    if (a.tile != b.tile) return a.tile < b.tile;
    return a.block < b.block;
}

GroupSchedule best_config_for_group(const PipelineGraph &g, const std::vector<std::string> &group,
                                    const SearchSpace &space, const GpuSpec &gpu, const CostWeights &weights,
                                    const ProfileTable &profiles) {
    space.validate();
    std::vector<int> idx = resolve_group(g, group);
    GroupSchedule best;
    bool have = false;
    auto consider = [&](const KernelConfig &cfg, const CostBreakdown &b) {
        if (!have || prefer_candidate(cfg, b.cost, best.config, best.breakdown.cost)) {
            best.config = cfg;
            best.breakdown = b;
            have = true;
        }
    };

    bool legal = constant_dependences(g, idx) && reads_within_domain(g, idx);
    std::optional<GroupGeometry> geom;
    if (legal) geom = group_geometry(g, idx);
    for (int64_t tz : space.tiles[2])
        for (int64_t ty : space.tiles[1])
            for (int64_t tx : space.tiles[0])
                for (const Dim3 &blk : space.blocks)
                    for (int f : space.frac_reg_tenths)
                        for (int64_t tsz : space.tx_sizes) {
                            KernelConfig cfg;
                            cfg.tile = {tx, ty, tz};
                            cfg.block = blk;
                            cfg.frac_reg_tenths = f;
                            cfg.tx_size = tsz;
                            if (legal) consider(cfg, group_cost(g, *geom, cfg, gpu, weights, profiles));
                            else consider(cfg, group_cost(g, group, cfg, gpu, weights, profiles));
                        }
    if (geom) {
        best.stages = geom->names;
    } else {
        std::vector<int> order = idx;
        std::sort(order.begin(), order.end());
        for (int s : topo_order_indices(g))
            if (std::binary_search(order.begin(), order.end(), s)) best.stages.push_back(g.stages()[s].name);
    }
    return best;
}

// ---------------------------------------------------------------------------
// Fusion

bool fusable_group(const PipelineGraph &g, const std::vector<int> &group) {
    if (group.empty()) return false;
    if (group.size() == 1) return true;
    const int n = g.num_stages();
    std::vector<char> in(n, 0);
    for (int s : group) in[s] = 1;
    const int dims = g.stages()[group[0]].dims();
    for (int s : group)
        if (g.stages()[s].dims() != dims) return false;

    // Weakly connected through internal edges.
    std::vector<char> seen(n, 0);
    std::vector<int> stack{group[0]};
    seen[group[0]] = 1;
    size_t reached = 0;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        ++reached;
        auto visit = [&](int u) {
            if (in[u] && !seen[u]) {
                seen[u] = 1;
                stack.push_back(u);
            }
        };
        for (int u : g.producers(v)) visit(u);
        for (int u : g.consumers(v)) visit(u);
    }
    if (reached != group.size()) return false;

    // Convex: no outside stage is both reachable from the group and able to reach it.
    std::vector<char> down(n, 0);
    for (int s : group)
        for (int c : g.consumers(s))
            if (!in[c] && !down[c]) {
                down[c] = 1;
                stack.push_back(c);
            }
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (int c : g.consumers(v)) {
            if (in[c]) return false;
            if (!down[c]) {
                down[c] = 1;
                stack.push_back(c);
            }
        }
    }
    return constant_dependences(g, group) && reads_within_domain(g, group);
}

std::vector<std::vector<int>> partition_key(const PipelineGraph &g, const ScheduleConfig &s) {
    std::vector<std::vector<int>> key;
    for (const auto &grp : s.groups) {
        std::vector<int> k = resolve_group(g, grp.stages);
        std::sort(k.begin(), k.end());
        key.push_back(std::move(k));
    }
    std::sort(key.begin(), key.end());
    return key;
}

double canonical_total(const std::vector<double> &costs_in_key_order) {
    double t = 0;
    for (double c : costs_in_key_order) t += c;
    return t;
}

namespace {

std::vector<int> mask_members(uint32_t m) {
    std::vector<int> out;
    for (int i = 0; m; ++i, m >>= 1)
        if (m & 1u) out.push_back(i);
    return out;
}

struct Plan {
    bool done = false;
    double total = std::numeric_limits<double>::infinity();
    std::vector<std::vector<int>> key;
    /// Groups in execution order.
    std::vector<uint32_t> groups;
};

}  // namespace

ScheduleConfig dp_fuse(const PipelineGraph &g, const SearchSpace &space, const GpuSpec &gpu,
                       const CostWeights &weights, const ProfileTable &profiles) {
    const auto t0 = std::chrono::steady_clock::now();
    const int n = g.num_stages();
    if (n > 24) throw ValidationError("fusion search supports at most 24 stages");
    const uint32_t full = (1u << n) - 1u;

    std::vector<uint32_t> pred(n, 0);
    for (int v = 0; v < n; ++v)
        for (int p : g.producers(v)) pred[v] |= 1u << p;

    std::vector<uint32_t> candidates;
    for (uint32_t m = 1; m <= full; ++m)
        if (fusable_group(g, mask_members(m))) candidates.push_back(m);

    std::unordered_map<uint32_t, GroupSchedule> group_best;
    auto group_cost_of = [&](uint32_t m) -> const GroupSchedule & {
        auto it = group_best.find(m);
        if (it != group_best.end()) return it->second;
        std::vector<std::string> names;
        for (int s : mask_members(m)) names.push_back(g.stages()[s].name);
        return group_best.emplace(m, best_config_for_group(g, names, space, gpu, weights, profiles)).first->second;
    };

    std::unordered_map<uint32_t, Plan> memo;
    std::function<const Plan &(uint32_t)> solve = [&](uint32_t done) -> const Plan & {
        auto it = memo.find(done);
        if (it != memo.end()) return it->second;
        Plan best;
        if (done == full) {
            best.total = 0;
            best.done = true;
            return memo.emplace(done, best).first->second;
        }
        for (uint32_t m : candidates) {
            if (m & done) continue;
            bool ready = true;
            for (int v : mask_members(m))
                if (pred[v] & ~(done | m)) ready = false;
            if (!ready) continue;
            const Plan &rest = solve(done | m);
            if (!rest.done) continue;
            Plan cand;
            cand.done = true;
            cand.key = rest.key;
            cand.key.push_back(mask_members(m));
            std::sort(cand.key.begin(), cand.key.end());
            std::vector<double> costs;
            for (const auto &grp : cand.key) {
                uint32_t gm = 0;
                for (int s : grp) gm |= 1u << s;
                costs.push_back(group_cost_of(gm).breakdown.cost);
            }
            cand.total = canonical_total(costs);
            cand.groups = {m};
            cand.groups.insert(cand.groups.end(), rest.groups.begin(), rest.groups.end());
            bool better = !best.done || cand.total < best.total || (cand.total == best.total && cand.key < best.key);
            if (better) best = std::move(cand);
        }
        return memo.emplace(done, std::move(best)).first->second;
    };

    const Plan &plan = solve(0);
    ScheduleConfig out;
    std::vector<uint32_t> order = plan.groups;
    out.total_cost = plan.total;
    out.feasible = plan.done && std::isfinite(plan.total);
    if (!out.feasible) {
        // Every grouping is infeasible: fall back to singletons in topological order.
        order.clear();
        std::vector<double> costs;
        for (int s : topo_order_indices(g)) order.push_back(1u << s);
        for (int s = 0; s < n; ++s) costs.push_back(group_cost_of(1u << s).breakdown.cost);
        out.total_cost = canonical_total(costs);
    }
    for (uint32_t m : order) out.groups.push_back(group_cost_of(m));
    out.search_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json number_or_inf(double v) {
    if (std::isinf(v)) return "inf";
    return v;
}

double read_number(const json &j) {
    if (j.is_string()) {
        if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
        throw ValidationError("expected a number in schedule");
    }
    return j.get<double>();
}

json breakdown_json(const CostBreakdown &b) {
    json j;
    j["feasible"] = b.feasible;
    if (!b.feasible) {
        j["infeasible_reason"] = b.infeasible_reason;
        j["infeasible_detail"] = b.infeasible_detail;
    }
    j["shMemPerTB"] = b.sh_mem_per_tb;
    j["regTile"] = b.reg_tile;
    j["regPerTh"] = b.reg_per_th;
    j["warpsPerTB"] = b.warps_per_tb;
    j["threadsPerTB"] = b.threads_per_tb;
    j["totalBlocks"] = b.total_blocks;
    j["tileVol"] = b.tile_volume;
    j["maxTBPerSM"] = b.max_tb_per_sm;
    j["totalGLMemTxs"] = b.total_gl_mem_txs;
    j["occupancy"] = b.occupancy;
    j["memTime"] = b.mem_time;
    j["computeTime"] = b.compute_time;
    j["unallocatedShMem"] = b.unallocated_sh_mem;
    j["unusedReg"] = b.unused_reg;
    j["fracOverlap"] = b.frac_overlap.value();
    j["fracOverlapRational"] = std::to_string(b.frac_overlap.num) + "/" + std::to_string(b.frac_overlap.den);
    j["extraTBs"] = b.extra_tbs;
    j["cost"] = number_or_inf(b.cost);
    return j;
}

CostBreakdown breakdown_from(const json &j) {
    CostBreakdown b;
    b.feasible = j.value("feasible", true);
    b.infeasible_reason = j.value("infeasible_reason", std::string());
    b.infeasible_detail = j.value("infeasible_detail", std::string());
    b.sh_mem_per_tb = j.value("shMemPerTB", int64_t{0});
    b.reg_tile = j.value("regTile", int64_t{0});
    b.reg_per_th = j.value("regPerTh", int64_t{0});
    b.warps_per_tb = j.value("warpsPerTB", int64_t{0});
    b.threads_per_tb = j.value("threadsPerTB", int64_t{0});
    b.total_blocks = j.value("totalBlocks", int64_t{0});
    b.tile_volume = j.value("tileVol", int64_t{0});
    b.max_tb_per_sm = j.value("maxTBPerSM", int64_t{0});
    b.total_gl_mem_txs = j.value("totalGLMemTxs", int64_t{0});
    b.occupancy = j.value("occupancy", 0.0);
    b.mem_time = j.value("memTime", 0.0);
    b.compute_time = j.value("computeTime", 0.0);
    b.unallocated_sh_mem = j.value("unallocatedShMem", 0.0);
    b.unused_reg = j.value("unusedReg", 0.0);
    if (j.contains("fracOverlapRational")) {
        std::string r = j["fracOverlapRational"].get<std::string>();
        auto slash = r.find('/');
        if (slash != std::string::npos) b.frac_overlap = {std::stoll(r.substr(0, slash)), std::stoll(r.substr(slash + 1))};
    }
    b.extra_tbs = j.value("extraTBs", int64_t{0});
    if (j.contains("cost")) b.cost = read_number(j["cost"]);
    return b;
}

Dim3 dim3_from(const json &j, const char *what) {
    auto v = j.get<std::vector<int64_t>>();
    if (v.size() != 3) throw ValidationError(std::string(what) + " needs three entries");
    return {v[0], v[1], v[2]};
}

}  // namespace

std::string breakdown_to_json_text(const CostBreakdown &b) { return breakdown_json(b).dump(2); }

std::string schedule_to_json(const ScheduleConfig &s) {
    json j;
    j["bounded"] = s.bounded;
    j["budget"] = s.budget;
    j["feasible"] = s.feasible;
    j["total_cost"] = number_or_inf(s.total_cost);
    j["search_seconds"] = s.search_seconds;
    json groups = json::array();
    for (const auto &grp : s.groups) {
        json gj;
        gj["stages"] = grp.stages;
        gj["tile"] = std::vector<int64_t>(grp.config.tile.begin(), grp.config.tile.end());
        gj["block"] = std::vector<int64_t>(grp.config.block.begin(), grp.config.block.end());
        gj["frac_reg"] = grp.config.frac_reg();
        gj["tx_size"] = grp.config.tx_size;
        gj["breakdown"] = breakdown_json(grp.breakdown);
        groups.push_back(std::move(gj));
    }
    j["groups"] = std::move(groups);
    return j.dump(2) + "\n";
}

ScheduleConfig schedule_from_json(const std::string &text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception &e) {
        throw ValidationError(std::string("malformed schedule: ") + e.what());
    }
    try {
        ScheduleConfig s;
        s.bounded = j.value("bounded", false);
        s.budget = j.value("budget", int64_t{0});
        s.feasible = j.value("feasible", true);
        s.search_seconds = j.value("search_seconds", 0.0);
        if (j.contains("total_cost")) s.total_cost = read_number(j["total_cost"]);
        for (const auto &gj : j.at("groups")) {
            GroupSchedule grp;
            grp.stages = gj.at("stages").get<std::vector<std::string>>();
            grp.config.tile = dim3_from(gj.at("tile"), "tile");
            grp.config.block = dim3_from(gj.at("block"), "block");
            double f = gj.at("frac_reg").get<double>();
            grp.config.frac_reg_tenths = static_cast<int>(std::lround(f * 10));
            if (std::abs(f * 10 - grp.config.frac_reg_tenths) > 1e-6)
                throw ValidationError("frac_reg must be a multiple of 0.1");
            grp.config.tx_size = gj.at("tx_size").get<int64_t>();
            if (gj.contains("breakdown")) grp.breakdown = breakdown_from(gj["breakdown"]);
            s.groups.push_back(std::move(grp));
        }
        return s;
    } catch (const json::exception &e) {
        throw ValidationError(std::string("malformed schedule: ") + e.what());
    }
}

}  // namespace warptile
