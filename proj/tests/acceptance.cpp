// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <functional>
#include <future>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "partition_oracle.h"
#include "support.h"
#include "warptile/autoscheduler.h"
#include "warptile/dependence.h"
#include "warptile/error.h"
#include "warptile/gpu_cost_model.h"
#include "warptile/hybrid_codegen.h"
#include "warptile/kernel_ir.h"
#include "warptile/otpw.h"
#include "warptile/simulator.h"

using namespace warptile;
using testsupport::config;
using testsupport::fixture;
using testsupport::stage_names;

namespace {

const std::vector<std::string> kAllFixtures = {"blur",    "blur_x",  "blur_x_interior", "chain3",  "chain4",
                                               "diamond", "harris",  "pointwise",       "volume3d"};

struct Outcome {
    bool pass = true;
    std::string detail;
};

int failures = 0;

void report(int id, const std::string &what, const std::function<Outcome()> &check) {
    auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = check();
    } catch (const std::exception &e) {
        o.pass = false;
        o.detail = std::string("exception: ") + e.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::printf("criterion %d: %s - %s (%s) [%.2f s]\n", id, o.pass ? "PASS" : "FAIL", what.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
}

// Runs `jobs` on all hardware threads and returns the first failure message, if any.
std::string run_parallel(const std::vector<std::function<std::string()>> &jobs) {
    const size_t workers = std::max(1u, std::thread::hardware_concurrency());
    std::vector<std::string> results(jobs.size());
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (size_t w = 0; w < std::min(workers, jobs.size()); ++w)
        pool.emplace_back([&] {
            for (size_t i = next++; i < jobs.size(); i = next++) {
                try {
                    results[i] = jobs[i]();
                } catch (const std::exception &e) {
                    results[i] = e.what();
                }
            }
        });
    for (auto &t : pool) t.join();
    for (const auto &r : results)
        if (!r.empty()) return r;
    return "";
}

std::string dim3_text(const Dim3 &d) { return to_string(d); }

// Shared-only layout: the split removed, every iteration in the shared phase.
GroupLayout without_split(GroupLayout L) {
    L.plan.split_dim.reset();
    L.plan.reg_iters = L.config.tile;
    L.plan.shared_iters = L.config.tile;
    return L;
}

std::vector<std::string> fused_or_first(const PipelineGraph &g) {
    std::vector<int> all;
    for (int i = 0; i < g.num_stages(); ++i) all.push_back(i);
    return fusable_group(g, all) ? stage_names(g) : std::vector<std::string>{g.stages()[0].name};
}

// Simulates the given kernel on seeded inputs, feeding outside producers from the reference.
BufferMap simulate_outputs(const PipelineGraph &g, const ir::Kernel &k, uint64_t seed, BufferMap *expected) {
    BufferMap inputs = random_inputs(g, seed);
    BufferMap all = reference_eval(g, inputs, true);
    BufferMap mem = inputs;
    for (const auto &b : k.buffers)
        if (!b.output && !mem.count(b.name)) mem[b.name] = all.at(b.name);
    simulate_kernel(k, mem);
    BufferMap out;
    for (const auto &b : k.buffers)
        if (b.output) {
            out[b.name] = mem.at(b.name);
            if (expected) (*expected)[b.name] = all.at(b.name);
        }
    return out;
}

Outcome warp_geometry() {
    Dim3 w = warp_sizes({16, 8, 1}, 32);
    Dim3 t = warp_tile({8, 4, 1}, w);
    Outcome o;
    o.pass = w == Dim3{16, 2, 1} && t == Dim3{128, 8, 1};
    o.detail = "warp " + dim3_text(w) + ", warp tile " + dim3_text(t);
    return o;
}

Outcome overlap_fractions() {
    PipelineGraph g = fixture("blur_x");
    GroupGeometry geom = group_geometry(g, std::vector<std::string>{"blurx", "blury"});
    Rational t8 = overlap_fraction(geom, {8, 1}, {32, 1});
    Rational t16 = overlap_fraction(geom, {16, 1}, {32, 1});
    Outcome o;
    o.pass = t8 == Rational{2, 258} && t16 == Rational{2, 514};
    std::ostringstream ss;
    ss << "T=8: " << t8.num << "/" << t8.den << " = " << 100 * t8.value() << "%, T=16: " << t16.num << "/"
       << t16.den << " = " << 100 * t16.value() << "%";
    o.detail = ss.str();
    return o;
}

Outcome occupancy_arithmetic() {
    GpuSpec gtx = gpu_preset("gtx1080ti");
    double shared_only = theoretical_occupancy(17 * 1024, 8, 24, gtx).occupancy;
    double half = theoretical_occupancy(17 * 1024 / 2, 8, 24, gtx).occupancy;

    // The same numbers through the full cost model on the horizontal blur pair.
    PipelineGraph g = fixture("blur_x");
    ProfileTable prof = load_profile_file(testsupport::data_path("profiles/blur.profile"), g).table;
    CostWeights w = weights_preset("gtx1080ti");
    CostBreakdown s = group_cost(g, {"blurx", "blury"}, config({16, 1, 1}, {64, 4, 1}, 0), gtx, w, prof);
    CostBreakdown h = group_cost(g, {"blurx", "blury"}, config({16, 1, 1}, {64, 4, 1}, 5), gtx, w, prof);
    Outcome o;
    o.pass = shared_only == 0.625 && half == 1.0 && s.occupancy == 0.625 && h.occupancy == 1.0;
    std::ostringstream ss;
    ss << "17KB/8 warps/24 regs: " << shared_only << ", half shared: " << half << "; blur T=16 shared-only "
       << s.sh_mem_per_tb << " B -> " << s.occupancy << ", fracReg 0.5 " << h.sh_mem_per_tb << " B -> "
       << h.occupancy;
    o.detail = ss.str();
    return o;
}

Outcome oracle_equivalence() {
    std::vector<std::function<std::string()>> jobs;
    for (const char *name : {"blur", "chain3", "diamond", "harris"}) {
        PipelineGraph g = fixture(name);
        for (int tenths = 0; tenths <= 10; ++tenths)
            for (int64_t tx = 1; tx <= 4; ++tx)
                for (int64_t ty = 1; ty <= 4; ++ty)
                    for (Dim3 block : {Dim3{32, 1, 1}, Dim3{64, 4, 1}})
                        jobs.push_back([g, name = std::string(name), tenths, tx, ty, block]() -> std::string {
                            KernelConfig cfg = config({tx, ty, 1}, block, tenths);
                            ir::Kernel k = gen_group_kernel(g, stage_names(g), cfg);
                            BufferMap expected;
                            BufferMap actual = simulate_outputs(g, k, 42, &expected);
                            CompareReport r = compare_outputs(expected, actual);
                            if (r.match) return "";
                            return name + " T=" + dim3_text(cfg.tile) + " B=" + dim3_text(block) + " fracReg " +
                                   std::to_string(tenths) + "/10: " + r.message();
                        });
    }
    std::string fail = run_parallel(jobs);
    Outcome o;
    o.pass = fail.empty();
    o.detail = o.pass ? std::to_string(jobs.size()) + " configurations bit-exact" : fail;
    return o;
}

struct TraceCheck {
    int64_t warps = 0;
    int64_t accesses = 0;
    int64_t max_excess = 0;  // largest |traced - modeled| minus allowance
    std::string first_failure;
};

// Compares per-warp traced segments with the model at that warp's origin. Only warps whose tile lies
// inside the group's box are compared. `slack_per_access` = 0 demands exact equality.
TraceCheck compare_trace(const PipelineGraph &g, const std::vector<std::string> &group, const KernelConfig &cfg,
                         int64_t slack_per_access) {
    GroupLayout L = make_layout(g, group_geometry(g, group), cfg, 32);
    ir::Kernel k = gen_group_kernel(g, L, "probe");
    BufferMap inputs = random_inputs(g, 3);
    BufferMap all = reference_eval(g, inputs, true);
    BufferMap mem = inputs;
    for (const auto &b : k.buffers)
        if (!b.output && !mem.count(b.name)) mem[b.name] = all.at(b.name);
    SimConfig sc;
    sc.trace = true;
    SimResult r = simulate_kernel(k, mem, sc);

    struct PerWarp {
        Dim3 coord{};
        int64_t seg32 = 0, seg128 = 0, accesses = 0;
    };
    std::map<Dim3, PerWarp> warps;
    for (const MemAccess &a : r.trace.accesses) {
        PerWarp &w = warps[a.warp_coord];
        w.coord = a.warp_coord;
        w.seg32 += a.seg32;
        w.seg128 += a.seg128;
        ++w.accesses;
    }
    TraceCheck out;
    for (const auto &[coord, w] : warps) {
        Dim3 origin{};
        bool inside = true;
        for (int d = 0; d < 3; ++d) {
            int64_t span = cfg.tile[d] * L.warp[d];
            origin[d] = L.box[d].lo + coord[d] * span;
            if (origin[d] + span - 1 > L.box[d].hi) inside = false;
        }
        if (!inside) continue;
        ++out.warps;
        out.accesses += w.accesses;
        int64_t m32 = global_mem_transactions(g, L, 32, origin);
        int64_t m128 = global_mem_transactions(g, L, 128, origin);
        int64_t allow = slack_per_access * w.accesses;
        int64_t excess = std::max(std::abs(m32 - w.seg32), std::abs(m128 - w.seg128)) - allow;
        out.max_excess = std::max(out.max_excess, excess);
        if (excess > 0 && out.first_failure.empty())
            out.first_failure = "warp " + dim3_text(coord) + ": traced " + std::to_string(w.seg32) + "/" +
                                std::to_string(w.seg128) + " vs model " + std::to_string(m32) + "/" +
                                std::to_string(m128);
    }
    return out;
}

Outcome cost_model_cross_check() {
    Outcome o;
    int64_t exact_warps = 0, clamped_warps = 0, configs = 0;
    auto sweep = [&](const std::string &name, int64_t slack) {
        PipelineGraph g = fixture(name);
        std::vector<std::string> group = fused_or_first(g);
        for (int64_t tx : {1, 2, 4, 8})
            for (int64_t ty : {1, 2})
                for (Dim3 block : {Dim3{32, 1, 1}, Dim3{64, 4, 1}})
                    for (int tenths : {0, 5, 10}) {
                        ++configs;
                        TraceCheck c = compare_trace(g, group, config({tx, ty, 1}, block, tenths), slack);
                        (slack == 0 ? exact_warps : clamped_warps) += c.warps;
                        if (!c.first_failure.empty() && o.pass) {
                            o.pass = false;
                            o.detail = name + " T=(" + std::to_string(tx) + "," + std::to_string(ty) + ") fracReg " +
                                       std::to_string(tenths) + "/10 " + c.first_failure;
                        }
                    }
    };
    sweep("blur_x_interior", 0);
    for (const char *name : {"blur", "blur_x", "chain3", "diamond"}) sweep(name, 1);
    if (o.pass)
        o.detail = std::to_string(exact_warps) + " unit-stride warps exact, " + std::to_string(clamped_warps) +
                   " clamped-boundary warps within 1 segment per load, " + std::to_string(configs) + " configs";
    if (exact_warps == 0) {
        o.pass = false;
        o.detail = "no warp inside the box was compared";
    }
    return o;
}

Outcome dp_correctness() {
    GpuSpec gpu = gpu_preset("gtx1080ti");
    CostWeights w = weights_preset("gtx1080ti");
    int checked = 0;
    for (const auto &name : kAllFixtures) {
        PipelineGraph g = fixture(name);
        if (g.num_stages() > 6) continue;
        ProfileTable prof = load_profile("", g).table;
        int dims = 1;
        for (const auto &s : g.stages()) dims = std::max(dims, s.dims());
        SearchSpace space = bound_search(SearchSpace::defaults(dims, gpu), 8);
        ScheduleConfig s = dp_fuse(g, space, gpu, w, prof);
        testsupport::OracleResult oracle = testsupport::exhaustive_partitions(g, space, gpu, w, prof);
        if (partition_key(g, s) != oracle.key || s.total_cost != oracle.total)
            return {false, name + ": DP cost " + std::to_string(s.total_cost) + " vs exhaustive " +
                               std::to_string(oracle.total)};
        ++checked;
    }
    return {true, std::to_string(checked) + " fixtures, groupings and totals identical"};
}

// Pre-order statement events of a kernel body.
struct Event {
    enum Kind { Write, Read, Barrier } kind;
    std::string what;
};

void expr_reads(const ir::ExprP &e, std::vector<Event> &out) {
    if (!e) return;
    std::visit(
        [&](const auto &n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, ir::Reg>) {
                out.push_back({Event::Read, "reg:" + n.name});
            } else if constexpr (std::is_same_v<T, ir::LoadShared>) {
                expr_reads(n.index, out);
                out.push_back({Event::Read, "shared:" + n.array});
            } else if constexpr (std::is_same_v<T, ir::LoadGlobal>) {
                for (const auto &c : n.coords) expr_reads(c, out);
            } else if constexpr (std::is_same_v<T, ir::Unary>) {
                expr_reads(n.arg, out);
            } else if constexpr (std::is_same_v<T, ir::Binary>) {
                expr_reads(n.lhs, out);
                expr_reads(n.rhs, out);
            } else if constexpr (std::is_same_v<T, ir::Select>) {
                expr_reads(n.cond, out);
                expr_reads(n.if_true, out);
                expr_reads(n.if_false, out);
            }
        },
        e->node);
}

void block_events(const ir::Block &b, std::vector<Event> &out) {
    for (const auto &s : b)
        std::visit(
            [&](const auto &n) {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, ir::Assign>) {
                    expr_reads(n.value, out);
                    out.push_back({Event::Write, "reg:" + n.reg});
                } else if constexpr (std::is_same_v<T, ir::Shuffle>) {
                    expr_reads(n.src_lane, out);
                    out.push_back({Event::Read, "reg:" + n.src});
                    out.push_back({Event::Write, "reg:" + n.dst});
                } else if constexpr (std::is_same_v<T, ir::StoreShared>) {
                    expr_reads(n.index, out);
                    expr_reads(n.value, out);
                    out.push_back({Event::Write, "shared:" + n.array});
                } else if constexpr (std::is_same_v<T, ir::StoreGlobal>) {
                    for (const auto &c : n.coords) expr_reads(c, out);
                    expr_reads(n.value, out);
                } else if constexpr (std::is_same_v<T, ir::If>) {
                    expr_reads(n.cond, out);
                    block_events(n.then_body, out);
                } else if constexpr (std::is_same_v<T, ir::Loop>) {
                    block_events(n.body, out);
                } else {
                    out.push_back({Event::Barrier, std::is_same_v<T, ir::SyncBlock> ? "block" : "warp"});
                }
            },
            s.node);
}

// Each internal edge needs a warp barrier between the producer's last write and the first read of its data.
std::string check_barriers(const PipelineGraph &g, const std::vector<std::string> &group, const ir::Kernel &k) {
    if (ir::count_sync_stalls(k).sync_block != 0) return "thread-block barrier emitted";
    std::vector<Event> ev;
    block_events(k.body, ev);
    std::set<std::string> in(group.begin(), group.end());
    int edges = 0;
    for (const auto &c : group)
        for (int p : g.producers(*g.stage_index(c))) {
            const std::string &pn = g.stages()[p].name;
            if (!in.count(pn)) continue;
            ++edges;
            std::string shared = "shared:sh_" + pn;
            int64_t last_write = -1, first_read = -1;
            for (size_t i = 0; i < ev.size(); ++i) {
                bool mine = ev[i].what == shared || ev[i].what.rfind("reg:" + pn + "_r", 0) == 0;
                if (!mine) continue;
                if (ev[i].kind == Event::Write) last_write = static_cast<int64_t>(i);
                if (ev[i].kind == Event::Read && first_read < 0) first_read = static_cast<int64_t>(i);
            }
            if (last_write < 0 || first_read < 0) return "edge " + pn + "->" + c + " has no on-chip exchange";
            bool separated = false;
            for (int64_t i = 0; i < static_cast<int64_t>(ev.size()); ++i)
                if (ev[i].kind == Event::Barrier && ev[i].what == "warp" && i > last_write) {
                    // A barrier after the producer's last write and before the consumer's first read
                    // that follows the write.
                    for (int64_t j = i + 1; j < static_cast<int64_t>(ev.size()); ++j)
                        if (ev[j].kind == Event::Read &&
                            (ev[j].what == shared || ev[j].what.rfind("reg:" + pn + "_r", 0) == 0)) {
                            separated = true;
                            break;
                        }
                    break;
                }
            if (!separated) return "edge " + pn + "->" + c + " has no separating warp barrier";
        }
    if (ir::count_sync_stalls(k).sync_warp < (edges > 0 ? 1 : 0)) return "missing warp barrier";
    return "";
}

Outcome synchronization_property() {
    int kernels = 0, edges = 0;
    for (const auto &name : kAllFixtures) {
        PipelineGraph g = fixture(name);
        std::vector<std::string> group = fused_or_first(g);
        std::set<std::string> in(group.begin(), group.end());
        for (const auto &c : group)
            for (int p : g.producers(*g.stage_index(c))) edges += in.count(g.stages()[p].name) ? 1 : 0;
        for (Dim3 tile : {Dim3{1, 1, 1}, Dim3{4, 2, 1}, Dim3{8, 1, 1}})
            for (Dim3 block : {Dim3{32, 1, 1}, Dim3{64, 4, 1}, Dim3{16, 8, 1}})
                for (int tenths : {0, 5, 10}) {
                    ir::Kernel k = gen_group_kernel(g, group, config(tile, block, tenths));
                    std::string problem = check_barriers(g, group, k);
                    std::string text = ir::render_cuda(k);
                    if (problem.empty() && text.find("__syncthreads") != std::string::npos)
                        problem = "rendered text contains __syncthreads";
                    if (!problem.empty())
                        return {false, name + " T=" + dim3_text(tile) + " B=" + dim3_text(block) + ": " + problem};
                    ++kernels;
                }
    }
    return {true, std::to_string(kernels) + " kernels, zero block barriers, every internal edge separated by a warp "
                                            "barrier"};
}

Outcome lane_math() {
    int64_t cases = 0;
    for (int64_t W : {2, 4, 8, 16, 32}) {
        const int64_t Wy = 32 / W;
        const Dim3 warp{W, Wy, 1};
        for (int64_t diff = -2 * W + 1; diff <= 0; ++diff)
            for (int64_t dy = 0; dy <= std::min<int64_t>(Wy, 2); ++dy)
                for (int64_t ly = 0; ly < Wy; ++ly)
                    for (int64_t lane = 0; lane < W; ++lane)
                        for (int64_t r = 0; r < 4; ++r) {
                            ++cases;
                            LoadClassification c = classify_load(0, {diff, dy, 0}, {lane, ly, 0}, warp, r);
                            // Scratchpad-only view: the producer row holds split position q at
                            // reg_index * W + srcLane for q >= 0 and in shared memory for q < 0.
                            const int64_t q = r * W + lane + diff;
                            const int64_t want_y = (ly + dy) % Wy;
                            const int64_t want_shift_y = (ly + dy) / Wy;
                            auto fail = [&](const std::string &why) {
                                return Outcome{false, "W=" + std::to_string(W) + " diff=" + std::to_string(diff) +
                                                          " lane=" + std::to_string(lane) + " ly=" +
                                                          std::to_string(ly) + " r=" + std::to_string(r) + ": " + why};
                            };
                            if (c.other_iter_shift[1] != want_shift_y) return fail("wrong y iteration shift");
                            if (q < 0) {
                                if (c.type != LoadType::SharedMemory) return fail("expected a shared load");
                                continue;
                            }
                            if (c.type == LoadType::SharedMemory) return fail("unexpected shared load");
                            for (int64_t src : {c.curr_tile_src_lane, c.prev_tile_src_lane})
                                if (src < 0 || src >= W * Wy) return fail("source lane out of range");
                            if (c.curr_tile_src_lane != c.prev_tile_src_lane) return fail("source lanes differ");
                            const int64_t src_x = c.curr_tile_src_lane % W;
                            const int64_t src_y = c.curr_tile_src_lane / W;
                            if (src_y != want_y) return fail("wrong source row");
                            if (c.reg_index * W + src_x != q) return fail("value position differs from the oracle");
                            const bool own = src_x == lane && src_y == ly;
                            LoadType want = own                ? LoadType::OwnRegister
                                            : c.reg_index == r ? LoadType::CurrTileShuffle
                                                               : LoadType::PrevTileShuffle;
                            if (c.type != want) return fail("wrong load type");
                        }
    }
    return {true, std::to_string(cases) + " cases"};
}

Outcome hybrid_degeneracy() {
    int compared = 0, extents = 0;
    for (const auto &name : kAllFixtures) {
        PipelineGraph g = fixture(name);
        std::vector<std::string> group = fused_or_first(g);
        GroupGeometry geom = group_geometry(g, group);
        for (Dim3 tile : {Dim3{1, 1, 1}, Dim3{2, 2, 1}, Dim3{4, 1, 1}, Dim3{8, 2, 1}})
            for (Dim3 block : {Dim3{32, 1, 1}, Dim3{64, 4, 1}}) {
                GroupLayout f0 = make_layout(g, geom, config(tile, block, 0), 32);
                BufferMap a = simulate_outputs(g, gen_group_kernel(g, f0, "frac0"), 9, nullptr);
                BufferMap b = simulate_outputs(g, gen_group_kernel(g, without_split(f0), "shared_only"), 9, nullptr);
                if (!compare_outputs(a, b).match)
                    return {false, name + " T=" + dim3_text(tile) + ": fracReg 0 differs from the shared-only path"};
                ++compared;

                GroupLayout f10 = make_layout(g, geom, config(tile, block, 10), 32);
                if (!f10.plan.split_dim) continue;
                const int sd = *f10.plan.split_dim;
                for (const MemberLayout &m : f10.members) {
                    if (!m.buffered) continue;
                    ++extents;
                    if (m.phase_a_extent[sd] != m.left[sd] + m.right[sd])
                        return {false, name + " member " + m.name + ": shared extent " +
                                           std::to_string(m.phase_a_extent[sd]) + " != overlap " +
                                           std::to_string(m.left[sd] + m.right[sd])};
                }
            }
    }
    return {true, std::to_string(compared) + " fracReg 0 kernels equal shared-only, " + std::to_string(extents) +
                      " fracReg 1 shared extents equal the overlap extent"};
}

}  // namespace

int main() {
    report(1, "warp geometry", warp_geometry);
    report(2, "overlap fractions", overlap_fractions);
    report(3, "occupancy arithmetic", occupancy_arithmetic);
    report(4, "oracle equivalence", oracle_equivalence);
    report(5, "cost-model transaction cross-check", cost_model_cross_check);
    report(6, "DP fusion equals exhaustive partitions", dp_correctness);
    report(7, "warp-only synchronization", synchronization_property);
    report(8, "lane math exhaustive", lane_math);
    report(9, "hybrid degeneracy", hybrid_degeneracy);
    std::printf("%s: %d of 9 criteria failed\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
