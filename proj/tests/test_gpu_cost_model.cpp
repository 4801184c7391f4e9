#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "support.h"
#include "warptile/autoscheduler.h"
#include "warptile/error.h"
#include "warptile/gpu_cost_model.h"

using namespace warptile;
using testsupport::config;
using testsupport::fixture;

namespace {

const GpuSpec kGtx = gpu_preset("gtx1080ti");

ProfileTable blur_profile() {
    ProfileTable t;
    t["blurx"] = {12, 1e-9};
    t["blury"] = {12, 1e-9};
    return t;
}

int64_t segment_oracle(const std::vector<int64_t> &addrs, int64_t tx, int64_t bytes) {
    std::set<int64_t> segs;
    for (int64_t a : addrs)
        for (int64_t b = 0; b < bytes; ++b) {
            int64_t byte = a + b;
            segs.insert(byte >= 0 ? byte / tx : -((-byte + tx - 1) / tx));
        }
    return static_cast<int64_t>(segs.size());
}

void check_rel(double got, double want) {
    if (want == 0) {
        CHECK(got == 0);
    } else {
        CHECK(std::fabs(got - want) / std::fabs(want) <= 1e-12);
    }
}

}  // namespace

TEST_CASE("transaction counting for one warp load") {
    std::vector<int64_t> contiguous, stride2;
    for (int64_t l = 0; l < 32; ++l) {
        contiguous.push_back(4 * l);
        stride2.push_back(8 * l);
    }
    CHECK(min_gl_transactions(contiguous, 128, 4) == 1);
    CHECK(min_gl_transactions(contiguous, 32, 4) == 4);
    CHECK(min_gl_transactions(stride2, 32, 4) == 8);
    CHECK(segment_oracle(stride2, 32, 4) == 8);
    CHECK(min_gl_transactions({}, 32, 4) == 0);

    // Misaligned, strided and negative address patterns against the brute-force segment set.
    for (int64_t base : {-12, -4, 0, 4, 60, 100})
        for (int64_t stride : {1, 4, 8, 12, 36, 128, 132})
            for (int64_t tx : {32, 128})
                for (int64_t bytes : {1, 4}) {
                    std::vector<int64_t> a;
                    for (int64_t l = 0; l < 32; l += (stride == 36 ? 3 : 1)) a.push_back(base + stride * l);
                    CHECK(min_gl_transactions(a, tx, bytes) == segment_oracle(a, tx, bytes));
                }
}

TEST_CASE("occupancy arithmetic") {
    Occupancy o = theoretical_occupancy(17 * 1024, 8, 24, kGtx);
    CHECK(o.max_tb_per_sm == 5);
    CHECK(o.sh_mem_occ == 40);
    CHECK(o.reg_occ == 64);
    CHECK(o.occupancy == 0.625);

    Occupancy h = theoretical_occupancy(17 * 1024 / 2, 8, 24, kGtx);
    CHECK(h.max_tb_per_sm == 11);
    CHECK(h.sh_mem_occ == 64);
    CHECK(h.occupancy == 1.0);

    for (int64_t sh : {0, 1000, 8192, 40000})
        for (int64_t warps : {1, 2, 8, 32})
            for (int64_t regs : {0, 16, 64, 255}) {
                double occ = theoretical_occupancy(sh, warps, regs, kGtx).occupancy;
                CHECK(occ >= 0.0);
                CHECK(occ <= 1.0);
            }
}

TEST_CASE("memory and compute time") {
    TimeTerms zero = achieved_occupancy_terms(0, 128, {"blurx", "blury"}, 256, blur_profile(), kGtx);
    CHECK(zero.mem_time == 0);
    CHECK(zero.warp_bw == doctest::Approx(4.32e9).epsilon(0.001));
    check_rel(zero.warp_bw, 484e9 * 32 / (28.0 * 128));
    check_rel(zero.compute_time, 2 * 256e-9);
    TimeTerms some = achieved_occupancy_terms(10, 32, {"blurx"}, 256, blur_profile(), kGtx);
    check_rel(some.mem_time, 320.0 / (484e9 * 32 / (28.0 * 128)));
    CHECK_THROWS_AS(achieved_occupancy_terms(0, 128, {"nope"}, 1, blur_profile(), kGtx), ValidationError);
}

TEST_CASE("resource terms") {
    CHECK(resource_terms(98304, 1, 24, 1.0, kGtx).unallocated_sh_mem == 0);
    CHECK(resource_terms(0, 16, 0, 1.0, kGtx).unused_reg == 1);
    check_rel(resource_terms(17 * 1024, 5, 0, 1.0, kGtx).unallocated_sh_mem, 1.0 - 85.0 / 96.0);
}

TEST_CASE("load imbalance") {
    // 13 blocks per SM with room for 5.
    CHECK(load_imbalance(13 * 28 * 64, 64, 5, kGtx) == 3);
    CHECK(load_imbalance(10 * 28 * 64, 64, 5, kGtx) == 0);
}

TEST_CASE("load imbalance of a 4096x4096x3 blur matches a block count") {
    PipelineGraph g = parse_pipeline(
        "image img(4096, 4096, 3): float32\n"
        "stage blurx(x, y, c) [-1..4096, 0..4095, 0..2] = (img[x-1, y, c] + img[x, y, c] + img[x+1, y, c]) / 3\n"
        "stage blury(x, y, c) [0..4095, 0..4095, 0..2] = (blurx[x-1, y, c] + blurx[x, y, c] + blurx[x+1, y, c]) / 3\n"
        "liveout blury\n");
    KernelConfig cfg = config({8, 1, 1}, {64, 4, 1});
    CostBreakdown b = group_cost(g, {"blurx", "blury"}, cfg, kGtx, weights_preset("gtx1080ti"), blur_profile());
    REQUIRE(b.feasible);

    // Each block covers 2 warps x 256 columns, 4 rows and one channel.
    const int64_t bw = 2 * 8 * 32, bh = 4;
    int64_t blocks = 0;
    for (int64_t bz = 0; bz < 3; ++bz)
        for (int64_t by = 0; by * bh < 4096; ++by)
            for (int64_t bx = 0; bx * bw < 4096; ++bx) ++blocks;
    CHECK(blocks == 24576);
    CHECK(b.total_blocks == blocks);
    int64_t per_sm = (blocks + 27) / 28;
    CHECK(b.max_tb_per_sm == 11);
    CHECK(b.extra_tbs == per_sm % 11);
}

TEST_CASE("blur cost recomputed line by line") {
    PipelineGraph g = fixture("blur_x");
    const CostWeights w = weights_preset("gtx1080ti");
    for (int64_t tx : {32, 128}) {
        CAPTURE(tx);
        CostBreakdown b = group_cost(g, {"blurx", "blury"}, config({8, 1, 1}, {64, 4, 1}, 0, tx), kGtx, w,
                                     blur_profile());
        REQUIRE(b.feasible);

        // blurx keeps 8*32 + 2 columns per warp; 8 warps per block; float32.
        const double sh = 4.0 * (8 * 32 + 2) * 8;
        const double regs = 24;
        const double max_tb = std::min(std::floor(98304 / sh), 16.0);
        const double sh_occ = std::min(max_tb * 8, 64.0);
        const double reg_occ = std::floor(std::min(std::floor(65536 / regs), 2048.0) / 32);
        const double occ = std::min(sh_occ, reg_occ) / 64;

        // blurx reads img at x-1, x, x+1 for slots x = -1 .. 256, 32 consecutive slots per load.
        double txs = 0;
        for (int64_t chunk = 0; chunk * 32 < 258; ++chunk)
            for (int64_t off : {-1, 0, 1}) {
                std::set<int64_t> segs;
                for (int64_t l = 0; l < 32 && chunk * 32 + l < 258; ++l) {
                    int64_t x = -1 + chunk * 32 + l + off;
                    segs.insert(static_cast<int64_t>(std::floor(4.0 * x / tx)));
                }
                txs += static_cast<double>(segs.size());
            }
        const double warp_bw = 484e9 * 32 / (28.0 * 128);
        const double mem = tx * txs / warp_bw;
        const double compute = 2 * 1e-9 * (8 * 32);
        const double unalloc = 1 - sh * max_tb / 98304;
        const double unused = 1 - regs * 64 * 32 * occ / 65536;
        const double overlap = 2.0 / 258;
        const double blocks = 1 * 2;
        const double extra = std::fmod(std::ceil(blocks / 28), max_tb);
        const double cost = 50 * txs + 0.5 * (1 - occ) + 45 * (mem / compute) + 20 * unalloc + 2 * unused +
                            100 * overlap + 1 * extra;

        check_rel(static_cast<double>(b.sh_mem_per_tb), sh);
        check_rel(static_cast<double>(b.reg_per_th), regs);
        check_rel(static_cast<double>(b.max_tb_per_sm), max_tb);
        check_rel(b.occupancy, occ);
        check_rel(static_cast<double>(b.total_gl_mem_txs), txs);
        check_rel(b.mem_time, mem);
        check_rel(b.compute_time, compute);
        check_rel(b.unallocated_sh_mem, unalloc);
        check_rel(b.unused_reg, unused);
        check_rel(b.frac_overlap.value(), overlap);
        check_rel(static_cast<double>(b.extra_tbs), extra);
        check_rel(b.cost, cost);
        check_rel(weighted_cost(b, w), cost);
    }
}

TEST_CASE("shared-only T=16 blur runs at 62.5 percent occupancy, half in registers at full occupancy") {
    PipelineGraph g = fixture("blur_x");
    const CostWeights w = weights_preset("gtx1080ti");
    CostBreakdown s = group_cost(g, {"blurx", "blury"}, config({16, 1, 1}, {64, 4, 1}, 0), kGtx, w, blur_profile());
    REQUIRE(s.feasible);
    CHECK(s.sh_mem_per_tb == 16448);
    CHECK(s.warps_per_tb == 8);
    CHECK(s.reg_per_th == 24);
    CHECK(s.occupancy == 0.625);
    CHECK(std::isfinite(s.cost));
    CHECK(s.frac_overlap == Rational{2, 514});

    CostBreakdown h = group_cost(g, {"blurx", "blury"}, config({16, 1, 1}, {64, 4, 1}, 5), kGtx, w, blur_profile());
    REQUIRE(h.feasible);
    CHECK(h.sh_mem_per_tb == 8256);
    CHECK(h.reg_tile == 8);
    CHECK(h.occupancy == 1.0);
}

TEST_CASE("hard limits make the cost infinite") {
    PipelineGraph g = fixture("blur_x");
    const CostWeights w = weights_preset("gtx1080ti");
    KernelConfig cfg = config({16, 1, 1}, {64, 4, 1});
    CostBreakdown ok = group_cost(g, {"blurx", "blury"}, cfg, kGtx, w, blur_profile());
    REQUIRE(ok.feasible);

    GpuSpec tight = kGtx;
    tight.max_sh_mem_per_tb = ok.sh_mem_per_tb;
    CHECK(group_cost(g, {"blurx", "blury"}, cfg, tight, w, blur_profile()).feasible);
    tight.max_sh_mem_per_tb = ok.sh_mem_per_tb - 1;
    CostBreakdown over = group_cost(g, {"blurx", "blury"}, cfg, tight, w, blur_profile());
    CHECK_FALSE(over.feasible);
    CHECK(over.infeasible_reason == "MaxShMemPerTb");
    CHECK(std::isinf(over.cost));
    CHECK(format_breakdown(over).rfind("INFEASIBLE(MaxShMemPerTb)", 0) == 0);

    ProfileTable heavy = blur_profile();
    heavy["blurx"].reg_usage = 128;
    heavy["blury"].reg_usage = 129;
    CostBreakdown regs = group_cost(g, {"blurx", "blury"}, cfg, kGtx, w, heavy);
    CHECK(regs.infeasible_reason == "MaxRegPerTh");
    CHECK(std::isinf(regs.cost));
    heavy["blury"].reg_usage = 128;
    CHECK(group_cost(g, {"blurx", "blury"}, cfg, kGtx, w, heavy).feasible);

    Stage sa{"a", {"x"}, {{0, 63}}, make_load("img", true, {{1, 0}}), ElemKind::Float32};
    Stage sb{"b", {"x"}, {{0, 31}}, make_load("a", false, {{2, 0}}), ElemKind::Float32};
    PipelineGraph strided = PipelineGraph::create({{"img", {64}, ElemKind::Float32}}, {sa, sb}, {"b"});
    ProfileTable p{{"a", {}}, {"b", {}}};
    CostBreakdown nc = group_cost(strided, {"a", "b"}, config({1, 1, 1}, {32, 1, 1}), kGtx, w, p);
    CHECK(nc.infeasible_reason == "NonConstantDependence");
    CHECK(std::isinf(nc.cost));

    PipelineGraph outside = parse_pipeline("image img(64): float32\nstage p(x) [0..63] = img[x]\n"
                                           "stage q(x) [0..63] = p[x-1] + p[x+1]\nliveout q\n");
    ProfileTable pq{{"p", {}}, {"q", {}}};
    CHECK(group_cost(outside, {"p", "q"}, config({1, 1, 1}, {32, 1, 1}), kGtx, w, pq).infeasible_reason ==
          "ReadOutsideProducer");
    CHECK(group_cost(outside, {"q"}, config({1, 1, 1}, {32, 1, 1}), kGtx, w, pq).feasible);

    CHECK(group_cost(g, {"blurx", "blury"}, config({1, 1, 1}, {48, 2, 1}), kGtx, w, blur_profile())
              .infeasible_reason == "InvalidConfig");
}

TEST_CASE("cost is monotone in transactions and occupancy") {
    const CostWeights w = weights_preset("teslav100");
    CostBreakdown b;
    b.total_gl_mem_txs = 10;
    b.occupancy = 0.5;
    b.mem_time = 1e-6;
    b.compute_time = 2e-6;
    b.frac_overlap = {1, 10};
    double base = weighted_cost(b, w);
    b.total_gl_mem_txs = 11;
    CHECK(weighted_cost(b, w) >= base);
    b.total_gl_mem_txs = 10;
    b.occupancy = 0.75;
    CHECK(weighted_cost(b, w) <= base);
}

TEST_CASE("transaction estimates: external loads only, strided loads, and transaction size dominance") {
    const CostWeights w = weights_preset("gtx1080ti");
    PipelineGraph none = parse_pipeline("image img(64): float32\nstage c(x) [0..63] = 1.5\n"
                                        "stage d(x) [0..63] = c[x] * 2\nliveout d\n");
    GroupGeometry gn = group_geometry(none, std::vector<std::string>{"c", "d"});
    CHECK(global_mem_transactions(none, make_layout(none, gn, config({2, 1, 1}, {32, 1, 1}), 32), 32) == 0);

    PipelineGraph strided = parse_pipeline("image img(8192): float32\nstage s(x) [0..127] = img[32*x]\nliveout s\n");
    GroupGeometry gs = group_geometry(strided, std::vector<std::string>{"s"});
    for (int64_t t : {1, 2, 4}) {
        GroupLayout L = make_layout(strided, gs, config({t, 1, 1}, {32, 1, 1}), 32);
        CHECK(global_mem_transactions(strided, L, 32) == 32 * t);
    }

    for (const char *name : {"blur", "blur_x", "chain4", "harris", "volume3d"}) {
        PipelineGraph g = fixture(name);
        GroupGeometry geom = group_geometry(g, testsupport::stage_names(g));
        for (Dim3 t : {Dim3{1, 1, 1}, Dim3{4, 2, 1}})
            for (int f : {0, 5}) {
                GroupLayout L = make_layout(g, geom, config(t, {64, 4, 1}, f), 32);
                int64_t t128 = global_mem_transactions(g, L, 128), t32 = global_mem_transactions(g, L, 32);
                CAPTURE(name);
                CHECK(t128 <= t32);
                CHECK(t32 <= 4 * t128);
            }
    }
}

TEST_CASE("presets carry the GTX 1080Ti and Tesla V100 figures and weights") {
    GpuSpec v = gpu_preset("teslav100");
    CHECK(kGtx.nsms == 28);
    CHECK(kGtx.cores_per_sm == 128);
    CHECK(kGtx.gl_mem_bw == 484e9);
    CHECK(kGtx.max_sh_mem_per_tb == 48 * 1024);
    CHECK(kGtx.max_tb_per_sm == 16);
    CHECK(v.nsms == 80);
    CHECK(v.cores_per_sm == 64);
    CHECK(v.gl_mem_bw == 898e9);
    CHECK(v.max_sh_mem_per_tb == 96 * 1024);
    CHECK(v.max_tb_per_sm == 32);
    for (const GpuSpec *s : std::vector<const GpuSpec *>{&kGtx, &v}) {
        CHECK(s->sh_mem_per_sm == 96 * 1024);
        CHECK(s->max_warp_per_sm == 64);
        CHECK(s->reg_per_sm == 65536);
        CHECK(s->max_reg_per_th == 256);
        CHECK(s->warp_size == 32);
        CHECK(s->max_th_per_sm == 2048);
    }
    CHECK(weights_preset("gtx1080ti").w == std::array<double, 7>{50, 0.5, 45, 20, 2, 100, 1});
    CHECK(weights_preset("teslav100").w == std::array<double, 7>{50, 0.5, 60, 10, 2, 100, 1});

    for (const auto &name : gpu_preset_names()) {
        GpuSpec file = load_gpu_spec(testsupport::data_path("gpus/" + name + ".json"));
        CHECK(gpu_to_json(file) == gpu_to_json(gpu_preset(name)));
        CHECK(gpu_to_json(gpu_from_json(gpu_to_json(file))) == gpu_to_json(file));
        CostWeights wf = load_weights(testsupport::data_path("weights/" + name + ".json"));
        CHECK(wf.w == weights_preset(name).w);
    }
    CHECK_THROWS_WITH_AS(load_gpu_spec("/nonexistent/gpu.json"), doctest::Contains("gpu spec not found"),
                         ValidationError);
    CHECK_THROWS_AS(gpu_preset("nope"), ValidationError);
    CHECK_THROWS_AS(gpu_from_json("{\"NSMs\": 0}"), ValidationError);
    CHECK_THROWS_AS(weights_from_json("{\"w\": [1, 2]}"), ValidationError);
    CHECK_THROWS_AS(weights_from_json("{\"w\": [1, 2, 3, 4, 5, 6, -1]}"), ValidationError);
}
