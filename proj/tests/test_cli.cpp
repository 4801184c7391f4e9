#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "support.h"
#include "warptile/autoscheduler.h"
#include "warptile/cli.h"
#include "warptile/dependence.h"
#include "warptile/hybrid_codegen.h"
#include "warptile/kernel_ir.h"
#include "warptile/otpw.h"

using namespace warptile;
using testsupport::data_path;
using testsupport::read_file;
namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = 0;
    std::string out;
    std::string err;
};

CliRun cli(const std::vector<std::string> &args) {
    std::ostringstream out, err;
    CliRun r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string pipe(const std::string &name) { return data_path("pipelines/" + name + ".pipe"); }

fs::path fresh_dir(const std::string &name) {
    fs::path p = fs::temp_directory_path() / ("warptile_cli_test_" + name);
    fs::remove_all(p);
    return p;
}

std::vector<fs::path> files_with_suffix(const fs::path &dir, const std::string &suffix) {
    std::vector<fs::path> out;
    for (const auto &e : fs::directory_iterator(dir)) {
        std::string n = e.path().filename().string();
        if (n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0)
            out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

int64_t count_of(const std::string &text, const std::string &needle) {
    int64_t n = 0;
    for (size_t p = text.find(needle); p != std::string::npos; p = text.find(needle, p + 1)) ++n;
    return n;
}

// Adds 1 to every value written to global memory.
void corrupt_stores(nlohmann::json &node) {
    if (node.is_object()) {
        if (node.value("s", "") == "store_global") {
            nlohmann::json one = {{"k", "float"}, {"v", 1.0}};
            node["value"] = {{"k", "binary"}, {"op", "add"}, {"type", "f32"}, {"lhs", node["value"]}, {"rhs", one}};
            return;
        }
        for (auto &[key, child] : node.items()) corrupt_stores(child);
    } else if (node.is_array()) {
        for (auto &child : node) corrupt_stores(child);
    }
}

const std::vector<std::string> kBlurConfig = {"--tile", "8,1,1", "--block", "64,4,1"};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string> &b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

TEST_CASE("schedule on blur with the 1080Ti preset yields one fused group") {
    fs::path dir = fresh_dir("schedule_blur");
    CliRun r = cli({"schedule", "--pipeline", pipe("blur"), "--gpu", "gtx1080ti", "--out", dir.string()});
    REQUIRE(r.code == kExitOk);
    ScheduleConfig s = schedule_from_json(read_file((dir / "schedule.json").string()));
    REQUIRE(s.groups.size() == 1);
    CHECK(s.groups[0].stages.size() == 2);
    CHECK(s.feasible);
    CHECK(std::isfinite(s.total_cost));

    // Same search through the library.
    PipelineGraph g = testsupport::fixture("blur");
    GpuSpec gpu = gpu_preset("gtx1080ti");
    SearchSpace space = bound_search(SearchSpace::defaults(2, gpu), 128);
    ScheduleConfig direct = dp_fuse(g, space, gpu, weights_preset("gtx1080ti"), load_profile("", g).table);
    CHECK(partition_key(g, s) == partition_key(g, direct));
    CHECK(s.total_cost == doctest::Approx(direct.total_cost).epsilon(1e-12));
    CHECK(s.groups[0].config.tile == direct.groups[0].config.tile);
    CHECK(s.groups[0].config.block == direct.groups[0].config.block);
}

TEST_CASE("missing gpu spec file is a usage error") {
    CliRun r = cli({"schedule", "--pipeline", pipe("blur"), "--gpu", "/nonexistent/gpu.json"});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("gpu spec not found") != std::string::npos);
}

TEST_CASE("missing pipeline and unknown flags are usage errors") {
    CHECK(cli({"schedule", "--gpu", "gtx1080ti"}).code == kExitUsage);
    CHECK(cli({"schedule", "--pipeline", "/nonexistent.pipe"}).code == kExitUsage);
    CHECK(cli({"compile", "--bogus"}).code == kExitUsage);
    CHECK(cli({}).code == kExitUsage);
    CHECK(cli(concat({"cost", "--pipeline", pipe("blur"), "--tx-size", "64"}, kBlurConfig)).code == kExitUsage);
    CHECK(cli({"cost", "--pipeline", pipe("blur"), "--frac-reg", "0.55"}).code == kExitUsage);
}

TEST_CASE("budget of one flags the report as a bounded search") {
    fs::path dir = fresh_dir("bounded");
    CliRun r = cli({"schedule", "--pipeline", pipe("blur"), "--budget", "1", "--out", dir.string()});
    REQUIRE(r.code == kExitOk);
    CHECK(r.out.find("bounded search") != std::string::npos);
    ScheduleConfig s = schedule_from_json(read_file((dir / "schedule.json").string()));
    CHECK(s.bounded);
    CHECK(s.budget == 1);

    SearchSpace full = SearchSpace::defaults(2, gpu_preset("gtx1080ti"));
    CHECK(bound_search(full, full.grid_size()).grid_size() == full.grid_size());
}

TEST_CASE("compile blur emits one kernel with warp barriers only") {
    fs::path dir = fresh_dir("compile_blur");
    CliRun r = cli(concat({"compile", "--pipeline", pipe("blur"), "--frac-reg", "0.5", "--out", dir.string()},
                          kBlurConfig));
    REQUIRE(r.code == kExitOk);
    auto cu = files_with_suffix(dir, ".cu");
    REQUIRE(cu.size() == 1);
    CHECK(files_with_suffix(dir, ".ir.json").size() == 1);
    std::string text = read_file(cu[0].string());
    CHECK(count_of(text, "__syncwarp") >= 1);
    CHECK(count_of(text, "__syncthreads") == 0);

    fs::path again = fresh_dir("compile_blur_again");
    cli(concat({"compile", "--pipeline", pipe("blur"), "--frac-reg", "0.5", "--out", again.string()}, kBlurConfig));
    CHECK(read_file(files_with_suffix(again, ".cu")[0].string()) == text);
    CHECK(read_file(files_with_suffix(again, ".ir.json")[0].string()) ==
          read_file(files_with_suffix(dir, ".ir.json")[0].string()));
}

TEST_CASE("compile at fracReg 0 matches the shared-only golden") {
    // The golden is rendered from the layout with the split removed.
    PipelineGraph g = testsupport::fixture("blur");
    std::vector<std::string> group{"blurx", "blury"};
    GroupLayout L = make_layout(g, group_geometry(g, group), testsupport::config({8, 1, 1}, {64, 4, 1}, 0), 32);
    L.plan.split_dim.reset();
    L.plan.reg_iters = L.config.tile;
    L.plan.shared_iters = L.config.tile;
    std::string shared_only = ir::render_cuda(gen_group_kernel(g, L, "k0_blurx_blury"));
    std::string path = testsupport::golden_path("blur_t8_b64x4_f0.cu");
    if (std::getenv("WARPTILE_UPDATE_GOLDEN")) std::ofstream(path, std::ios::binary) << shared_only;
    REQUIRE(read_file(path) == shared_only);

    fs::path dir = fresh_dir("compile_f0");
    REQUIRE(cli(concat({"compile", "--pipeline", pipe("blur"), "--frac-reg", "0", "--out", dir.string()},
                       kBlurConfig))
                .code == kExitOk);
    CHECK(read_file((dir / "k0_blurx_blury.cu").string()) == read_file(path));
}

TEST_CASE("a two-group schedule for the 4-stage chain emits two kernels") {
    ScheduleConfig s;
    s.groups.push_back({{"c1", "c2"}, testsupport::config({2, 1, 1}, {32, 1, 1}, 5), {}});
    s.groups.push_back({{"c3", "c4"}, testsupport::config({4, 1, 1}, {64, 4, 1}, 0), {}});
    fs::path dir = fresh_dir("chain4");
    fs::create_directories(dir);
    fs::path sched = dir / "two_groups.json";
    std::ofstream(sched) << schedule_to_json(s);
    fs::path out = dir / "kernels";
    CliRun r = cli({"compile", "--pipeline", pipe("chain4"), "--schedule", sched.string(), "--out", out.string()});
    REQUIRE(r.code == kExitOk);
    auto cu = files_with_suffix(out, ".cu");
    REQUIRE(cu.size() == 2);
    CHECK(cu[0].filename() == "k0_c1_c2.cu");
    CHECK(cu[1].filename() == "k1_c3_c4.cu");

    CliRun sim = cli({"simulate", "--pipeline", pipe("chain4"), "--schedule", sched.string(), "--seed", "3"});
    CHECK(sim.code == kExitOk);
    CHECK(sim.out.find("PASS") != std::string::npos);

    ScheduleConfig partial;
    partial.groups.push_back(s.groups[0]);
    fs::path bad = dir / "partial.json";
    std::ofstream(bad) << schedule_to_json(partial);
    CliRun rej = cli({"compile", "--pipeline", pipe("chain4"), "--schedule", bad.string(), "--out", out.string()});
    CHECK(rej.code == kExitUsage);
    CHECK(rej.err.find("does not cover") != std::string::npos);
}

TEST_CASE("compile rejects infeasible groups") {
    fs::path dir = fresh_dir("infeasible");
    CliRun r = cli({"compile", "--pipeline", pipe("blur"), "--tile", "64,1,1", "--block", "256,4,1", "--out",
                    dir.string()});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("INFEASIBLE(MaxShMemPerTb)") != std::string::npos);
    CHECK_FALSE(fs::exists(dir));

    fs::create_directories(dir);
    fs::path outside = dir / "outside.pipe";
    std::ofstream(outside) << "image img(64): float32\nstage p(x) [0..63] = img[x]\n"
                              "stage q(x) [0..63] = p[x-1] + p[x+1]\nliveout q\n";
    CliRun oob = cli({"compile", "--pipeline", outside.string(), "--out", (dir / "k").string()});
    CHECK(oob.code == kExitUsage);
    CHECK(oob.err.find("INFEASIBLE(ReadOutsideProducer)") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "k"));
}

TEST_CASE("simulate blur on the seeded 64x8 input passes") {
    fs::path dir = fresh_dir("simulate_blur");
    CliRun r = cli(concat({"simulate", "--pipeline", pipe("blur"), "--frac-reg", "0.5", "--seed", "11", "--out",
                           dir.string()},
                          kBlurConfig));
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("PASS: outputs match the reference interpreter bit-exactly") != std::string::npos);
    CHECK(r.out.find("seed 11") != std::string::npos);
    CHECK(r.out.find("syncthreads 0") != std::string::npos);
    std::string summary = read_file((dir / "trace_summary.txt").string());
    CHECK(summary.find("k0_blurx_blury: warps") != std::string::npos);
}

TEST_CASE("simulating a corrupted IR fails with the first differing coordinate") {
    fs::path dir = fresh_dir("corrupt");
    REQUIRE(cli(concat({"compile", "--pipeline", pipe("blur"), "--out", dir.string()}, kBlurConfig)).code ==
            kExitOk);
    fs::path ir_path = dir / "k0_blurx_blury.ir.json";
    CHECK(cli({"simulate", "--pipeline", pipe("blur"), "--ir", ir_path.string()}).code == kExitOk);

    nlohmann::json j = nlohmann::json::parse(read_file(ir_path.string()));
    corrupt_stores(j);
    fs::path bad = dir / "corrupt.ir.json";
    std::ofstream(bad) << j.dump(1);
    CliRun r = cli({"simulate", "--pipeline", pipe("blur"), "--ir", bad.string()});
    CHECK(r.code == kExitMismatch);
    CHECK(r.out.find("FAIL") != std::string::npos);
    CHECK(std::regex_search(r.out, std::regex(R"(\(\d+,\d+\))")));
}

TEST_CASE("the fixture sweep reports an aggregate pass count") {
    fs::path dir = fresh_dir("sweep");
    fs::create_directories(dir);
    for (const char *name : {"blur", "chain3", "pointwise"})
        fs::copy_file(pipe(name), dir / (std::string(name) + ".pipe"));
    CliRun r = cli({"simulate", "--sweep", dir.string(), "--tile", "2,2,1", "--block", "64,4,1"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("sweep: 33/33 passed") != std::string::npos);
    CHECK(r.out.find("chain3.pipe: 11/11 passed") != std::string::npos);
}

TEST_CASE("cost prints the breakdown and the blur occupancies") {
    std::vector<std::string> base = {"cost",    "--pipeline", pipe("blur_x"), "--gpu",   "gtx1080ti",
                                     "--profile", data_path("profiles/blur.profile"), "--tile", "16,1,1",
                                     "--block",   "64,4,1"};
    CliRun shared = cli(base);
    REQUIRE(shared.code == kExitOk);
    for (const char *field : {"totalGLMemTxs", "occupancy", "memTime", "computeTime", "unallocatedShMem",
                              "unusedReg", "fracOverlap", "extraTBs", "cost"})
        CHECK(shared.out.find(field) != std::string::npos);
    CHECK(std::regex_search(shared.out, std::regex(R"(occupancy +0\.625\n)")));

    CliRun hybrid = cli(concat(base, {"--frac-reg", "0.5"}));
    REQUIRE(hybrid.code == kExitOk);
    CHECK(std::regex_search(hybrid.out, std::regex(R"(occupancy +1\n)")));

    CliRun over = cli({"cost", "--pipeline", pipe("blur_x"), "--tile", "64,1,1", "--block", "256,4,1"});
    CHECK(over.code == kExitOk);
    CHECK(over.out.find("INFEASIBLE(MaxShMemPerTb)") != std::string::npos);
}

TEST_CASE("the preset environment variable selects the gpu") {
    setenv("WARPTILE_GPU_PRESET", "teslav100", 1);
    CliRun v100 = cli(concat({"cost", "--pipeline", pipe("blur")}, kBlurConfig));
    unsetenv("WARPTILE_GPU_PRESET");
    CliRun def = cli(concat({"cost", "--pipeline", pipe("blur")}, kBlurConfig));
    REQUIRE(v100.code == kExitOk);
    REQUIRE(def.code == kExitOk);
    CHECK(v100.out != def.out);
    CHECK(def.out == cli(concat({"cost", "--pipeline", pipe("blur"), "--gpu", "gtx1080ti"}, kBlurConfig)).out);
    CHECK(def.out == cli(concat({"cost", "--pipeline", pipe("blur"), "--gpu", data_path("gpus/gtx1080ti.json"),
                                 "--weights", data_path("weights/gtx1080ti.json")},
                                kBlurConfig))
                         .out);
}

TEST_CASE("schedule, compile and simulate compose on every fixture") {
    for (const char *name : {"blur", "blur_x", "blur_x_interior", "chain3", "chain4", "diamond", "harris",
                             "pointwise", "volume3d"}) {
        CAPTURE(name);
        fs::path dir = fresh_dir(std::string("e2e_") + name);
        CliRun s = cli({"schedule", "--pipeline", pipe(name), "--budget", "8", "--out", dir.string()});
        REQUIRE(s.code == kExitOk);
        std::string sched = (dir / "schedule.json").string();
        CliRun c = cli({"compile", "--pipeline", pipe(name), "--schedule", sched, "--out", dir.string()});
        REQUIRE(c.code == kExitOk);
        std::vector<std::string> args = {"simulate", "--pipeline", pipe(name), "--seed", "5"};
        for (const auto &p : files_with_suffix(dir, ".ir.json")) {
            args.push_back("--ir");
            args.push_back(p.string());
        }
        CliRun sim = cli(args);
        CHECK(sim.code == kExitOk);
        CliRun direct = cli({"simulate", "--pipeline", pipe(name), "--schedule", sched, "--seed", "5"});
        CHECK(direct.code == kExitOk);
        CHECK(direct.out == sim.out);

        fs::path dir2 = fresh_dir(std::string("e2e2_") + name);
        cli({"schedule", "--pipeline", pipe(name), "--budget", "8", "--out", dir2.string()});
        ScheduleConfig a = schedule_from_json(read_file(sched)), b = schedule_from_json(read_file((dir2 / "schedule.json").string()));
        a.search_seconds = b.search_seconds = 0;
        CHECK(schedule_to_json(a) == schedule_to_json(b));
    }
}
