#include "warptile/cli.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "warptile/autoscheduler.h"
#include "warptile/error.h"
#include "warptile/gpu_cost_model.h"
#include "warptile/hybrid_codegen.h"
#include "warptile/kernel_ir.h"
#include "warptile/simulator.h"

namespace warptile {

namespace fs = std::filesystem;

namespace {

constexpr int64_t kDefaultBudget = 128;

struct Options {
    std::string pipeline;
    std::string gpu;
    std::string weights;
    std::string profile;
    std::string schedule;
    std::string tile = "1,1,1";
    std::string block = "32,1,1";
    std::string group;
    double frac_reg = 0.0;
    int64_t tx_size = 128;
    int64_t budget = kDefaultBudget;
    uint64_t seed = 0;
    std::string out = "warptile_out";
    std::vector<std::string> ir_files;
    std::string sweep;
    bool out_given = false;
};

std::string read_text(const std::string &path, const std::string &what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError(what + " not found: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << text;
}

PipelineGraph load_pipeline(const std::string &path) {
    if (path.empty()) throw ValidationError("--pipeline is required");
    std::string text = read_text(path, "pipeline");
    try {
        return parse_pipeline(text);
    } catch (const ParseError &e) {
        throw ValidationError(path + ":" + std::to_string(e.line()) + ":" + std::to_string(e.column()) + ": " +
                              e.detail());
    }
}

GpuSpec resolve_gpu(const Options &o) {
    if (!o.gpu.empty()) {
        if (fs::exists(o.gpu)) return load_gpu_spec(o.gpu);
        auto names = gpu_preset_names();
        if (std::find(names.begin(), names.end(), o.gpu) != names.end()) return gpu_preset(o.gpu);
        throw ValidationError("gpu spec not found: " + o.gpu);
    }
    if (const char *env = std::getenv("WARPTILE_GPU_PRESET"); env && *env) return gpu_preset(env);
    return gpu_preset("gtx1080ti");
}

CostWeights resolve_weights(const Options &o, const GpuSpec &gpu) {
    if (!o.weights.empty()) return load_weights(o.weights);
    auto names = gpu_preset_names();
    if (std::find(names.begin(), names.end(), gpu.name) == names.end())
        throw ValidationError("--weights is required for gpu '" + gpu.name + "'");
    return weights_preset(gpu.name);
}

ProfileTable resolve_profile(const Options &o, const PipelineGraph &g, std::ostream &err, bool quiet = false) {
    ProfileLoad p;
    if (o.profile.empty()) {
        p = load_profile("", g);
    } else {
        std::string text = read_text(o.profile, "profile");
        try {
            p = load_profile(text, g);
        } catch (const ParseError &e) {
            throw ValidationError(o.profile + ":" + std::to_string(e.line()) + ": " + e.detail());
        }
    }
    if (!quiet)
        for (const auto &w : p.warnings) err << "warning: " << w << "\n";
    return p.table;
}

Dim3 parse_dim3(const std::string &text, const char *flag) {
    Dim3 v{1, 1, 1};
    std::stringstream ss(text);
    std::string item;
    int i = 0;
    while (std::getline(ss, item, ',')) {
        if (i >= 3) throw ValidationError(std::string(flag) + " takes at most three values");
        try {
            size_t used = 0;
            long long x = std::stoll(item, &used);
            if (used != item.size() || x < 1) throw std::invalid_argument(item);
            v[i++] = x;
        } catch (const std::exception &) {
            throw ValidationError(std::string(flag) + ": bad value '" + item + "'");
        }
    }
    if (i == 0) throw ValidationError(std::string(flag) + " needs a value");
    return v;
}

std::vector<std::string> split_names(const std::string &text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

KernelConfig config_from_flags(const Options &o) {
    KernelConfig cfg;
    cfg.tile = parse_dim3(o.tile, "--tile");
    cfg.block = parse_dim3(o.block, "--block");
    if (!(o.frac_reg >= 0 && o.frac_reg <= 1)) throw ValidationError("--frac-reg must be in [0, 1]");
    cfg.frac_reg_tenths = static_cast<int>(std::lround(o.frac_reg * 10));
    if (std::abs(o.frac_reg * 10 - cfg.frac_reg_tenths) > 1e-9)
        throw ValidationError("--frac-reg must be a multiple of 0.1");
    if (o.tx_size != 32 && o.tx_size != 128) throw ValidationError("--tx-size must be 32 or 128");
    cfg.tx_size = o.tx_size;
    return cfg;
}

std::vector<std::string> all_stage_names(const PipelineGraph &g) {
    std::vector<std::string> names;
    for (int s : topo_order_indices(g)) names.push_back(g.stages()[s].name);
    return names;
}

/// Groups with their configurations, from --schedule or from the flags (one group).
std::vector<GroupSchedule> planned_groups(const Options &o, const PipelineGraph &g) {
    if (!o.schedule.empty()) {
        ScheduleConfig s = schedule_from_json(read_text(o.schedule, "schedule"));
        std::vector<std::string> covered;
        for (const auto &grp : s.groups) {
            resolve_group(g, grp.stages);
            covered.insert(covered.end(), grp.stages.begin(), grp.stages.end());
        }
        std::sort(covered.begin(), covered.end());
        if (std::adjacent_find(covered.begin(), covered.end()) != covered.end())
            throw ValidationError("schedule places a stage in two groups");
        if (static_cast<int>(covered.size()) != g.num_stages())
            throw ValidationError("schedule does not cover every stage");
        return s.groups;
    }
    GroupSchedule grp;
    grp.stages = o.group.empty() ? all_stage_names(g) : split_names(o.group);
    grp.config = config_from_flags(o);
    return {grp};
}

std::string kernel_name(size_t i, const std::vector<std::string> &stages) {
    std::string n = "k" + std::to_string(i);
    for (const auto &s : stages) n += "_" + s;
    return n;
}

std::vector<ir::Kernel> build_kernels(const PipelineGraph &g, const std::vector<GroupSchedule> &groups,
                                      int64_t warp_size) {
    std::vector<ir::Kernel> out;
    for (size_t i = 0; i < groups.size(); ++i)
        out.push_back(gen_group_kernel(g, groups[i].stages, groups[i].config, warp_size,
                                       kernel_name(i, groups[i].stages)));
    return out;
}

struct SimOutcome {
    CompareReport report;
    std::vector<std::pair<std::string, SimResult>> runs;
    std::string fault;
};

SimOutcome simulate_all(const PipelineGraph &g, const std::vector<ir::Kernel> &kernels, uint64_t seed) {
    SimOutcome o;
    BufferMap inputs = random_inputs(g, seed);
    BufferMap memory = inputs;
    try {
        for (const auto &k : kernels) o.runs.emplace_back(k.name, simulate_kernel(k, memory));
    } catch (const SimError &e) {
        o.fault = e.what();
        o.report.match = false;
        return o;
    }
    BufferMap expected = reference_eval(g, inputs);
    BufferMap actual;
    for (const auto &name : g.liveouts()) {
        auto it = memory.find(buffer_name(name));
        if (it == memory.end()) {
            o.fault = "no kernel produced liveout '" + name + "'";
            o.report.match = false;
            return o;
        }
        actual[name] = it->second;
    }
    o.report = compare_outputs(expected, actual);
    return o;
}

void print_trace_summary(std::ostream &os, const SimOutcome &o) {
    for (const auto &[name, r] : o.runs)
        os << name << ": warps " << r.stats.warps << ", global loads " << r.trace.loads << ", segments32 "
           << r.trace.seg32 << ", segments128 " << r.trace.seg128 << ", shuffles " << r.stats.shuffles
           << ", syncwarp " << r.stats.sync_warps << ", syncthreads " << r.stats.sync_blocks << "\n";
}

// ------------------------------------------------------------------ commands

int cmd_schedule(const Options &o, std::ostream &out, std::ostream &err) {
    GpuSpec gpu = resolve_gpu(o);
    PipelineGraph g = load_pipeline(o.pipeline);
    CostWeights w = resolve_weights(o, gpu);
    ProfileTable prof = resolve_profile(o, g, err);
    int dims = 1;
    for (const auto &s : g.stages()) dims = std::max(dims, s.dims());
    SearchSpace full = SearchSpace::defaults(dims, gpu);
    SearchSpace space = bound_search(full, o.budget);
    ScheduleConfig s = dp_fuse(g, space, gpu, w, prof);
    s.budget = o.budget;
    s.bounded = space.grid_size() < full.grid_size();
    fs::create_directories(o.out);
    fs::path path = fs::path(o.out) / "schedule.json";
    write_text(path, schedule_to_json(s));
    if (s.bounded)
        out << "bounded search: " << space.grid_size() << " of " << full.grid_size() << " tile/block points\n";
    for (const auto &grp : s.groups) {
        out << "group";
        for (const auto &n : grp.stages) out << " " << n;
        out << ": tile " << to_string(grp.config.tile) << " block " << to_string(grp.config.block) << " fracReg "
            << grp.config.frac_reg() << " txSz " << grp.config.tx_size << " cost " << grp.breakdown.cost << "\n";
    }
    out << "total cost " << s.total_cost << (s.feasible ? "" : " (infeasible)") << "\n";
    out << "wrote " << path.string() << "\n";
    return kExitOk;
}

int cmd_compile(const Options &o, std::ostream &out, std::ostream &err) {
    GpuSpec gpu = resolve_gpu(o);
    PipelineGraph g = load_pipeline(o.pipeline);
    CostWeights w = resolve_weights(o, gpu);
    ProfileTable prof = resolve_profile(o, g, err, true);
    auto groups = planned_groups(o, g);
    for (const auto &grp : groups) {
        CostBreakdown b = group_cost(g, grp.stages, grp.config, gpu, w, prof);
        if (!b.feasible) {
            err << "error: infeasible schedule for group";
            for (const auto &n : grp.stages) err << " " << n;
            err << ": INFEASIBLE(" << b.infeasible_reason << ") " << b.infeasible_detail << "\n";
            return kExitUsage;
        }
    }
    auto kernels = build_kernels(g, groups, gpu.warp_size);
    fs::create_directories(o.out);
    for (const auto &k : kernels) {
        fs::path cu = fs::path(o.out) / (k.name + ".cu");
        fs::path js = fs::path(o.out) / (k.name + ".ir.json");
        write_text(cu, render_cuda(k));
        write_text(js, to_json_text(k));
        out << "wrote " << cu.string() << "\n" << "wrote " << js.string() << "\n";
    }
    return kExitOk;
}

int simulate_sweep(const Options &o, std::ostream &out) {
    std::vector<fs::path> files;
    for (const auto &e : fs::directory_iterator(o.sweep))
        if (e.path().extension() == ".pipe") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ValidationError("no .pipe files in " + o.sweep);
    GpuSpec gpu = resolve_gpu(o);
    int passed = 0, total = 0;
    for (const auto &f : files) {
        PipelineGraph g = load_pipeline(f.string());
        std::vector<int> all = topo_order_indices(g);
        std::vector<std::vector<std::string>> grouping;
        if (fusable_group(g, all)) {
            grouping.push_back(all_stage_names(g));
        } else {
            for (const auto &n : all_stage_names(g)) grouping.push_back({n});
        }
        int ok = 0;
        for (int f10 = 0; f10 <= 10; ++f10) {
            Options oo = o;
            oo.frac_reg = f10 / 10.0;
            std::vector<GroupSchedule> groups;
            for (const auto &names : grouping) groups.push_back({names, config_from_flags(oo), {}});
            SimOutcome r = simulate_all(g, build_kernels(g, groups, gpu.warp_size), o.seed);
            ++total;
            if (r.report.match) {
                ++ok;
                ++passed;
            } else {
                out << f.filename().string() << " fracReg " << oo.frac_reg << ": "
                    << (r.fault.empty() ? r.report.message() : r.fault) << "\n";
            }
        }
        out << f.filename().string() << ": " << ok << "/11 passed\n";
    }
    out << "sweep: " << passed << "/" << total << " passed\n";
    return passed == total ? kExitOk : kExitMismatch;
}

int cmd_simulate(const Options &o, std::ostream &out, std::ostream &) {
    if (!o.sweep.empty()) return simulate_sweep(o, out);
    GpuSpec gpu = resolve_gpu(o);
    PipelineGraph g = load_pipeline(o.pipeline);
    std::vector<ir::Kernel> kernels;
    if (!o.ir_files.empty()) {
        for (const auto &p : o.ir_files) kernels.push_back(ir::from_json_text(read_text(p, "kernel IR")));
    } else {
        kernels = build_kernels(g, planned_groups(o, g), gpu.warp_size);
    }
    SimOutcome r = simulate_all(g, kernels, o.seed);
    std::ostringstream summary;
    summary << "seed " << o.seed << "\n";
    print_trace_summary(summary, r);
    out << summary.str();
    if (o.out_given) {
        fs::create_directories(o.out);
        write_text(fs::path(o.out) / "trace_summary.txt", summary.str());
    }
    if (!r.fault.empty()) {
        out << "FAIL: " << r.fault << "\n";
        return kExitMismatch;
    }
    if (!r.report.match) {
        out << "FAIL: " << r.report.message() << "\n";
        return kExitMismatch;
    }
    out << "PASS: outputs match the reference interpreter bit-exactly\n";
    return kExitOk;
}

int cmd_cost(const Options &o, std::ostream &out, std::ostream &err) {
    GpuSpec gpu = resolve_gpu(o);
    PipelineGraph g = load_pipeline(o.pipeline);
    CostWeights w = resolve_weights(o, gpu);
    ProfileTable prof = resolve_profile(o, g, err);
    std::vector<std::string> group = o.group.empty() ? all_stage_names(g) : split_names(o.group);
    CostBreakdown b = group_cost(g, group, config_from_flags(o), gpu, w, prof);
    out << format_breakdown(b);
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    CLI::App app{"Warp-overlapped tiling compiler for stencil pipelines"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App *c) {
        c->add_option("--pipeline", o.pipeline, "Pipeline description file");
        c->add_option("--gpu", o.gpu, "GPU spec JSON file or preset name (gtx1080ti, teslav100)");
        c->add_option("--weights", o.weights, "Cost weights JSON file");
        c->add_option("--profile", o.profile, "Stage profile file");
        c->add_option("--out", o.out, "Output directory");
    };
    auto config = [&](CLI::App *c) {
        c->add_option("--schedule", o.schedule, "Schedule JSON written by 'schedule'");
        c->add_option("--group", o.group, "Comma-separated stages forming the group (default: all)");
        c->add_option("--tile", o.tile, "Tile sizes x,y,z");
        c->add_option("--block", o.block, "Thread block x,y,z");
        c->add_option("--frac-reg", o.frac_reg, "Fraction of the split dimension kept in registers");
        c->add_option("--tx-size", o.tx_size, "Global transaction size (32 or 128)");
    };

    CLI::App *sched = app.add_subcommand("schedule", "Search fusion and per-group configurations");
    common(sched);
    sched->add_option("--budget", o.budget, "Maximum tile/block points per group");

    CLI::App *comp = app.add_subcommand("compile", "Emit CUDA and kernel IR per group");
    common(comp);
    config(comp);

    CLI::App *sim = app.add_subcommand("simulate", "Run generated kernels and compare with the reference");
    common(sim);
    config(sim);
    sim->add_option("--seed", o.seed, "Seed for the random input images");
    sim->add_option("--ir", o.ir_files, "Kernel IR JSON files to run instead of generating");
    sim->add_option("--sweep", o.sweep, "Directory of pipelines to check at every fracReg");

    CLI::App *cost = app.add_subcommand("cost", "Print the cost breakdown for one group");
    common(cost);
    config(cost);

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp &) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp &) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError &e) {
        err << "error: " << e.what() << "\n" << app.help();
        return kExitUsage;
    }

    o.out_given = app.get_subcommands().front()->count("--out") > 0;
    try {
        if (sched->parsed()) return cmd_schedule(o, out, err);
        if (comp->parsed()) return cmd_compile(o, out, err);
        if (sim->parsed()) return cmd_simulate(o, out, err);
        if (cost->parsed()) return cmd_cost(o, out, err);
    } catch (const SimError &e) {
        err << "error: " << e.what() << "\n";
        return kExitMismatch;
    } catch (const Error &e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const fs::filesystem_error &e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace warptile
