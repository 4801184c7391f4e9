#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "warptile/pipeline.h"

namespace testsupport {

inline std::string data_path(const std::string &rel) { return std::string(WARPTILE_DATA_DIR) + "/" + rel; }
inline std::string golden_path(const std::string &rel) { return std::string(WARPTILE_GOLDEN_DIR) + "/" + rel; }

inline std::string read_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline warptile::PipelineGraph fixture(const std::string &name) {
    return warptile::parse_pipeline(read_file(data_path("pipelines/" + name + ".pipe")));
}

inline std::vector<std::string> stage_names(const warptile::PipelineGraph &g) {
    std::vector<std::string> out;
    for (const auto &s : g.stages()) out.push_back(s.name);
    return out;
}

}  // namespace testsupport

#include "warptile/hybrid_codegen.h"
#include "warptile/simulator.h"

namespace testsupport {

struct GroupRun {
    warptile::CompareReport report;
    warptile::SimResult sim;
    warptile::BufferMap outputs;
};

/// Simulates one kernel for `group` on seeded inputs and compares its outputs with the reference interpreter.
inline GroupRun run_group(const warptile::PipelineGraph &g, const std::vector<std::string> &group,
                          const warptile::KernelConfig &cfg, uint64_t seed = 7,
                          const warptile::SimConfig &sim_cfg = {}) {
    using namespace warptile;
    BufferMap inputs = random_inputs(g, seed);
    BufferMap all = reference_eval(g, inputs, true);
    ir::Kernel k = gen_group_kernel(g, group, cfg);
    BufferMap mem = inputs;
    // Producers outside the group come from the reference.
    for (const auto &b : k.buffers)
        if (!b.output && !mem.count(b.name)) mem[b.name] = all.at(b.name);
    GroupRun run;
    run.sim = simulate_kernel(k, mem, sim_cfg);
    BufferMap expected;
    for (const auto &b : k.buffers)
        if (b.output) {
            expected[b.name] = all.at(b.name);
            run.outputs[b.name] = mem.at(b.name);
        }
    run.report = compare_outputs(expected, run.outputs);
    return run;
}

inline warptile::KernelConfig config(warptile::Dim3 tile, warptile::Dim3 block, int frac_tenths = 0,
                                     int64_t tx = 128) {
    warptile::KernelConfig c;
    c.tile = tile;
    c.block = block;
    c.frac_reg_tenths = frac_tenths;
    c.tx_size = tx;
    return c;
}

}  // namespace testsupport
