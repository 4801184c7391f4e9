#pragma once

// Lockstep SIMT interpreter for kernel IR. Every warp runs its lanes as one
// vector; divergence only happens through masks, and shuffles under a partial
// mask are rejected.

#include <cstdint>
#include <string>
#include <vector>

#include "warptile/kernel_ir.h"
#include "warptile/pipeline.h"

namespace warptile {

struct SimConfig {
    bool trace = false;
    /// Run the warps of each block in a seeded random order instead of warp-major.
    bool shuffle_warp_order = false;
    uint64_t order_seed = 0;
};

struct MemAccess {
    int64_t block = 0;
    int64_t warp_in_block = 0;
    Dim3 warp_coord{};
    int64_t instr = 0;
    std::string buffer;
    /// Byte addresses of the active lanes (buffer base treated as 0). Filled only when tracing.
    std::vector<int64_t> addresses;
    int64_t seg32 = 0;
    int64_t seg128 = 0;
};

struct MemTrace {
    std::vector<MemAccess> accesses;
    int64_t loads = 0;
    int64_t seg32 = 0;
    int64_t seg128 = 0;
};

struct SimStats {
    int64_t warps = 0;
    int64_t shuffles = 0;
    int64_t sync_warps = 0;
    int64_t sync_blocks = 0;
};

struct SimResult {
    MemTrace trace;
    SimStats stats;
};

/// Runs the kernel over `memory`. Input buffers must exist with the declared
/// shapes; output buffers are created when missing. Throws SimError on faults.
SimResult simulate_kernel(const ir::Kernel &kernel, BufferMap &memory, const SimConfig &cfg = {});

/// Line-oriented trace dump: one line per global load.
std::string format_trace(const MemTrace &trace);

enum class CompareMode { BitExact, Ulp };

struct CompareReport {
    bool match = true;
    int64_t mismatches = 0;
    std::string buffer;
    std::vector<int64_t> first_coord;
    double expected = 0;
    double actual = 0;

    std::string message() const;
};

CompareReport compare_outputs(const Buffer &expected, const Buffer &actual, CompareMode mode = CompareMode::BitExact,
                              int64_t max_ulps = 0, const std::string &name = "");
/// Compares every buffer of `expected` against the same name in `actual`.
CompareReport compare_outputs(const BufferMap &expected, const BufferMap &actual,
                              CompareMode mode = CompareMode::BitExact, int64_t max_ulps = 0);

}  // namespace warptile
