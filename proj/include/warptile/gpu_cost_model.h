#pragma once

// Analytic cost of one fused group under one kernel configuration.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "warptile/hybrid_codegen.h"
#include "warptile/pipeline.h"

namespace warptile {

struct GpuSpec {
    std::string name;
    int64_t nsms = 0;
    int64_t cores_per_sm = 0;
    /// Bytes per second.
    double gl_mem_bw = 0;
    int64_t max_sh_mem_per_tb = 0;
    int64_t sh_mem_per_sm = 0;
    int64_t max_warp_per_sm = 0;
    int64_t max_tb_per_sm = 0;
    int64_t reg_per_sm = 0;
    int64_t max_reg_per_th = 0;
    int64_t max_th_per_sm = 0;
    int64_t warp_size = 32;
    std::vector<int64_t> tx_sizes{32, 128};

    /// Throws ValidationError on non-positive fields or unsupported transaction sizes.
    void validate() const;
};

GpuSpec gpu_from_json(const std::string &text);
std::string gpu_to_json(const GpuSpec &gpu);
GpuSpec load_gpu_spec(const std::string &path);
/// Bundled presets: "gtx1080ti", "teslav100".
GpuSpec gpu_preset(const std::string &name);
std::vector<std::string> gpu_preset_names();

struct CostWeights {
    std::string name;
    std::array<double, 7> w{};
};

CostWeights weights_from_json(const std::string &text);
std::string weights_to_json(const CostWeights &w);
CostWeights load_weights(const std::string &path);
/// Weights fitted for a preset GPU (same names as gpu_preset).
CostWeights weights_preset(const std::string &gpu_name);

struct StageProfile {
    int64_t reg_usage = 16;
    double time_per_iter = 1e-9;
};

using ProfileTable = std::map<std::string, StageProfile>;

/// Distinct aligned tx_size-byte segments touched by accesses of access_bytes at the given byte addresses.
int64_t min_gl_transactions(const std::vector<int64_t> &addresses, int64_t tx_size, int64_t access_bytes = 1);

/// Per-warp global transactions for group-external loads. Lane addresses follow the kernel's
/// iteration structure for a warp whose tile origin X0 is `origin` (default all zeros), with
/// unclamped coordinates and a row pitch equal to each buffer's extent.
int64_t global_mem_transactions(const PipelineGraph &g, const GroupLayout &layout, int64_t tx_size,
                                const std::optional<Dim3> &origin = std::nullopt);

struct Occupancy {
    int64_t max_tb_per_sm = 0;
    int64_t sh_mem_occ = 0;
    int64_t max_th_per_sm = 0;
    int64_t reg_occ = 0;
    double occupancy = 0;
};

Occupancy theoretical_occupancy(int64_t sh_mem_per_tb, int64_t warps_per_tb, int64_t reg_per_th, const GpuSpec &gpu);

struct TimeTerms {
    double warp_bw = 0;
    double mem_time = 0;
    double compute_time = 0;
};

/// Throws ValidationError when a member stage has no profile entry.
TimeTerms achieved_occupancy_terms(int64_t total_gl_mem_txs, int64_t tx_size, const std::vector<std::string> &stages,
                                   int64_t tile_volume, const ProfileTable &profiles, const GpuSpec &gpu);

struct ResourceTerms {
    double unallocated_sh_mem = 0;
    double unused_reg = 0;
};

ResourceTerms resource_terms(int64_t sh_mem_per_tb, int64_t max_tb_per_sm, int64_t reg_per_th, double occupancy,
                             const GpuSpec &gpu);

/// tbPerSM = ceil(totalThreads / threadsPerTB / NSMs); returns tbPerSM mod maxTBPerSM.
int64_t load_imbalance(int64_t total_threads, int64_t threads_per_tb, int64_t max_tb_per_sm, const GpuSpec &gpu);

struct CostBreakdown {
    bool feasible = true;
    /// Violated limit when infeasible: MaxShMemPerTb, MaxRegPerTh, NonConstantDependence, ReadOutsideProducer,
    /// InvalidConfig.
    std::string infeasible_reason;
    std::string infeasible_detail;

    int64_t sh_mem_per_tb = 0;
    int64_t reg_tile = 0;
    int64_t reg_per_th = 0;
    int64_t warps_per_tb = 0;
    int64_t threads_per_tb = 0;
    int64_t total_blocks = 0;
    int64_t tile_volume = 0;
    int64_t max_tb_per_sm = 0;

    int64_t total_gl_mem_txs = 0;
    double occupancy = 0;
    double mem_time = 0;
    double compute_time = 0;
    double unallocated_sh_mem = 0;
    double unused_reg = 0;
    Rational frac_overlap{0, 1};
    int64_t extra_tbs = 0;
    /// +infinity when infeasible.
    double cost = 0;
};

/// Stage profiles for every member must be present.
CostBreakdown group_cost(const PipelineGraph &g, const std::vector<std::string> &group, const KernelConfig &cfg,
                         const GpuSpec &gpu, const CostWeights &weights, const ProfileTable &profiles);

/// Same as above for a group whose legality was already checked and whose geometry is known.
CostBreakdown group_cost(const PipelineGraph &g, const GroupGeometry &geom, const KernelConfig &cfg,
                         const GpuSpec &gpu, const CostWeights &weights, const ProfileTable &profiles);

/// Weighted sum of the seven terms (ignores feasibility).
double weighted_cost(const CostBreakdown &b, const CostWeights &w);

std::string format_breakdown(const CostBreakdown &b);

}  // namespace warptile
