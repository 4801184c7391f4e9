#pragma once

// Fusion and per-group configuration search driven by the cost model.

#include <cstdint>
#include <string>
#include <vector>

#include "warptile/gpu_cost_model.h"
#include "warptile/hybrid_codegen.h"
#include "warptile/pipeline.h"

namespace warptile {

struct ProfileLoad {
    ProfileTable table;
    std::vector<std::string> warnings;
};

/// Parses `stage <name> reg=<int> time_per_iter=<float>` lines ('#' comments allowed).
/// Stages of `g` without a record get reg=16, time_per_iter=1e-9 and a warning.
/// Throws ParseError on malformed or duplicate records.
ProfileLoad load_profile(const std::string &text, const PipelineGraph &g);
ProfileLoad load_profile_file(const std::string &path, const PipelineGraph &g);

struct SearchSpace {
    /// Candidate tile sizes per dimension.
    std::array<std::vector<int64_t>, 3> tiles{std::vector<int64_t>{1}, std::vector<int64_t>{1},
                                              std::vector<int64_t>{1}};
    std::vector<Dim3> blocks;
    std::vector<int> frac_reg_tenths;
    std::vector<int64_t> tx_sizes;

    /// Tiles 1..32 on each of the first `dims` dimensions; blocks with power-of-two B_x, B_y,
    /// B_x B_y in [warp_size, 1024]; fracReg 0.0..1.0 in steps of 0.1; transaction sizes of the gpu.
    static SearchSpace defaults(int dims, const GpuSpec &gpu);

    /// Tile-block points (the part bound_search prunes).
    int64_t grid_size() const;
    /// All candidates including fracReg and transaction size.
    int64_t size() const;
    void validate() const;
};

/// Subsamples the tile and block axes with an even stride until grid_size() <= budget.
/// fracReg and transaction-size axes are untouched. budget=1 keeps the median of every axis.
SearchSpace bound_search(const SearchSpace &space, int64_t budget);

struct GroupSchedule {
    /// Member stage names in topological order.
    std::vector<std::string> stages;
    KernelConfig config;
    CostBreakdown breakdown;
};

/// Exhaustive argmin over the space. Ties go to smaller tile volume, smaller block volume,
/// smaller fracReg, larger transaction size, then the lexicographically smaller tile and block.
/// When every candidate is infeasible the result carries infinite cost.
GroupSchedule best_config_for_group(const PipelineGraph &g, const std::vector<std::string> &group,
                                    const SearchSpace &space, const GpuSpec &gpu, const CostWeights &weights,
                                    const ProfileTable &profiles);

/// Candidate ordering used by best_config_for_group: true when `a` should be preferred to `b`.
bool prefer_candidate(const KernelConfig &a, double cost_a, const KernelConfig &b, double cost_b);

/// Groups the DP may form: weakly connected, convex, single rank, and for more than one stage
/// constant dependences with every intra-group read inside its producer's domain.
bool fusable_group(const PipelineGraph &g, const std::vector<int> &group);

struct ScheduleConfig {
    std::vector<GroupSchedule> groups;
    double total_cost = 0;
    bool bounded = false;
    int64_t budget = 0;
    double search_seconds = 0;
    bool feasible = true;
};

/// Canonical key of a partition: member indices of each group sorted, groups sorted.
std::vector<std::vector<int>> partition_key(const PipelineGraph &g, const ScheduleConfig &s);

/// Sum of group costs with groups taken in partition_key order.
double canonical_total(const std::vector<double> &costs_in_key_order);

/// Dynamic programming over sets of already-scheduled stages. Ties on total cost go to the
/// lexicographically smaller partition key. Groups are emitted in a topological order.
ScheduleConfig dp_fuse(const PipelineGraph &g, const SearchSpace &space, const GpuSpec &gpu,
                       const CostWeights &weights, const ProfileTable &profiles);

std::string schedule_to_json(const ScheduleConfig &s);
/// Reads back grouping and configurations (cost fields are informational and restored as written).
ScheduleConfig schedule_from_json(const std::string &text);
std::string breakdown_to_json_text(const CostBreakdown &b);

}  // namespace warptile
