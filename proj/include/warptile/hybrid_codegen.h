#pragma once

// Kernel generation for a fused group: overlapped warp tiles, optionally split
// along one dimension into a shared-memory part and a register part that
// communicates through warp shuffles.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "warptile/dependence.h"
#include "warptile/kernel_ir.h"
#include "warptile/otpw.h"
#include "warptile/pipeline.h"

namespace warptile {

/// One point of the per-group search space.
struct KernelConfig {
    Dim3 tile{1, 1, 1};
    Dim3 block{32, 1, 1};
    /// Fraction of the split-dimension tile kept in registers, in tenths (0..10).
    int frac_reg_tenths = 0;
    int64_t tx_size = 128;

    double frac_reg() const { return frac_reg_tenths / 10.0; }
};

/// Lowest dimension with T_i > 1 and W_i > 1.
std::optional<int> select_split_dimension(const Dim3 &tile, const Dim3 &warp);

struct HybridPlan {
    std::optional<int> split_dim;
    int frac_reg_tenths = 0;
    /// Shared-tile and register-tile iterations per dimension.
    Dim3 shared_iters{1, 1, 1};
    Dim3 reg_iters{1, 1, 1};

    /// Register iterations along the split dimension; 0 means shared-only.
    int64_t register_count() const { return split_dim ? reg_iters[*split_dim] : 0; }
    bool hybrid() const { return register_count() > 0; }
};

/// R = floor(T * tenths / 10) on the split dimension, S = T - R.
HybridPlan make_hybrid_plan(const Dim3 &tile, const Dim3 &warp, int frac_reg_tenths);

/// Per-member tiling quantities, all in slot units relative to X0 - left.
struct MemberLayout {
    int stage = -1;
    std::string name;
    ElemKind kind = ElemKind::Float32;
    bool buffered = false;
    bool output = false;
    Dim3 left{};
    Dim3 right{};
    /// T_i W_i + left_i + right_i.
    Dim3 extent{};
    /// Slots computed in the shared/direct phase: on the split dimension
    /// left + S W + right, elsewhere the full extent.
    Dim3 phase_a_extent{};
    Dim3 phase_a_iters{};
    /// Iterations of non-split dimensions in the register phase (1 on the split dimension).
    Dim3 phase_b_iters{1, 1, 1};
    /// Elements of this member's shared slice per warp (0 when unbuffered).
    int64_t shared_per_warp = 0;
    /// Named registers per lane holding this member's register tile.
    int64_t registers = 0;
};

struct GroupLayout {
    GroupGeometry geom;
    KernelConfig config;
    Dim3 block{};  // padded
    Dim3 warp{};
    Dim3 warps_per_block{};
    int64_t warps_in_block = 0;
    int64_t warp_size = 32;
    HybridPlan plan;
    std::vector<MemberLayout> members;
    /// Bounding box per dimension (dimensions past the group's rank are [0,0]).
    std::array<Interval, 3> box{};
    Dim3 warp_tiles{};
    Dim3 grid{};

    int64_t total_blocks() const { return grid[0] * grid[1] * grid[2]; }
    int64_t tile_volume() const;
};

/// Throws ValidationError when W_i does not divide the padded B_i or the config is malformed.
GroupLayout make_layout(const PipelineGraph &g, const GroupGeometry &geom, const KernelConfig &cfg,
                        int64_t warp_size);

enum class LoadType { OwnRegister = 1, SharedMemory = 2, CurrTileShuffle = 3, PrevTileShuffle = 4 };

struct LoadClassification {
    LoadType type = LoadType::OwnRegister;
    /// Register iteration along the split dimension holding the value (meaningless for shared loads).
    int64_t reg_index = 0;
    /// Source lanes, linearized x-fastest; both equal the lane actually read.
    int64_t curr_tile_src_lane = 0;
    int64_t prev_tile_src_lane = 0;
    /// Iteration shift of each non-split dimension (0 or 1 past floor(shift/W)).
    Dim3 other_iter_shift{};
};

/// Classifies a producer load issued at register iteration `reg_iter` by lane `lane`.
/// `diff` on the split dimension is phi - phi_r (<= 0); on the other dimensions it is the
/// non-negative slot shift between consumer and producer.
LoadClassification classify_load(int split_dim, const Dim3 &diff, const Dim3 &lane, const Dim3 &warp,
                                 int64_t reg_iter);

/// Statements of the register phase for one member (empty when the plan is shared-only).
ir::Block gen_register_tile(const PipelineGraph &g, const GroupLayout &layout, int member);

/// Full kernel for the group.
ir::Kernel gen_group_kernel(const PipelineGraph &g, const GroupLayout &layout, const std::string &name);
ir::Kernel gen_group_kernel(const PipelineGraph &g, const std::vector<std::string> &group, const KernelConfig &cfg,
                            int64_t warp_size = 32, const std::string &name = "");

/// Buffer name used for a stage's global output.
std::string buffer_name(const std::string &stage);

}  // namespace warptile
