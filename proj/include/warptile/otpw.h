#pragma once

// Overlap-tile-per-warp geometry: warp shape inside a thread block, warp/lane
// coordinates, warp-tile extents and scratchpad sizes.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "warptile/dependence.h"

namespace warptile {

using Dim3 = std::array<int64_t, 3>;

std::string to_string(const Dim3 &v);

/// W_x = min(B_x, ws), W_y = min(B_y, ws / W_x), W_z = min(B_z, ws / (W_x W_y)).
Dim3 warp_sizes(const Dim3 &block, int64_t warp_size);

/// Smallest x-extension of the block whose thread count is a multiple of warp_size.
Dim3 pad_block(const Dim3 &block, int64_t warp_size);

/// Per-dimension T_i * W_i.
Dim3 warp_tile(const Dim3 &tile, const Dim3 &warp);

struct ThreadMapping {
    Dim3 warp_id{};
    Dim3 lane_id{};
};

ThreadMapping thread_mapping(const Dim3 &block, const Dim3 &warp, const Dim3 &block_idx, const Dim3 &thread_idx);

/// Linear lane index with x fastest.
int64_t linear_lane(const Dim3 &lane, const Dim3 &warp);

/// Number of warps per block along each dimension: ceil(B_i / W_i).
Dim3 warps_per_block(const Dim3 &block, const Dim3 &warp);

/// Elements per block for every member's scratchpad: prod_i ceil(B_i/W_i) * (T_i W_i + O_i).
std::map<std::string, int64_t> scratchpad_sizes(const GroupGeometry &geom, const Dim3 &tile, const Dim3 &warp,
                                                const Dim3 &block);

/// Dimensions that are warp-tiled (W_i > 1).
std::vector<int> otpw_dimension_filter(const Dim3 &tile, const Dim3 &warp);

int64_t ceil_div(int64_t a, int64_t b);
int64_t floor_div(int64_t a, int64_t b);
int64_t floor_mod(int64_t a, int64_t b);

}  // namespace warptile
