#include "warptile/otpw.h"

#include <algorithm>

#include "warptile/error.h"

namespace warptile {

std::string to_string(const Dim3 &v) {
    return "(" + std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]) + ")";
}

int64_t ceil_div(int64_t a, int64_t b) { return floor_div(a + b - 1, b); }

int64_t floor_div(int64_t a, int64_t b) {
    int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

int64_t floor_mod(int64_t a, int64_t b) { return a - floor_div(a, b) * b; }

Dim3 warp_sizes(const Dim3 &block, int64_t warp_size) {
    for (int64_t b : block)
        if (b < 1) throw ValidationError("block extents must be >= 1");
    Dim3 w;
    w[0] = std::min(block[0], warp_size);
    w[1] = std::min(block[1], warp_size / w[0]);
    w[2] = std::min(block[2], warp_size / (w[0] * w[1]));
    return w;
}

Dim3 pad_block(const Dim3 &block, int64_t warp_size) {
    for (int64_t b : block)
        if (b < 1) throw ValidationError("block extents must be >= 1");
    Dim3 out = block;
    while ((out[0] * out[1] * out[2]) % warp_size != 0) ++out[0];
    return out;
}

Dim3 warp_tile(const Dim3 &tile, const Dim3 &warp) {
    return {tile[0] * warp[0], tile[1] * warp[1], tile[2] * warp[2]};
}

ThreadMapping thread_mapping(const Dim3 &block, const Dim3 &warp, const Dim3 &block_idx, const Dim3 &thread_idx) {
    ThreadMapping m;
    for (int i = 0; i < 3; ++i) {
        if (thread_idx[i] < 0 || thread_idx[i] >= block[i]) throw ValidationError("thread index outside block");
        int64_t g = block_idx[i] * block[i] + thread_idx[i];
        m.warp_id[i] = g / warp[i];
        m.lane_id[i] = g % warp[i];
    }
    return m;
}

int64_t linear_lane(const Dim3 &lane, const Dim3 &warp) { return lane[0] + warp[0] * (lane[1] + warp[1] * lane[2]); }

Dim3 warps_per_block(const Dim3 &block, const Dim3 &warp) {
    return {ceil_div(block[0], warp[0]), ceil_div(block[1], warp[1]), ceil_div(block[2], warp[2])};
}

std::map<std::string, int64_t> scratchpad_sizes(const GroupGeometry &geom, const Dim3 &tile, const Dim3 &warp,
                                                const Dim3 &block) {
    Dim3 wpb = warps_per_block(block, warp);
    std::map<std::string, int64_t> out;
    for (size_t m = 0; m < geom.stages.size(); ++m) {
        int64_t elems = 1;
        for (int d = 0; d < 3; ++d) {
            int64_t o = d < geom.dims ? geom.overlap(static_cast<int>(m), d) : 0;
            elems *= wpb[d] * (tile[d] * warp[d] + o);
        }
        out[geom.names[m]] = elems;
    }
    return out;
}

std::vector<int> otpw_dimension_filter(const Dim3 &tile, const Dim3 &warp) {
    (void)tile;
    std::vector<int> dims;
    for (int d = 0; d < 3; ++d)
        if (warp[d] > 1) dims.push_back(d);
    return dims;
}

}  // namespace warptile
