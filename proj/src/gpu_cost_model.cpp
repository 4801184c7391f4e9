#include "warptile/gpu_cost_model.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "warptile/error.h"

namespace warptile {

using nlohmann::json;

namespace {

const char *kGtx1080Ti = R"({
  "name": "gtx1080ti",
  "NSMs": 28,
  "CoresPerSM": 128,
  "GlMemBW": 484e9,
  "MaxShMemPerTb": 49152,
  "ShMemPerSM": 98304,
  "MaxWarpPerSM": 64,
  "MaxTbPerSM": 16,
  "RegPerSM": 65536,
  "MaxRegPerTh": 256,
  "MaxThPerSM": 2048,
  "WarpSize": 32,
  "GlMemTxSz": [32, 128]
})";

const char *kTeslaV100 = R"({
  "name": "teslav100",
  "NSMs": 80,
  "CoresPerSM": 64,
  "GlMemBW": 898e9,
  "MaxShMemPerTb": 98304,
  "ShMemPerSM": 98304,
  "MaxWarpPerSM": 64,
  "MaxTbPerSM": 32,
  "RegPerSM": 65536,
  "MaxRegPerTh": 256,
  "MaxThPerSM": 2048,
  "WarpSize": 32,
  "GlMemTxSz": [32, 128]
})";

const char *kWeights1080Ti = R"({"name": "gtx1080ti", "w": [50, 0.5, 45, 20, 2, 100, 1]})";
const char *kWeightsV100 = R"({"name": "teslav100", "w": [50, 0.5, 60, 10, 2, 100, 1]})";

std::string read_file(const std::string &path, const std::string &what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError(what + " not found: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json parse_json(const std::string &text, const std::string &what) {
    try {
        return json::parse(text);
    } catch (const json::exception &e) {
        throw ValidationError("malformed " + what + ": " + e.what());
    }
}

template <typename T> T field(const json &j, const char *key, const std::string &what) {
    if (!j.contains(key)) throw ValidationError(what + " is missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception &) {
        throw ValidationError(what + " field '" + key + "' has the wrong type");
    }
}

}  // namespace

void GpuSpec::validate() const {
    auto pos = [&](int64_t v, const char *n) {
        if (v <= 0) throw ValidationError(std::string("gpu spec field ") + n + " must be positive");
    };
    pos(nsms, "NSMs");
    pos(cores_per_sm, "CoresPerSM");
    if (!(gl_mem_bw > 0)) throw ValidationError("gpu spec field GlMemBW must be positive");
    pos(max_sh_mem_per_tb, "MaxShMemPerTb");
    pos(sh_mem_per_sm, "ShMemPerSM");
    pos(max_warp_per_sm, "MaxWarpPerSM");
    pos(max_tb_per_sm, "MaxTbPerSM");
    pos(reg_per_sm, "RegPerSM");
    pos(max_reg_per_th, "MaxRegPerTh");
    pos(max_th_per_sm, "MaxThPerSM");
    pos(warp_size, "WarpSize");
    if (warp_size > 32) throw ValidationError("warp sizes above 32 are not supported");
    if (tx_sizes.empty()) throw ValidationError("gpu spec needs at least one transaction size");
    for (int64_t t : tx_sizes)
        if (t != 32 && t != 128) throw ValidationError("transaction sizes must be 32 or 128");
}

GpuSpec gpu_from_json(const std::string &text) {
    json j = parse_json(text, "gpu spec");
    const std::string w = "gpu spec";
    GpuSpec g;
    g.name = j.value("name", std::string("custom"));
    g.nsms = field<int64_t>(j, "NSMs", w);
    g.cores_per_sm = field<int64_t>(j, "CoresPerSM", w);
    g.gl_mem_bw = field<double>(j, "GlMemBW", w);
    g.max_sh_mem_per_tb = field<int64_t>(j, "MaxShMemPerTb", w);
    g.sh_mem_per_sm = field<int64_t>(j, "ShMemPerSM", w);
    g.max_warp_per_sm = field<int64_t>(j, "MaxWarpPerSM", w);
    g.max_tb_per_sm = field<int64_t>(j, "MaxTbPerSM", w);
    g.reg_per_sm = field<int64_t>(j, "RegPerSM", w);
    g.max_reg_per_th = field<int64_t>(j, "MaxRegPerTh", w);
    g.max_th_per_sm = j.contains("MaxThPerSM") ? field<int64_t>(j, "MaxThPerSM", w) : 2048;
    g.warp_size = field<int64_t>(j, "WarpSize", w);
    g.tx_sizes = field<std::vector<int64_t>>(j, "GlMemTxSz", w);
    g.validate();
    return g;
}

std::string gpu_to_json(const GpuSpec &g) {
    json j;
    j["name"] = g.name;
    j["NSMs"] = g.nsms;
    j["CoresPerSM"] = g.cores_per_sm;
    j["GlMemBW"] = g.gl_mem_bw;
    j["MaxShMemPerTb"] = g.max_sh_mem_per_tb;
    j["ShMemPerSM"] = g.sh_mem_per_sm;
    j["MaxWarpPerSM"] = g.max_warp_per_sm;
    j["MaxTbPerSM"] = g.max_tb_per_sm;
    j["RegPerSM"] = g.reg_per_sm;
    j["MaxRegPerTh"] = g.max_reg_per_th;
    j["MaxThPerSM"] = g.max_th_per_sm;
    j["WarpSize"] = g.warp_size;
    j["GlMemTxSz"] = g.tx_sizes;
    return j.dump(2);
}

GpuSpec load_gpu_spec(const std::string &path) { return gpu_from_json(read_file(path, "gpu spec")); }

GpuSpec gpu_preset(const std::string &name) {
    if (name == "gtx1080ti") return gpu_from_json(kGtx1080Ti);
    if (name == "teslav100") return gpu_from_json(kTeslaV100);
    throw ValidationError("unknown gpu preset '" + name + "'");
}

std::vector<std::string> gpu_preset_names() { return {"gtx1080ti", "teslav100"}; }

CostWeights weights_from_json(const std::string &text) {
    json j = parse_json(text, "weights");
    CostWeights w;
    w.name = j.value("name", std::string("custom"));
    auto v = field<std::vector<double>>(j, "w", "weights");
    if (v.size() != 7) throw ValidationError("weights need exactly 7 values");
    for (size_t i = 0; i < 7; ++i) {
        if (!(v[i] >= 0) || !std::isfinite(v[i])) throw ValidationError("weights must be finite and nonnegative");
        w.w[i] = v[i];
    }
    return w;
}

std::string weights_to_json(const CostWeights &w) {
    json j;
    j["name"] = w.name;
    j["w"] = std::vector<double>(w.w.begin(), w.w.end());
    return j.dump(2);
}

CostWeights load_weights(const std::string &path) { return weights_from_json(read_file(path, "weights file")); }

CostWeights weights_preset(const std::string &gpu_name) {
    if (gpu_name == "gtx1080ti") return weights_from_json(kWeights1080Ti);
    if (gpu_name == "teslav100") return weights_from_json(kWeightsV100);
    throw ValidationError("no weights for gpu preset '" + gpu_name + "'");
}

// ---------------------------------------------------------------------------

int64_t min_gl_transactions(const std::vector<int64_t> &addresses, int64_t tx_size, int64_t access_bytes) {
    if (tx_size <= 0) throw ValidationError("transaction size must be positive");
    std::vector<int64_t> segs;
    segs.reserve(addresses.size() * 2);
    for (int64_t a : addresses) {
        int64_t first = floor_div(a, tx_size);
        int64_t last = floor_div(a + std::max<int64_t>(access_bytes, 1) - 1, tx_size);
        for (int64_t s = first; s <= last; ++s) segs.push_back(s);
    }
    std::sort(segs.begin(), segs.end());
    return static_cast<int64_t>(std::unique(segs.begin(), segs.end()) - segs.begin());
}

namespace {

struct ExternalLoad {
    const LoadNode *node;
    std::vector<int64_t> origin;
    std::vector<int64_t> extents;
    int64_t bytes;
};

std::vector<ExternalLoad> external_loads(const PipelineGraph &g, const GroupLayout &L, const MemberLayout &m) {
    std::vector<ExternalLoad> out;
    for (const LoadNode *ld : collect_loads(*g.stages()[m.stage].expr)) {
        if (ld->from_image) {
            const ImageParam &img = g.image(ld->source);
            out.push_back({ld, std::vector<int64_t>(img.dims.size(), 0), img.dims,
                           static_cast<int64_t>(arith::elem_bytes(img.kind))});
        } else if (L.geom.member(*g.stage_index(ld->source)) < 0) {
            Buffer b = stage_buffer(g.stage(ld->source));
            out.push_back({ld, b.origin, b.extents, static_cast<int64_t>(arith::elem_bytes(b.kind))});
        }
    }
    return out;
}

int64_t address_of(const ExternalLoad &e, const Dim3 &p) {
    int64_t idx = 0;
    for (int d = static_cast<int>(e.extents.size()) - 1; d >= 0; --d) {
        const AffineIndex &ix = e.node->index[d];
        int64_t c = ix.coef * p[d] + ix.offset - e.origin[d];
        idx = idx * e.extents[d] + c;
    }
    return idx * e.bytes;
}

}  // namespace

int64_t global_mem_transactions(const PipelineGraph &g, const GroupLayout &L, int64_t tx_size,
                                const std::optional<Dim3> &origin) {
    const Dim3 x0 = origin.value_or(Dim3{0, 0, 0});
    const Dim3 &W = L.warp;
    const int64_t nlanes = W[0] * W[1] * W[2];
    std::vector<Dim3> lane(nlanes);
    for (int64_t l = 0; l < nlanes; ++l) lane[l] = {l % W[0], (l / W[0]) % W[1], l / (W[0] * W[1])};

    int64_t total = 0;
    std::vector<int64_t> addrs;
    auto count = [&](const std::vector<ExternalLoad> &loads, const MemberLayout &m, auto &&slot_of) {
        for (const auto &e : loads) {
            addrs.clear();
            for (int64_t l = 0; l < nlanes; ++l) {
                Dim3 s;
                if (!slot_of(lane[l], s)) continue;
                Dim3 p;
                for (int d = 0; d < 3; ++d) p[d] = x0[d] - m.left[d] + s[d];
                addrs.push_back(address_of(e, p));
            }
            if (!addrs.empty()) total += min_gl_transactions(addrs, tx_size, e.bytes);
        }
    };

    for (const MemberLayout &m : L.members) {
        auto loads = external_loads(g, L, m);
        if (loads.empty()) continue;
        bool any = m.phase_a_extent[0] > 0 && m.phase_a_extent[1] > 0 && m.phase_a_extent[2] > 0;
        Dim3 it{};
        if (any) {
            for (it[2] = 0; it[2] < m.phase_a_iters[2]; ++it[2])
                for (it[1] = 0; it[1] < m.phase_a_iters[1]; ++it[1])
                    for (it[0] = 0; it[0] < m.phase_a_iters[0]; ++it[0])
                        count(loads, m, [&](const Dim3 &lc, Dim3 &s) {
                            for (int d = 0; d < 3; ++d) {
                                s[d] = it[d] * W[d] + lc[d];
                                if (s[d] >= m.phase_a_extent[d]) return false;
                            }
                            return true;
                        });
        }
        if (!L.plan.hybrid()) continue;
        const int sd = *L.plan.split_dim;
        for (it[2] = 0; it[2] < m.phase_b_iters[2]; ++it[2])
            for (it[1] = 0; it[1] < m.phase_b_iters[1]; ++it[1])
                for (it[0] = 0; it[0] < m.phase_b_iters[0]; ++it[0])
                    for (int64_t r = 0; r < L.plan.register_count(); ++r)
                        count(loads, m, [&](const Dim3 &lc, Dim3 &s) {
                            for (int d = 0; d < 3; ++d) {
                                if (d == sd) {
                                    s[d] = m.phase_a_extent[d] + r * W[d] + lc[d];
                                } else {
                                    s[d] = it[d] * W[d] + lc[d];
                                    if (s[d] >= m.extent[d]) return false;
                                }
                            }
                            return true;
                        });
    }
    return total;
}

Occupancy theoretical_occupancy(int64_t sh_mem_per_tb, int64_t warps_per_tb, int64_t reg_per_th, const GpuSpec &gpu) {
    Occupancy o;
    int64_t by_shared = sh_mem_per_tb > 0 ? gpu.sh_mem_per_sm / sh_mem_per_tb : gpu.max_tb_per_sm;
    o.max_tb_per_sm = std::min(by_shared, gpu.max_tb_per_sm);
    o.sh_mem_occ = std::min(o.max_tb_per_sm * warps_per_tb, gpu.max_warp_per_sm);
    int64_t by_regs = reg_per_th > 0 ? gpu.reg_per_sm / reg_per_th : gpu.max_th_per_sm;
    o.max_th_per_sm = std::min(by_regs, gpu.max_th_per_sm);
    o.reg_occ = o.max_th_per_sm / gpu.warp_size;
    o.occupancy = static_cast<double>(std::min(o.sh_mem_occ, o.reg_occ)) / static_cast<double>(gpu.max_warp_per_sm);
    o.occupancy = std::clamp(o.occupancy, 0.0, 1.0);
    return o;
}

TimeTerms achieved_occupancy_terms(int64_t total_gl_mem_txs, int64_t tx_size, const std::vector<std::string> &stages,
                                   int64_t tile_volume, const ProfileTable &profiles, const GpuSpec &gpu) {
    TimeTerms t;
    t.warp_bw = gpu.gl_mem_bw * static_cast<double>(gpu.warp_size) /
                static_cast<double>(gpu.nsms * gpu.cores_per_sm);
    t.mem_time = static_cast<double>(tx_size) * static_cast<double>(total_gl_mem_txs) / t.warp_bw;
    double per_point = 0;
    for (const auto &s : stages) {
        auto it = profiles.find(s);
        if (it == profiles.end()) throw ValidationError("no profile entry for stage '" + s + "'");
        per_point += it->second.time_per_iter;
    }
    t.compute_time = per_point * static_cast<double>(tile_volume);
    return t;
}

ResourceTerms resource_terms(int64_t sh_mem_per_tb, int64_t max_tb_per_sm, int64_t reg_per_th, double occupancy,
                             const GpuSpec &gpu) {
    ResourceTerms r;
    r.unallocated_sh_mem = 1.0 - static_cast<double>(sh_mem_per_tb * max_tb_per_sm) /
                                     static_cast<double>(gpu.sh_mem_per_sm);
    r.unused_reg = 1.0 - static_cast<double>(reg_per_th) * static_cast<double>(gpu.max_warp_per_sm) *
                             static_cast<double>(gpu.warp_size) * occupancy / static_cast<double>(gpu.reg_per_sm);
    r.unallocated_sh_mem = std::clamp(r.unallocated_sh_mem, 0.0, 1.0);
    r.unused_reg = std::clamp(r.unused_reg, 0.0, 1.0);
    return r;
}

int64_t load_imbalance(int64_t total_threads, int64_t threads_per_tb, int64_t max_tb_per_sm, const GpuSpec &gpu) {
    if (threads_per_tb <= 0 || max_tb_per_sm <= 0) return 0;
    int64_t blocks = ceil_div(total_threads, threads_per_tb);
    int64_t tb_per_sm = ceil_div(blocks, gpu.nsms);
    return tb_per_sm % max_tb_per_sm;
}

double weighted_cost(const CostBreakdown &b, const CostWeights &w) {
    double ratio = b.compute_time > 0 ? b.mem_time / b.compute_time : 0.0;
    return w.w[0] * static_cast<double>(b.total_gl_mem_txs) + w.w[1] * (1.0 - b.occupancy) + w.w[2] * ratio +
           w.w[3] * b.unallocated_sh_mem + w.w[4] * b.unused_reg + w.w[5] * b.frac_overlap.value() +
           w.w[6] * static_cast<double>(b.extra_tbs);
}

CostBreakdown group_cost(const PipelineGraph &g, const std::vector<std::string> &group, const KernelConfig &cfg,
                         const GpuSpec &gpu, const CostWeights &weights, const ProfileTable &profiles) {
    CostBreakdown b;
    auto infeasible = [&](const std::string &reason, const std::string &detail) {
        b.feasible = false;
        b.infeasible_reason = reason;
        b.infeasible_detail = detail;
        b.cost = std::numeric_limits<double>::infinity();
        return b;
    };
    std::vector<int> idx = resolve_group(g, group);
    if (!constant_dependences(g, idx))
        return infeasible("NonConstantDependence", "group members read each other through non-constant accesses");
    if (!reads_within_domain(g, idx))
        return infeasible("ReadOutsideProducer", "an intra-group read falls outside its producer's domain");
    return group_cost(g, group_geometry(g, idx), cfg, gpu, weights, profiles);
}

CostBreakdown group_cost(const PipelineGraph &g, const GroupGeometry &geom, const KernelConfig &cfg,
                         const GpuSpec &gpu, const CostWeights &weights, const ProfileTable &profiles) {
    CostBreakdown b;
    auto infeasible = [&](const std::string &reason, const std::string &detail) {
        b.feasible = false;
        b.infeasible_reason = reason;
        b.infeasible_detail = detail;
        b.cost = std::numeric_limits<double>::infinity();
        return b;
    };
    if (std::find(gpu.tx_sizes.begin(), gpu.tx_sizes.end(), cfg.tx_size) == gpu.tx_sizes.end())
        return infeasible("InvalidConfig", "transaction size not offered by the gpu");
    GroupLayout L;
    try {
        L = make_layout(g, geom, cfg, gpu.warp_size);
    } catch (const ValidationError &e) {
        return infeasible("InvalidConfig", e.what());
    }

    b.warps_per_tb = L.warps_in_block;
    b.threads_per_tb = L.block[0] * L.block[1] * L.block[2];
    b.total_blocks = L.total_blocks();
    b.tile_volume = L.tile_volume();
    int64_t reg_usage = 0;
    for (const auto &m : L.members) {
        if (m.buffered) {
            b.sh_mem_per_tb += static_cast<int64_t>(arith::elem_bytes(m.kind)) * m.shared_per_warp * L.warps_in_block;
            b.reg_tile += m.registers;
        }
        auto it = profiles.find(m.name);
        if (it == profiles.end()) throw ValidationError("no profile entry for stage '" + m.name + "'");
        reg_usage += it->second.reg_usage;
    }
    b.reg_per_th = b.reg_tile + reg_usage;
    b.frac_overlap = overlap_fraction(geom, {cfg.tile[0], cfg.tile[1], cfg.tile[2]}, {L.warp[0], L.warp[1], L.warp[2]});
    if (b.sh_mem_per_tb > gpu.max_sh_mem_per_tb)
        return infeasible("MaxShMemPerTb", std::to_string(b.sh_mem_per_tb) + " bytes of shared memory per block");
    if (b.reg_per_th > gpu.max_reg_per_th)
        return infeasible("MaxRegPerTh", std::to_string(b.reg_per_th) + " registers per thread");

    Occupancy occ = theoretical_occupancy(b.sh_mem_per_tb, b.warps_per_tb, b.reg_per_th, gpu);
    b.max_tb_per_sm = occ.max_tb_per_sm;
    b.occupancy = occ.occupancy;
    b.total_gl_mem_txs = global_mem_transactions(g, L, cfg.tx_size);
    TimeTerms t = achieved_occupancy_terms(b.total_gl_mem_txs, cfg.tx_size, geom.names, b.tile_volume, profiles, gpu);
    b.mem_time = t.mem_time;
    b.compute_time = t.compute_time;
    ResourceTerms r = resource_terms(b.sh_mem_per_tb, b.max_tb_per_sm, b.reg_per_th, b.occupancy, gpu);
    b.unallocated_sh_mem = r.unallocated_sh_mem;
    b.unused_reg = r.unused_reg;
    b.extra_tbs = load_imbalance(b.total_blocks * b.threads_per_tb, b.threads_per_tb, b.max_tb_per_sm, gpu);
    b.cost = weighted_cost(b, weights);
    return b;
}

std::string format_breakdown(const CostBreakdown &b) {
    std::ostringstream os;
    os.precision(12);
    if (!b.feasible) {
        os << "INFEASIBLE(" << b.infeasible_reason << ")";
        if (!b.infeasible_detail.empty()) os << ": " << b.infeasible_detail;
        os << "\n";
        return os.str();
    }
    os << "shMemPerTB        " << b.sh_mem_per_tb << "\n";
    os << "regPerTh          " << b.reg_per_th << " (register tile " << b.reg_tile << ")\n";
    os << "warpsPerTB        " << b.warps_per_tb << "\n";
    os << "totalBlocks       " << b.total_blocks << "\n";
    os << "maxTBPerSM        " << b.max_tb_per_sm << "\n";
    os << "totalGLMemTxs     " << b.total_gl_mem_txs << "\n";
    os << "occupancy         " << b.occupancy << "\n";
    os << "memTime           " << b.mem_time << "\n";
    os << "computeTime       " << b.compute_time << "\n";
    os << "unallocatedShMem  " << b.unallocated_sh_mem << "\n";
    os << "unusedReg         " << b.unused_reg << "\n";
    os << "fracOverlap       " << b.frac_overlap.num << "/" << b.frac_overlap.den << " (" << b.frac_overlap.value()
       << ")\n";
    os << "extraTBs          " << b.extra_tbs << "\n";
    os << "cost              " << b.cost << "\n";
    return os.str();
}

}  // namespace warptile
