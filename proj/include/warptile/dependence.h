#pragma once

// Dependence vectors between stages and the per-group halo geometry used by
// overlapped tiling.

#include <cstdint>
#include <string>
#include <vector>

#include "warptile/pipeline.h"

namespace warptile {

/// Spatial offset consumer coordinate minus producer coordinate. A load P[x+b]
/// inside consumer C yields offset -b.
struct DependenceVector {
    std::string producer;
    std::string consumer;
    std::vector<int64_t> offset;

    bool operator==(const DependenceVector &) const = default;
};

/// One vector per distinct (producer, consumer, offset), ordered by consumer
/// declaration, then producer declaration, then offset.
std::vector<DependenceVector> compute_dependence_vectors(const PipelineGraph &g);

/// Stage indices for the named group members. Throws ValidationError for unknown or repeated names.
std::vector<int> resolve_group(const PipelineGraph &g, const std::vector<std::string> &group);

/// True iff every load between two members of the group has unit coefficients.
bool constant_dependences(const PipelineGraph &g, const std::vector<int> &group);
bool constant_dependences(const PipelineGraph &g, const std::vector<std::string> &group);

/// True iff every in-group load P[x+b] issued from any point of its consumer's
/// domain lands inside P's domain, so no intra-group read needs clamping.
bool reads_within_domain(const PipelineGraph &g, const std::vector<int> &group);

/// Members whose values leave the group: pipeline liveouts and stages read by non-members.
std::vector<int> group_outputs(const PipelineGraph &g, const std::vector<int> &group);

struct GroupGeometry {
    int dims = 0;
    /// Member stage indices in topological order.
    std::vector<int> stages;
    std::vector<std::string> names;
    /// Members that leave the group (see group_outputs), topological order.
    std::vector<int> outputs;
    /// Per member: consumed by another member, so it needs an on-chip buffer.
    std::vector<bool> buffered;
    /// Per member, per dimension: extra points computed left / right of the warp tile.
    std::vector<std::vector<int64_t>> left;
    std::vector<std::vector<int64_t>> right;
    /// Per dimension: maximum right halo over members.
    std::vector<int64_t> phi_r;
    /// Bounding box of the outputs' domains; warp tiles cover it.
    std::vector<Interval> box;

    int member(int stage) const;
    int64_t overlap(int m, int d) const { return left[m][d] + right[m][d]; }
};

/// Backward halo accumulation from the group outputs. Throws ValidationError when the
/// group is empty, disconnected in dimensionality, or has non-constant dependences.
GroupGeometry group_geometry(const PipelineGraph &g, const std::vector<int> &group);
GroupGeometry group_geometry(const PipelineGraph &g, const std::vector<std::string> &group);

struct Rational {
    int64_t num = 0;
    int64_t den = 1;

    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    bool operator==(const Rational &o) const { return num * o.den == o.num * den; }
};

/// Redundant points over total points per warp tile, summed across buffered members.
/// Unbuffered members never compute halos. Reduced fraction.
Rational overlap_fraction(const GroupGeometry &geom, const std::vector<int64_t> &tile,
                          const std::vector<int64_t> &warp);

}  // namespace warptile
