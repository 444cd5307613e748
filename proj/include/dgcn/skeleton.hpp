#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dgcn/optim.hpp"
#include "dgcn/tensor.hpp"

namespace dgcn {

using JointPair = std::pair<std::size_t, std::size_t>;

/// One skeleton convention: joints, physical edges, the center joint the
/// spatial partition measures distance from, and directed bones
/// (source, target) used to derive the bone modality.
struct SkeletonLayout {
    std::string name;
    std::size_t n_joints = 0;
    std::vector<JointPair> edges;
    std::size_t center_joint = 0;
    std::vector<JointPair> bone_pairs;

    /// Throws ValidationError on out-of-range indices, self loops, a
    /// disconnected edge set, or bones that do not cover every non-center
    /// joint exactly once as target.
    void validate() const;
    /// Hop count from the center joint over the physical edges.
    std::vector<std::size_t> hop_distances() const;

    bool operator==(const SkeletonLayout&) const = default;
};

/// Layout text format, one record per line, '#' starts a comment:
///
///     name   <identifier>
///     joints <n>
///     center <joint>
///     edge   <joint> <joint>      (undirected, repeatable)
///     bone   <source> <target>    (optional, repeatable)
///
/// Without bone records, bones follow the BFS tree from the center outward.
SkeletonLayout parse_layout(std::string_view text, const std::string& origin = "<layout>");
std::string format_layout(const SkeletonLayout& layout);

/// "ntu25", "openpose18", "chain3" (0-1-2, center 1; for tiny tests), or a
/// path to a layout file.
SkeletonLayout build_layout(const std::string& name_or_file);

/// Dense square matrix of doubles; the static graph symbols live here before
/// being lifted into tensors.
struct AdjacencyMatrix {
    std::size_t n = 0;
    std::vector<double> values;

    AdjacencyMatrix() = default;
    explicit AdjacencyMatrix(std::size_t size) : n(size), values(size * size, 0.0) {}
    static AdjacencyMatrix identity(std::size_t size);

    double& operator()(std::size_t i, std::size_t j) { return values[i * n + j]; }
    double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
    bool operator==(const AdjacencyMatrix&) const = default;
};

/// Self / centripetal / centrifugal partition. Entry [i][j] of config 2 is
/// set when j neighbors i and hop(j) <= hop(i); config 3 when hop(j) > hop(i).
std::vector<AdjacencyMatrix> partition_spatial_configs(const SkeletonLayout& layout);

/// Lambda^{-1/2} A Lambda^{-1/2} with Lambda_ii = sum_j A_ij + alpha_degree.
AdjacencyMatrix normalize_adjacency(const AdjacencyMatrix& a, double alpha_degree);

inline constexpr double kDefaultAlphaDegree = 0.001;

/// K frozen normalized adjacency matrices plus a learnable additive mask.
template <typename T>
class TopologySet {
  public:
    /// Physical partition of `layout`, normalized.
    static TopologySet from_layout(const SkeletonLayout& layout,
                                   double alpha_degree = kDefaultAlphaDegree);
    /// Joint counts without a physical skeleton (after joint aggregation):
    /// config 1 is the identity, the rest are empty.
    static TopologySet identity_only(std::size_t n_joints, std::size_t k = 3,
                                     double alpha_degree = kDefaultAlphaDegree);
    /// Arbitrary raw (unnormalized) configs.
    static TopologySet from_configs(std::vector<AdjacencyMatrix> raw,
                                    double alpha_degree = kDefaultAlphaDegree);

    std::size_t k() const { return configs_.size(); }
    std::size_t n_joints() const { return n_; }
    double alpha_degree() const { return alpha_; }
    const std::vector<AdjacencyMatrix>& configs() const { return configs_; }
    /// Stable hash of the frozen normalized configs.
    std::uint64_t configs_fingerprint() const;

    Parameter<T>& mask() { return mask_; }
    const Parameter<T>& mask() const { return mask_; }

    /// configs[k] + mask[k], shape [N,N].
    Tensor<T> static_topology(std::size_t k) const;
    /// configs + mask for all k, shape [K,N,N]; differentiable in the mask.
    Tensor<T> stacked() const;

  private:
    TopologySet(std::vector<AdjacencyMatrix> normalized, double alpha);

    std::size_t n_ = 0;
    double alpha_ = kDefaultAlphaDegree;
    std::vector<AdjacencyMatrix> configs_;
    Tensor<T> configs_tensor_;
    Parameter<T> mask_;
};

extern template class TopologySet<float>;
extern template class TopologySet<double>;

}  // namespace dgcn
