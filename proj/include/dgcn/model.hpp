#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dgcn/model_config.hpp"
#include "dgcn/nn.hpp"
#include "dgcn/skeleton.hpp"
#include "dgcn/topology_learners.hpp"

namespace dgcn {

/// sum_k (G[k] applied along joints of x) through the k-th slice of a 1x1 conv.
/// x[B,Ci,T,N], g[K,N,N], w[K*Co,Ci,1,1] -> [B,Co,T,N]. Rows of G gather:
/// out[..., i] = sum_j G[i][j] in[..., j].
template <typename T>
Tensor<T> static_branch(const Tensor<T>& x, const Tensor<T>& g, const Tensor<T>& w);

/// Per-sample graph product. x[B,Ci,T,N], g[B,N,N], w[Co,Ci,1,1] -> [B,Co,T,N].
template <typename T>
Tensor<T> dynamic_branch(const Tensor<T>& x, const Tensor<T>& g, const Tensor<T>& w);

/// y_dynamic + lambda * y_static.
template <typename T>
Tensor<T> fuse(const Tensor<T>& y_dynamic, const Tensor<T>& y_static, T lambda);

/// x[B,C,T,Ni] times p[Ni,No] along the joint axis.
template <typename T>
Tensor<T> joint_aggregate(const Tensor<T>& x, const Tensor<T>& p);

/// Bone vectors J[target] - J[source] per layout bone; the center joint gets zero.
template <typename T>
Tensor<T> derive_bone(const Tensor<T>& joints, const SkeletonLayout& layout);

/// M[t] = X[t+1] - X[t]; the last frame is zero.
template <typename T>
Tensor<T> derive_motion(const Tensor<T>& x);

/// Elementwise sum of logits from several streams.
template <typename T>
Tensor<T> ensemble_logits(std::span<const Tensor<T>> logit_sets);

/// One Dynamic GConv layer: dynamic branch (learner + W') fused with the
/// static branch (topology + mask + W), BN+ReLU, temporal conv + BN, residual,
/// ReLU, and an optional joint projection.
template <typename T>
class DynamicGConvLayer {
  public:
    DynamicGConvLayer(const std::string& prefix, const LayerPlan& plan, const ModelConfig& config,
                      const SkeletonLayout& layout, std::mt19937_64& rng);

    Tensor<T> forward(const Tensor<T>& x, bool training);

    const LayerPlan& plan() const { return plan_; }
    T lambda_static() const { return lambda_; }
    bool has_static() const { return lambda_ != T(0); }
    TopologySet<T>& topology() { return topo_; }
    Conv<T>& static_conv() { return static_conv_; }
    Conv<T>& dynamic_conv() { return dynamic_conv_; }
    TopologyLearner<T>& learner() { return learner_; }
    Conv<T>& tc_conv() { return tc_conv_; }
    std::optional<Parameter<T>>& projection() { return projection_; }
    /// Adjacency the learner predicts for x (eval or training BN per flag).
    Tensor<T> dynamic_topology(const Tensor<T>& x, bool training) { return learner_.forward(x, training); }

    /// Parameters that influence the output and receive gradients.
    void visit_trainable(const ParamVisitor<T>& f);
    /// Every parameter, including inactive static ones and a frozen projection.
    void visit_all(const ParamVisitor<T>& f);
    void visit_buffers(const BufferVisitor<T>& f);

  private:
    LayerPlan plan_;
    T lambda_;
    bool learnable_projection_;
    TopologySet<T> topo_;
    Conv<T> static_conv_;
    Conv<T> dynamic_conv_;
    TopologyLearner<T> learner_;
    BatchNorm<T> bn_;
    Conv<T> tc_conv_;
    BatchNorm<T> tc_bn_;
    std::optional<Conv<T>> shortcut_conv_;
    std::optional<BatchNorm<T>> shortcut_bn_;
    std::optional<Parameter<T>> projection_;
};

/// Shapes observed during one forward pass.
struct ForwardTrace {
    std::vector<Shape> layer_inputs;
    std::vector<Shape> layer_outputs;
};

template <typename T>
class DynamicGCN {
  public:
    DynamicGCN(const ModelConfig& config, std::uint64_t seed);

    /// x[B*persons, C, T, N] with each sample's persons on consecutive rows.
    /// Returns pre-softmax logits [B, n_classes].
    Tensor<T> forward(const Tensor<T>& x, bool training, std::size_t persons = 1,
                      ForwardTrace* trace = nullptr);
    /// Runs the first `layer_index + 1` layers (0-based) in eval mode and
    /// returns the learner's adjacency at that layer's input, [B,N,N].
    Tensor<T> dynamic_topology_at(const Tensor<T>& x, std::size_t layer_index);

    const ModelConfig& config() const { return config_; }
    const SkeletonLayout& layout() const { return layout_; }
    std::size_t n_layers() const { return layers_.size(); }
    DynamicGConvLayer<T>& layer(std::size_t i) { return layers_.at(i); }

    void visit_trainable(const ParamVisitor<T>& f);
    void visit_all(const ParamVisitor<T>& f);
    void visit_buffers(const BufferVisitor<T>& f);
    std::vector<Parameter<T>*> trainable_parameters();
    std::size_t parameter_count();

  private:
    Tensor<T> input_norm(const Tensor<T>& x, bool training);

    ModelConfig config_;
    SkeletonLayout layout_;
    BatchNorm<T> data_bn_;
    std::vector<DynamicGConvLayer<T>> layers_;
    Parameter<T> fc_weight_, fc_bias_;
};

/// Checkpoint container (little-endian):
///   "DGCNCKPT" | u32 version=1 | u32 len + model config JSON | u32 len + metadata JSON |
///   u32 count | count x (u32 len + name | u32 ndim | ndim x u32 dim | float32 data)
/// Entries are every parameter followed by "<bn>.running_mean" / "<bn>.running_var".
/// `meta` is free-form (the CLI stores the modality and run settings there).
void save_checkpoint(const std::string& path, DynamicGCN<float>& model,
                     const nlohmann::json& meta = nlohmann::json::object());
DynamicGCN<float> load_checkpoint(const std::string& path, nlohmann::json* meta = nullptr);

extern template class DynamicGConvLayer<float>;
extern template class DynamicGConvLayer<double>;
extern template class DynamicGCN<float>;
extern template class DynamicGCN<double>;

}  // namespace dgcn
