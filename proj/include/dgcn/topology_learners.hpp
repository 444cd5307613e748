#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include "dgcn/nn.hpp"

namespace dgcn {

/// Which per-sample adjacency predictor a layer uses. `none` disables the
/// dynamic branch entirely (static-topology-only layers).
enum class LearnerVariant { none, cen, cen_symmetric, cen_feature, cen_temporal, nonlocal };

std::string to_string(LearnerVariant v);
LearnerVariant parse_learner_variant(std::string_view name);

inline constexpr double kRowNormEps = 1e-6;

/// Each row of m[..., N, N] divided by max(||row||, eps).
template <typename T>
Tensor<T> l2_row_normalize(const Tensor<T>& m, T eps = T(kRowNormEps));

/// Which axis survives until the final N -> N*N mapping.
///   joint:    squeeze C, then T, map N   (CeN)
///   feature:  squeeze T, then N, map C   (CeN-F)
///   temporal: squeeze C, then N, map T   (CeN-T)
enum class CeNContext { joint, feature, temporal };

struct CeNOptions {
    CeNContext context = CeNContext::joint;
    bool symmetric = false;   // CeN*
    bool final_relu = true;   // ReLU after the last conv's BN
};

/// Context-encoding network: three 1x1 conv + BN (+ReLU) stages, each with the
/// axis being squeezed moved into the channel slot, then reshape to [B,N,N]
/// and L2 row normalization. Built for fixed (C, T, N).
template <typename T>
class CeN {
  public:
    CeN(const std::string& prefix, std::size_t channels, std::size_t frames, std::size_t joints,
        CeNOptions options, std::mt19937_64& rng);

    /// Final-stage output reshaped to [B,N,N]; no symmetrization.
    Tensor<T> adjacency_logits(const Tensor<T>& x, bool training);
    /// adjacency_logits, symmetrized as (A + A^T)/2 when `symmetric`.
    Tensor<T> pre_normalization(const Tensor<T>& x, bool training);
    /// Row-normalized adjacency [B,N,N].
    Tensor<T> forward(const Tensor<T>& x, bool training);

    const CeNOptions& options() const { return options_; }
    void set_symmetric(bool on) { options_.symmetric = on; }
    std::size_t channels() const { return dims_[1]; }
    std::size_t frames() const { return dims_[2]; }
    std::size_t joints() const { return dims_[3]; }
    /// The conv producing N*N values per sample.
    const Conv<T>& final_conv() const { return stages_[2].conv; }

    void visit(const ParamVisitor<T>& f);
    void visit_buffers(const BufferVisitor<T>& f);

  private:
    struct Stage {
        std::size_t axis;  // 1 = C, 2 = T, 3 = N of the [B,C,T,N] input
        Conv<T> conv;
        BatchNorm<T> bn;
    };
    CeNOptions options_;
    std::array<std::size_t, 4> dims_{};
    std::array<Stage, 3> stages_;
};

/// Embedded-similarity baseline: theta/phi 1x1 convs C -> C_e, mean over T,
/// S = theta^T phi per sample, softmax over each row.
template <typename T>
class NonLocal {
  public:
    NonLocal(const std::string& prefix, std::size_t channels, std::mt19937_64& rng);

    static std::size_t embed_dim_for(std::size_t channels) { return std::max<std::size_t>(channels / 4, 4); }
    std::size_t embed_dim() const { return theta.c_out(); }
    Tensor<T> forward(const Tensor<T>& x) const;
    void visit(const ParamVisitor<T>& f);

    Conv<T> theta, phi;
};

/// A layer's learner slot: one of the variants above, or nothing.
template <typename T>
class TopologyLearner {
  public:
    TopologyLearner() = default;
    TopologyLearner(LearnerVariant variant, const std::string& prefix, std::size_t channels,
                    std::size_t frames, std::size_t joints, bool final_relu, std::mt19937_64& rng);

    LearnerVariant variant() const { return variant_; }
    bool active() const { return variant_ != LearnerVariant::none; }
    /// Per-sample adjacency [B,N,N] for x[B,C,T,N].
    Tensor<T> forward(const Tensor<T>& x, bool training);

    CeN<T>* cen() { return cen_ ? &*cen_ : nullptr; }
    NonLocal<T>* nonlocal() { return nonlocal_ ? &*nonlocal_ : nullptr; }

    void visit(const ParamVisitor<T>& f);
    void visit_buffers(const BufferVisitor<T>& f);

  private:
    LearnerVariant variant_ = LearnerVariant::none;
    std::optional<CeN<T>> cen_;
    std::optional<NonLocal<T>> nonlocal_;
};

extern template class CeN<float>;
extern template class CeN<double>;
extern template class NonLocal<float>;
extern template class NonLocal<double>;
extern template class TopologyLearner<float>;
extern template class TopologyLearner<double>;

}  // namespace dgcn
