#include "dgcn/topology_learners.hpp"

namespace dgcn {

std::string to_string(LearnerVariant v) {
    switch (v) {
        case LearnerVariant::none: return "none";
        case LearnerVariant::cen: return "cen";
        case LearnerVariant::cen_symmetric: return "cen_symmetric";
        case LearnerVariant::cen_feature: return "cen_feature";
        case LearnerVariant::cen_temporal: return "cen_temporal";
        case LearnerVariant::nonlocal: return "nonlocal";
    }
    return "?";
}

LearnerVariant parse_learner_variant(std::string_view name) {
    for (auto v : {LearnerVariant::none, LearnerVariant::cen, LearnerVariant::cen_symmetric,
                   LearnerVariant::cen_feature, LearnerVariant::cen_temporal, LearnerVariant::nonlocal}) {
        if (to_string(v) == name) return v;
    }
    throw ValidationError("unknown topology learner '" + std::string(name) +
                          "' (none, cen, cen_symmetric, cen_feature, cen_temporal, nonlocal)");
}

template <typename T>
Tensor<T> l2_row_normalize(const Tensor<T>& m, T eps) {
    if (!(eps > T(0))) throw ValidationError("l2_row_normalize: eps must be positive");
    return l2_normalize_rows(m, eps);
}

namespace {

constexpr std::array<std::size_t, 3> squeeze_order(CeNContext c) {
    switch (c) {
        case CeNContext::joint: return {1, 2, 3};
        case CeNContext::feature: return {2, 3, 1};
        case CeNContext::temporal: return {1, 3, 2};
    }
    return {1, 2, 3};
}

constexpr const char* axis_letter(std::size_t axis) { return axis == 1 ? "c" : axis == 2 ? "t" : "n"; }

}  // namespace

template <typename T>
CeN<T>::CeN(const std::string& prefix, std::size_t channels, std::size_t frames, std::size_t joints,
            CeNOptions options, std::mt19937_64& rng)
    : options_(options), dims_{0, channels, frames, joints} {
    if (channels == 0 || frames == 0 || joints == 0) throw ValidationError("CeN: zero-sized dimension");
    auto order = squeeze_order(options.context);
    for (std::size_t s = 0; s < 3; ++s) {
        std::size_t axis = order[s];
        std::size_t out = s < 2 ? 1 : joints * joints;
        std::string name = prefix + ".conv_" + axis_letter(axis);
        stages_[s] = Stage{axis, Conv<T>(name, out, dims_[axis], 1, rng), BatchNorm<T>(name + ".bn", out)};
    }
}

template <typename T>
Tensor<T> CeN<T>::adjacency_logits(const Tensor<T>& x, bool training) {
    if (x.dim() != 4) throw DimensionError("CeN expects [B,C,T,N], got " + to_string(x.shape()));
    const auto& s = x.shape();
    if (s[1] != dims_[1] || s[3] != dims_[3]) {
        throw DimensionError("CeN built for C=" + std::to_string(dims_[1]) + ", N=" + std::to_string(dims_[3]) +
                             ", got input " + to_string(s));
    }
    if (s[2] != dims_[2]) {
        throw DimensionError("CeN built for fixed T=" + std::to_string(dims_[2]) + ", got T=" +
                             std::to_string(s[2]));
    }
    // position_of[axis] tracks where each logical axis currently sits.
    std::array<std::size_t, 4> position_of{0, 1, 2, 3};
    std::array<std::size_t, 4> axis_at{0, 1, 2, 3};
    Tensor<T> h = x;
    for (std::size_t i = 0; i < 3; ++i) {
        auto& st = stages_[i];
        std::size_t p = position_of[st.axis];
        if (p != 1) {
            std::vector<std::size_t> perm{0, 1, 2, 3};
            std::swap(perm[1], perm[p]);
            h = permute(h, perm);
            std::size_t displaced = axis_at[1];
            std::swap(axis_at[1], axis_at[p]);
            position_of[st.axis] = 1;
            position_of[displaced] = p;
        }
        h = st.bn(st.conv(h), training);
        if (i < 2 || options_.final_relu) h = relu(h);
    }
    std::size_t n = dims_[3];
    return reshape(h, {s[0], n, n});
}

template <typename T>
Tensor<T> CeN<T>::pre_normalization(const Tensor<T>& x, bool training) {
    auto a = adjacency_logits(x, training);
    if (!options_.symmetric) return a;
    return scale(add(a, transpose_last(a)), T(0.5));
}

template <typename T>
Tensor<T> CeN<T>::forward(const Tensor<T>& x, bool training) {
    return l2_row_normalize(pre_normalization(x, training));
}

template <typename T>
void CeN<T>::visit(const ParamVisitor<T>& f) {
    for (auto& st : stages_) {
        f(st.conv.weight);
        st.bn.visit(f);
    }
}

template <typename T>
void CeN<T>::visit_buffers(const BufferVisitor<T>& f) {
    for (auto& st : stages_) st.bn.visit_buffers(f);
}

template <typename T>
NonLocal<T>::NonLocal(const std::string& prefix, std::size_t channels, std::mt19937_64& rng)
    : theta(prefix + ".theta", embed_dim_for(channels), channels, 1, rng),
      phi(prefix + ".phi", embed_dim_for(channels), channels, 1, rng) {}

template <typename T>
Tensor<T> NonLocal<T>::forward(const Tensor<T>& x) const {
    if (x.dim() != 4 || x.shape()[1] != theta.c_in()) {
        throw DimensionError("non-local expects [B," + std::to_string(theta.c_in()) + ",T,N], got " +
                             to_string(x.shape()));
    }
    auto th = mean(theta(x), 2);  // [B,Ce,N]
    auto ph = mean(phi(x), 2);
    return softmax(matmul(transpose_last(th), ph));
}

template <typename T>
void NonLocal<T>::visit(const ParamVisitor<T>& f) {
    f(theta.weight);
    f(phi.weight);
}

template <typename T>
TopologyLearner<T>::TopologyLearner(LearnerVariant variant, const std::string& prefix, std::size_t channels,
                                    std::size_t frames, std::size_t joints, bool final_relu,
                                    std::mt19937_64& rng)
    : variant_(variant) {
    CeNOptions opts;
    opts.final_relu = final_relu;
    switch (variant) {
        case LearnerVariant::none: return;
        case LearnerVariant::nonlocal: nonlocal_.emplace(prefix, channels, rng); return;
        case LearnerVariant::cen: break;
        case LearnerVariant::cen_symmetric: opts.symmetric = true; break;
        case LearnerVariant::cen_feature: opts.context = CeNContext::feature; break;
        case LearnerVariant::cen_temporal: opts.context = CeNContext::temporal; break;
    }
    cen_.emplace(prefix, channels, frames, joints, opts, rng);
}

template <typename T>
Tensor<T> TopologyLearner<T>::forward(const Tensor<T>& x, bool training) {
    if (cen_) return cen_->forward(x, training);
    if (nonlocal_) return nonlocal_->forward(x);
    throw StateError("topology learner 'none' has no forward");
}

template <typename T>
void TopologyLearner<T>::visit(const ParamVisitor<T>& f) {
    if (cen_) cen_->visit(f);
    if (nonlocal_) nonlocal_->visit(f);
}

template <typename T>
void TopologyLearner<T>::visit_buffers(const BufferVisitor<T>& f) {
    if (cen_) cen_->visit_buffers(f);
}

template Tensor<float> l2_row_normalize(const Tensor<float>&, float);
template Tensor<double> l2_row_normalize(const Tensor<double>&, double);
template class CeN<float>;
template class CeN<double>;
template class NonLocal<float>;
template class NonLocal<double>;
template class TopologyLearner<float>;
template class TopologyLearner<double>;

}  // namespace dgcn
