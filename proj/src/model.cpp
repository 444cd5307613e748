#include "dgcn/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace dgcn {

template <typename T>
Tensor<T> static_branch(const Tensor<T>& x, const Tensor<T>& g, const Tensor<T>& w) {
    if (x.dim() != 4 || g.dim() != 3 || g.shape()[1] != g.shape()[2]) {
        throw DimensionError("static_branch expects x[B,C,T,N] and g[K,N,N], got " + to_string(x.shape()) +
                             " and " + to_string(g.shape()));
    }
    const auto& s = x.shape();
    std::size_t k = g.shape()[0], n = s[3];
    if (g.shape()[1] != n) {
        throw DimensionError("static_branch: topology " + to_string(g.shape()) + " does not match " +
                             std::to_string(n) + " joints of " + to_string(s));
    }
    if (w.dim() != 4 || w.shape()[0] % k != 0) {
        throw DimensionError("static_branch: kernel " + to_string(w.shape()) + " is not [K*Co,Ci,1,1] for K=" +
                             std::to_string(k));
    }
    std::size_t co = w.shape()[0] / k;
    auto h = reshape(conv2d(x, w), {s[0], k, co * s[2], n});
    auto y = sum(matmul(h, transpose_last(g)), 1);
    return reshape(y, {s[0], co, s[2], n});
}

template <typename T>
Tensor<T> dynamic_branch(const Tensor<T>& x, const Tensor<T>& g, const Tensor<T>& w) {
    if (x.dim() != 4 || g.dim() != 3) {
        throw DimensionError("dynamic_branch expects x[B,C,T,N] and g[B,N,N], got " + to_string(x.shape()) +
                             " and " + to_string(g.shape()));
    }
    const auto& s = x.shape();
    if (g.shape()[0] != s[0] || g.shape()[1] != s[3] || g.shape()[2] != s[3]) {
        throw DimensionError("dynamic_branch: adjacency " + to_string(g.shape()) + " does not match input " +
                             to_string(s));
    }
    auto h = conv2d(x, w);
    std::size_t co = h.shape()[1];
    auto y = matmul(reshape(h, {s[0], co * s[2], s[3]}), transpose_last(g));
    return reshape(y, {s[0], co, s[2], s[3]});
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& y_dynamic, const Tensor<T>& y_static, T lambda) {
    if (y_dynamic.shape() != y_static.shape()) {
        throw DimensionError("fuse: branch shapes differ, " + to_string(y_dynamic.shape()) + " vs " +
                             to_string(y_static.shape()));
    }
    return add(y_dynamic, scale(y_static, lambda));
}

template <typename T>
Tensor<T> joint_aggregate(const Tensor<T>& x, const Tensor<T>& p) {
    if (x.dim() != 4 || p.dim() != 2 || p.shape()[0] != x.shape()[3]) {
        throw DimensionError("joint_aggregate: projection " + to_string(p.shape()) + " does not fit input " +
                             to_string(x.shape()));
    }
    const auto& s = x.shape();
    auto y = matmul(reshape(x, {s[0], s[1] * s[2], s[3]}), p);
    return reshape(y, {s[0], s[1], s[2], p.shape()[1]});
}

template <typename T>
Tensor<T> derive_bone(const Tensor<T>& joints, const SkeletonLayout& layout) {
    if (joints.dim() != 4 || joints.shape()[3] != layout.n_joints) {
        throw DimensionError("derive_bone: input " + to_string(joints.shape()) + " does not match layout '" +
                             layout.name + "' with " + std::to_string(layout.n_joints) + " joints");
    }
    const auto& s = joints.shape();
    std::size_t n = s[3], rows = s[0] * s[1] * s[2];
    std::vector<T> out(joints.numel(), T(0));
    auto in = joints.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (auto [src, tgt] : layout.bone_pairs) out[r * n + tgt] = in[r * n + tgt] - in[r * n + src];
    auto bones = layout.bone_pairs;
    return make_result<T>(s, std::move(out), "derive_bone", {joints}, [bones, rows, n](detail::Node<T>& self) {
        auto g = self.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
            for (auto [src, tgt] : bones) {
                g[r * n + tgt] += self.grad[r * n + tgt];
                g[r * n + src] -= self.grad[r * n + tgt];
            }
    });
}

template <typename T>
Tensor<T> derive_motion(const Tensor<T>& x) {
    if (x.dim() != 4 || x.shape()[2] == 0) throw DimensionError("derive_motion expects [B,C,T,N] with T >= 1");
    const auto& s = x.shape();
    std::size_t t_len = s[2], n = s[3];
    std::vector<T> out(x.numel(), T(0));
    auto in = x.data();
    for (std::size_t bc = 0; bc < s[0] * s[1]; ++bc)
        for (std::size_t t = 0; t + 1 < t_len; ++t)
            for (std::size_t j = 0; j < n; ++j) {
                std::size_t i = (bc * t_len + t) * n + j;
                out[i] = in[i + n] - in[i];
            }
    std::size_t blocks = s[0] * s[1];
    return make_result<T>(s, std::move(out), "derive_motion", {x}, [blocks, t_len, n](detail::Node<T>& self) {
        auto g = self.inputs[0]->grad_buffer();
        for (std::size_t bc = 0; bc < blocks; ++bc)
            for (std::size_t t = 0; t + 1 < t_len; ++t)
                for (std::size_t j = 0; j < n; ++j) {
                    std::size_t i = (bc * t_len + t) * n + j;
                    g[i + n] += self.grad[i];
                    g[i] -= self.grad[i];
                }
    });
}

template <typename T>
Tensor<T> ensemble_logits(std::span<const Tensor<T>> logit_sets) {
    if (logit_sets.empty()) throw ValidationError("ensemble_logits: no logit sets");
    Tensor<T> total = logit_sets[0];
    for (std::size_t i = 1; i < logit_sets.size(); ++i) {
        if (logit_sets[i].shape() != total.shape()) {
            throw DimensionError("ensemble_logits: stream " + std::to_string(i) + " has shape " +
                                 to_string(logit_sets[i].shape()) + ", expected " + to_string(total.shape()));
        }
        total = add(total, logit_sets[i]);
    }
    return total;
}

namespace {

template <typename T>
TopologySet<T> topology_for(const LayerPlan& plan, const ModelConfig& config, const SkeletonLayout& layout) {
    if (plan.physical_topology && plan.n_in == layout.n_joints)
        return TopologySet<T>::from_layout(layout, config.alpha_degree);
    return TopologySet<T>::identity_only(plan.n_in, 3, config.alpha_degree);
}

}  // namespace

template <typename T>
DynamicGConvLayer<T>::DynamicGConvLayer(const std::string& prefix, const LayerPlan& plan,
                                        const ModelConfig& config, const SkeletonLayout& layout,
                                        std::mt19937_64& rng)
    : plan_(plan),
      lambda_(static_cast<T>(config.lambda_static)),
      learnable_projection_(config.learnable_projection),
      topo_(topology_for<T>(plan, config, layout)),
      static_conv_(prefix + ".static", topo_.k() * plan.c_out, plan.c_in, 1, rng),
      learner_(config.learner, prefix + ".learner", plan.c_in, plan.t_in, plan.n_in, config.cen_final_relu, rng),
      bn_(prefix + ".bn", plan.c_out),
      tc_conv_(prefix + ".tc", plan.c_out, plan.c_out, config.tc_kernel, rng,
               Conv2dOptions{plan.stride, (config.tc_kernel - 1) / 2}),
      tc_bn_(prefix + ".tc.bn", plan.c_out) {
    topo_.mask().name = prefix + ".mask";
    if (learner_.active()) dynamic_conv_ = Conv<T>(prefix + ".dynamic", plan.c_out, plan.c_in, 1, rng);
    if (plan.shortcut_conv()) {
        shortcut_conv_.emplace(prefix + ".shortcut", plan.c_out, plan.c_in, 1, rng, Conv2dOptions{plan.stride, 0});
        shortcut_bn_.emplace(prefix + ".shortcut.bn", plan.c_out);
    }
    if (plan.projection()) {
        T bound = T(1) / std::sqrt(T(plan.n_in));
        projection_.emplace(prefix + ".projection", Tensor<T>::uniform({plan.n_in, plan.n_out}, -bound, bound, rng));
        if (!learnable_projection_) projection_->tensor.set_requires_grad(false);
    }
}

template <typename T>
Tensor<T> DynamicGConvLayer<T>::forward(const Tensor<T>& x, bool training) {
    if (x.dim() != 4 || x.shape()[1] != plan_.c_in || x.shape()[2] != plan_.t_in || x.shape()[3] != plan_.n_in) {
        throw DimensionError("layer " + std::to_string(plan_.index + 1) + " expects [B," + std::to_string(plan_.c_in) +
                             "," + std::to_string(plan_.t_in) + "," + std::to_string(plan_.n_in) + "], got " +
                             to_string(x.shape()));
    }
    Tensor<T> y;
    if (learner_.active()) {
        auto g = learner_.forward(x, training);
        y = dynamic_branch(x, g, dynamic_conv_.weight.tensor);
    }
    if (has_static()) {
        auto ys = static_branch(x, topo_.stacked(), static_conv_.weight.tensor);
        y = learner_.active() ? fuse(y, ys, lambda_) : scale(ys, lambda_);
    }
    y = relu(bn_(y, training));
    y = tc_bn_(tc_conv_(y), training);
    auto residual = shortcut_conv_ ? (*shortcut_bn_)((*shortcut_conv_)(x), training) : x;
    y = relu(add(y, residual));
    if (projection_) y = joint_aggregate(y, projection_->tensor);
    return y;
}

template <typename T>
void DynamicGConvLayer<T>::visit_trainable(const ParamVisitor<T>& f) {
    if (learner_.active()) {
        learner_.visit(f);
        f(dynamic_conv_.weight);
    }
    if (has_static()) {
        f(topo_.mask());
        f(static_conv_.weight);
    }
    bn_.visit(f);
    f(tc_conv_.weight);
    tc_bn_.visit(f);
    if (shortcut_conv_) {
        f(shortcut_conv_->weight);
        shortcut_bn_->visit(f);
    }
    if (projection_ && learnable_projection_) f(*projection_);
}

template <typename T>
void DynamicGConvLayer<T>::visit_all(const ParamVisitor<T>& f) {
    if (learner_.active()) {
        learner_.visit(f);
        f(dynamic_conv_.weight);
    }
    f(topo_.mask());
    f(static_conv_.weight);
    bn_.visit(f);
    f(tc_conv_.weight);
    tc_bn_.visit(f);
    if (shortcut_conv_) {
        f(shortcut_conv_->weight);
        shortcut_bn_->visit(f);
    }
    if (projection_) f(*projection_);
}

template <typename T>
void DynamicGConvLayer<T>::visit_buffers(const BufferVisitor<T>& f) {
    learner_.visit_buffers(f);
    bn_.visit_buffers(f);
    tc_bn_.visit_buffers(f);
    if (shortcut_bn_) shortcut_bn_->visit_buffers(f);
}

template <typename T>
DynamicGCN<T>::DynamicGCN(const ModelConfig& config, std::uint64_t seed)
    : config_(config), layout_(build_layout(config.layout)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    data_bn_ = BatchNorm<T>("data_bn", config_.in_channels * layout_.n_joints);
    auto plans = plan_layers(config_, layout_.n_joints);
    layers_.reserve(plans.size());
    for (const auto& p : plans)
        layers_.emplace_back("layers." + std::to_string(p.index), p, config_, layout_, rng);
    std::size_t c_last = plans.back().c_out;
    fc_weight_ = Parameter<T>("fc.weight", fan_in_uniform<T>({config_.n_classes, c_last}, c_last, rng));
    fc_bias_ = Parameter<T>("fc.bias", Tensor<T>::zeros({config_.n_classes}));
}

template <typename T>
Tensor<T> DynamicGCN<T>::input_norm(const Tensor<T>& x, bool training) {
    const auto& s = x.shape();
    auto h = reshape(permute(x, {0, 1, 3, 2}), {s[0], s[1] * s[3], s[2]});
    h = data_bn_(h, training);
    return permute(reshape(h, {s[0], s[1], s[3], s[2]}), {0, 1, 3, 2});
}

template <typename T>
Tensor<T> DynamicGCN<T>::forward(const Tensor<T>& x, bool training, std::size_t persons, ForwardTrace* trace) {
    if (x.dim() != 4 || x.shape()[1] != config_.in_channels || x.shape()[2] != config_.frames ||
        x.shape()[3] != layout_.n_joints) {
        throw DimensionError("model expects [B," + std::to_string(config_.in_channels) + "," +
                             std::to_string(config_.frames) + "," + std::to_string(layout_.n_joints) + "], got " +
                             to_string(x.shape()));
    }
    if (persons == 0 || x.shape()[0] % persons != 0) {
        throw DimensionError("model: batch of " + std::to_string(x.shape()[0]) + " rows is not a multiple of " +
                             std::to_string(persons) + " persons");
    }
    auto h = input_norm(x, training);
    for (auto& layer : layers_) {
        if (trace) trace->layer_inputs.push_back(h.shape());
        h = layer.forward(h, training);
        if (trace) trace->layer_outputs.push_back(h.shape());
    }
    auto pooled = mean_pool_global(h);
    if (persons > 1) {
        std::size_t c = pooled.shape()[1];
        pooled = mean(reshape(pooled, {x.shape()[0] / persons, persons, c}), 1);
    }
    return linear(pooled, fc_weight_.tensor, fc_bias_.tensor);
}

template <typename T>
Tensor<T> DynamicGCN<T>::dynamic_topology_at(const Tensor<T>& x, std::size_t layer_index) {
    if (layer_index >= layers_.size()) {
        throw ValidationError("layer index " + std::to_string(layer_index) + " out of range (model has " +
                              std::to_string(layers_.size()) + " layers)");
    }
    if (!layers_[layer_index].learner().active())
        throw StateError("layer " + std::to_string(layer_index) + " has no topology learner");
    NoGradGuard guard;
    auto h = input_norm(x, false);
    for (std::size_t i = 0; i < layer_index; ++i) h = layers_[i].forward(h, false);
    return layers_[layer_index].dynamic_topology(h, false);
}

template <typename T>
void DynamicGCN<T>::visit_trainable(const ParamVisitor<T>& f) {
    data_bn_.visit(f);
    for (auto& l : layers_) l.visit_trainable(f);
    f(fc_weight_);
    f(fc_bias_);
}

template <typename T>
void DynamicGCN<T>::visit_all(const ParamVisitor<T>& f) {
    data_bn_.visit(f);
    for (auto& l : layers_) l.visit_all(f);
    f(fc_weight_);
    f(fc_bias_);
}

template <typename T>
void DynamicGCN<T>::visit_buffers(const BufferVisitor<T>& f) {
    data_bn_.visit_buffers(f);
    for (auto& l : layers_) l.visit_buffers(f);
}

template <typename T>
std::vector<Parameter<T>*> DynamicGCN<T>::trainable_parameters() {
    std::vector<Parameter<T>*> out;
    visit_trainable([&](Parameter<T>& p) { out.push_back(&p); });
    return out;
}

template <typename T>
std::size_t DynamicGCN<T>::parameter_count() {
    std::size_t n = 0;
    visit_all([&](Parameter<T>& p) { n += p.tensor.numel(); });
    return n;
}

namespace {

constexpr char kCheckpointMagic[8] = {'D', 'G', 'C', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename Span>
void put_entry(std::ostream& os, const std::string& name, const Shape& shape, const Span& values) {
    put_string(os, name);
    put_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_u32(os, static_cast<std::uint32_t>(d));
    for (auto v : values) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

struct Reader {
    std::istream& in;
    std::string path;

    void bytes(char* dst, std::size_t n, const char* what) {
        in.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw ParseError(path + ": truncated checkpoint while reading " + what + " at byte " +
                             std::to_string(static_cast<long long>(in.tellg())));
    }
    std::uint32_t u32(const char* what) {
        unsigned char b[4];
        bytes(reinterpret_cast<char*>(b), 4, what);
        return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
    }
    std::string str(const char* what) {
        std::uint32_t n = u32(what);
        if (n > (1u << 28)) throw ParseError(path + ": implausible string length in " + what);
        std::string s(n, '\0');
        bytes(s.data(), n, what);
        return s;
    }
};

struct StoredTensor {
    Shape shape;
    std::vector<float> values;
    bool used = false;
};

}  // namespace

void save_checkpoint(const std::string& path, DynamicGCN<float>& model, const nlohmann::json& meta) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint '" + path + "'");
    std::vector<std::pair<std::string, Tensor<float>>> entries;
    model.visit_all([&](Parameter<float>& p) { entries.emplace_back(p.name, p.tensor); });
    model.visit_buffers([&](const std::string& name, BatchNormState<float>& s) {
        entries.emplace_back(name + ".running_mean", Tensor<float>({s.running_mean.size()}, s.running_mean));
        entries.emplace_back(name + ".running_var", Tensor<float>({s.running_var.size()}, s.running_var));
    });
    os.write(kCheckpointMagic, 8);
    put_u32(os, kCheckpointVersion);
    put_string(os, nlohmann::json(model.config()).dump());
    put_string(os, meta.is_null() ? "{}" : meta.dump());
    put_u32(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) put_entry(os, name, t.shape(), t.data());
    if (!os) throw IoError("failed writing checkpoint '" + path + "'");
}

DynamicGCN<float> load_checkpoint(const std::string& path, nlohmann::json* meta) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint '" + path + "'");
    Reader r{is, path};
    char magic[8];
    r.bytes(magic, 8, "magic");
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw ParseError(path + ": not a checkpoint (bad magic)");
    auto version = r.u32("version");
    if (version != kCheckpointVersion)
        throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
    ModelConfig config;
    try {
        config = nlohmann::json::parse(r.str("config")).get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": bad config JSON: " + e.what());
    }
    try {
        auto m = nlohmann::json::parse(r.str("metadata"));
        if (meta) *meta = std::move(m);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": bad metadata JSON: " + e.what());
    }
    std::map<std::string, StoredTensor> stored;
    auto count = r.u32("entry count");
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name = r.str("entry name");
        StoredTensor t;
        auto ndim = r.u32("rank");
        if (ndim > 8) throw ParseError(path + ": implausible rank for '" + name + "'");
        for (std::uint32_t d = 0; d < ndim; ++d) t.shape.push_back(r.u32("dims"));
        t.values.resize(numel(t.shape));
        for (auto& v : t.values) v = std::bit_cast<float>(r.u32(name.c_str()));
        stored[name] = std::move(t);
    }
    DynamicGCN<float> model(config, 0);
    auto take = [&](const std::string& name, const Shape& shape) -> std::vector<float>& {
        auto it = stored.find(name);
        if (it == stored.end()) throw ParseError(path + ": missing entry '" + name + "'");
        if (it->second.shape != shape) {
            throw ParseError(path + ": entry '" + name + "' has shape " + to_string(it->second.shape) + ", expected " +
                             to_string(shape));
        }
        it->second.used = true;
        return it->second.values;
    };
    model.visit_all([&](Parameter<float>& p) {
        auto& v = take(p.name, p.tensor.shape());
        std::copy(v.begin(), v.end(), p.tensor.mutable_data().begin());
    });
    model.visit_buffers([&](const std::string& name, BatchNormState<float>& s) {
        s.running_mean = take(name + ".running_mean", {s.running_mean.size()});
        s.running_var = take(name + ".running_var", {s.running_var.size()});
    });
    for (const auto& [name, t] : stored)
        if (!t.used) throw ParseError(path + ": unexpected entry '" + name + "'");
    return model;
}

#define DGCN_INSTANTIATE_MODEL(T)                                                          \
    template Tensor<T> static_branch(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
    template Tensor<T> dynamic_branch(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> fuse(const Tensor<T>&, const Tensor<T>&, T);                         \
    template Tensor<T> joint_aggregate(const Tensor<T>&, const Tensor<T>&);                 \
    template Tensor<T> derive_bone(const Tensor<T>&, const SkeletonLayout&);                \
    template Tensor<T> derive_motion(const Tensor<T>&);                                     \
    template Tensor<T> ensemble_logits(std::span<const Tensor<T>>);                         \
    template class DynamicGConvLayer<T>;                                                    \
    template class DynamicGCN<T>;

DGCN_INSTANTIATE_MODEL(float)
DGCN_INSTANTIATE_MODEL(double)

}  // namespace dgcn
