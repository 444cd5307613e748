#include "dgcn/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <limits>
#include <sstream>

#include "builtin_layouts.hpp"
#include "dgcn/ops.hpp"

namespace dgcn {

namespace {

constexpr std::size_t kUnreached = std::numeric_limits<std::size_t>::max();

std::vector<std::vector<std::size_t>> adjacency_lists(const SkeletonLayout& layout) {
    std::vector<std::vector<std::size_t>> adj(layout.n_joints);
    for (auto [a, b] : layout.edges) {
        if (a >= layout.n_joints || b >= layout.n_joints) continue;  // reported by validate()
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    for (auto& nb : adj) std::sort(nb.begin(), nb.end());
    return adj;
}

std::vector<JointPair> bfs_bones(const SkeletonLayout& layout) {
    auto adj = adjacency_lists(layout);
    std::vector<std::size_t> parent(layout.n_joints, kUnreached);
    std::deque<std::size_t> queue{layout.center_joint};
    parent[layout.center_joint] = layout.center_joint;
    while (!queue.empty()) {
        auto u = queue.front();
        queue.pop_front();
        for (auto v : adj[u]) {
            if (parent[v] != kUnreached) continue;
            parent[v] = u;
            queue.push_back(v);
        }
    }
    std::vector<JointPair> bones;
    for (std::size_t v = 0; v < layout.n_joints; ++v)
        if (v != layout.center_joint && parent[v] != kUnreached) bones.emplace_back(parent[v], v);
    return bones;
}

}  // namespace

std::vector<std::size_t> SkeletonLayout::hop_distances() const {
    auto adj = adjacency_lists(*this);
    std::vector<std::size_t> hop(n_joints, kUnreached);
    std::deque<std::size_t> queue{center_joint};
    hop[center_joint] = 0;
    while (!queue.empty()) {
        auto u = queue.front();
        queue.pop_front();
        for (auto v : adj[u]) {
            if (hop[v] != kUnreached) continue;
            hop[v] = hop[u] + 1;
            queue.push_back(v);
        }
    }
    return hop;
}

void SkeletonLayout::validate() const {
    const std::string where = "layout '" + name + "': ";
    if (n_joints == 0) throw ValidationError(where + "needs at least one joint");
    if (center_joint >= n_joints) throw ValidationError(where + "center joint out of range");
    for (auto [a, b] : edges) {
        if (a >= n_joints || b >= n_joints) {
            throw ValidationError(where + "edge (" + std::to_string(a) + "," + std::to_string(b) +
                                  ") out of range");
        }
        if (a == b) throw ValidationError(where + "self-loop edge at joint " + std::to_string(a));
    }
    auto hop = hop_distances();
    for (std::size_t j = 0; j < n_joints; ++j) {
        if (hop[j] == kUnreached) {
            throw ValidationError(where + "disconnected graph, joint " + std::to_string(j) +
                                  " unreachable from center");
        }
    }
    std::vector<int> as_target(n_joints, 0);
    for (auto [s, t] : bone_pairs) {
        if (s >= n_joints || t >= n_joints) throw ValidationError(where + "bone index out of range");
        if (++as_target[t] > 1) {
            throw ValidationError(where + "duplicate bone target " + std::to_string(t));
        }
    }
    for (std::size_t j = 0; j < n_joints; ++j) {
        bool expected = j != center_joint;
        if ((as_target[j] == 1) != expected) {
            throw ValidationError(where + (expected ? "no bone targets joint " : "bone targets center joint ") +
                                  std::to_string(j));
        }
    }
}

SkeletonLayout parse_layout(std::string_view text, const std::string& origin) {
    SkeletonLayout layout;
    bool have_joints = false, have_center = false, have_bones = false;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& msg) {
        throw ParseError(origin + ":" + std::to_string(line_no) + ": " + msg);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream fields(line);
        std::string key;
        if (!(fields >> key)) continue;
        auto read_index = [&]() {
            long long v;
            if (!(fields >> v) || v < 0) fail("expected a non-negative integer after '" + key + "'");
            return static_cast<std::size_t>(v);
        };
        if (key == "name") {
            if (!(fields >> layout.name)) fail("missing layout name");
        } else if (key == "joints") {
            layout.n_joints = read_index();
            have_joints = true;
        } else if (key == "center") {
            layout.center_joint = read_index();
            have_center = true;
        } else if (key == "edge") {
            auto a = read_index();
            auto b = read_index();
            layout.edges.emplace_back(a, b);
        } else if (key == "bone") {
            auto s = read_index();
            auto t = read_index();
            layout.bone_pairs.emplace_back(s, t);
            have_bones = true;
        } else {
            fail("unknown record '" + key + "'");
        }
        std::string extra;
        if (fields >> extra) fail("trailing token '" + extra + "'");
    }
    if (!have_joints) throw ParseError(origin + ": missing 'joints' record");
    if (!have_center) throw ParseError(origin + ": missing 'center' record");
    if (layout.name.empty()) layout.name = origin;
    if (!have_bones) layout.bone_pairs = bfs_bones(layout);
    layout.validate();
    return layout;
}

std::string format_layout(const SkeletonLayout& layout) {
    std::ostringstream os;
    os << "name " << layout.name << '\n'
       << "joints " << layout.n_joints << '\n'
       << "center " << layout.center_joint << '\n';
    for (auto [a, b] : layout.edges) os << "edge " << a << ' ' << b << '\n';
    for (auto [s, t] : layout.bone_pairs) os << "bone " << s << ' ' << t << '\n';
    return os.str();
}

SkeletonLayout build_layout(const std::string& name_or_file) {
    if (name_or_file == "ntu25") return parse_layout(builtin::kNtu25Layout, "ntu25");
    if (name_or_file == "openpose18") return parse_layout(builtin::kOpenpose18Layout, "openpose18");
    if (name_or_file == "chain3") return parse_layout("name chain3\njoints 3\ncenter 1\nedge 0 1\nedge 1 2\n", "chain3");
    std::ifstream file(name_or_file);
    if (!file) {
        throw ValidationError("unknown layout '" + name_or_file +
                              "' (expected ntu25, openpose18, chain3, or a readable layout file)");
    }
    std::stringstream buf;
    buf << file.rdbuf();
    return parse_layout(buf.str(), name_or_file);
}

AdjacencyMatrix AdjacencyMatrix::identity(std::size_t size) {
    AdjacencyMatrix m(size);
    for (std::size_t i = 0; i < size; ++i) m(i, i) = 1.0;
    return m;
}

std::vector<AdjacencyMatrix> partition_spatial_configs(const SkeletonLayout& layout) {
    layout.validate();
    const auto n = layout.n_joints;
    auto hop = layout.hop_distances();
    std::vector<AdjacencyMatrix> configs{AdjacencyMatrix::identity(n), AdjacencyMatrix(n),
                                         AdjacencyMatrix(n)};
    for (auto [a, b] : layout.edges) {
        for (auto [i, j] : {JointPair{a, b}, JointPair{b, a}}) {
            // Equal hop distance counts as centripetal.
            auto& target = hop[j] <= hop[i] ? configs[1] : configs[2];
            target(i, j) = 1.0;
        }
    }
    return configs;
}

AdjacencyMatrix normalize_adjacency(const AdjacencyMatrix& a, double alpha_degree) {
    if (!(alpha_degree > 0)) throw ValidationError("normalize_adjacency: alpha_degree must be positive");
    for (double v : a.values) {
        if (!(v >= 0)) throw ValidationError("normalize_adjacency: adjacency entries must be nonnegative");
    }
    std::vector<double> inv_sqrt(a.n);
    for (std::size_t i = 0; i < a.n; ++i) {
        double deg = alpha_degree;
        for (std::size_t j = 0; j < a.n; ++j) deg += a(i, j);
        inv_sqrt[i] = 1.0 / std::sqrt(deg);
    }
    AdjacencyMatrix out(a.n);
    for (std::size_t i = 0; i < a.n; ++i)
        for (std::size_t j = 0; j < a.n; ++j) out(i, j) = (inv_sqrt[i] * inv_sqrt[j]) * a(i, j);
    return out;
}

template <typename T>
TopologySet<T>::TopologySet(std::vector<AdjacencyMatrix> normalized, double alpha)
    : alpha_(alpha), configs_(std::move(normalized)) {
    if (configs_.empty()) throw ValidationError("TopologySet needs at least one config");
    n_ = configs_.front().n;
    std::vector<T> stacked;
    stacked.reserve(configs_.size() * n_ * n_);
    for (const auto& c : configs_) {
        if (c.n != n_) throw DimensionError("TopologySet: configs of different sizes");
        for (double v : c.values) stacked.push_back(static_cast<T>(v));
    }
    configs_tensor_ = Tensor<T>({configs_.size(), n_, n_}, std::move(stacked));
    mask_ = Parameter<T>("mask", Tensor<T>::zeros({configs_.size(), n_, n_}));
}

template <typename T>
TopologySet<T> TopologySet<T>::from_configs(std::vector<AdjacencyMatrix> raw, double alpha_degree) {
    for (auto& c : raw) c = normalize_adjacency(c, alpha_degree);
    return TopologySet(std::move(raw), alpha_degree);
}

template <typename T>
TopologySet<T> TopologySet<T>::from_layout(const SkeletonLayout& layout, double alpha_degree) {
    return from_configs(partition_spatial_configs(layout), alpha_degree);
}

template <typename T>
TopologySet<T> TopologySet<T>::identity_only(std::size_t n_joints, std::size_t k, double alpha_degree) {
    if (k == 0) throw ValidationError("TopologySet needs K >= 1");
    std::vector<AdjacencyMatrix> raw(k, AdjacencyMatrix(n_joints));
    raw[0] = AdjacencyMatrix::identity(n_joints);
    return from_configs(std::move(raw), alpha_degree);
}

template <typename T>
std::uint64_t TopologySet<T>::configs_fingerprint() const {
    // FNV-1a over the raw bytes of the normalized configs.
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& c : configs_) {
        for (double v : c.values) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof(double));
            for (auto b : bytes) {
                h ^= b;
                h *= 1099511628211ULL;
            }
        }
    }
    return h;
}

template <typename T>
Tensor<T> TopologySet<T>::static_topology(std::size_t k) const {
    if (k >= configs_.size()) {
        throw ValidationError("static_topology: config " + std::to_string(k) + " out of range (K=" +
                              std::to_string(configs_.size()) + ")");
    }
    auto all = stacked();
    std::vector<T> out(all.data().begin() + k * n_ * n_, all.data().begin() + (k + 1) * n_ * n_);
    return Tensor<T>({n_, n_}, std::move(out));
}

template <typename T>
Tensor<T> TopologySet<T>::stacked() const {
    return add(configs_tensor_, mask_.tensor);
}

template class TopologySet<float>;
template class TopologySet<double>;

}  // namespace dgcn
