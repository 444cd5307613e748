#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "dgcn/ops.hpp"
#include "dgcn/skeleton.hpp"

using namespace dgcn;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Dense oracle: D^{-1/2} * A * D^{-1/2} built as explicit matrix products.
AdjacencyMatrix dense_normalize_oracle(const AdjacencyMatrix& a, double alpha) {
    const auto n = a.n;
    AdjacencyMatrix d(n);
    for (std::size_t i = 0; i < n; ++i) {
        double deg = 0;
        for (std::size_t j = 0; j < n; ++j) deg += a(i, j);
        d(i, i) = std::pow(deg + alpha, -0.5);
    }
    auto product = [n](const AdjacencyMatrix& x, const AdjacencyMatrix& y) {
        AdjacencyMatrix z(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t k = 0; k < n; ++k) z(i, j) += x(i, k) * y(k, j);
        return z;
    };
    return product(product(d, a), d);
}

}  // namespace

TEST(Layout, BuiltinJointCounts) {
    auto ntu = build_layout("ntu25");
    EXPECT_EQ(ntu.n_joints, 25u);
    EXPECT_EQ(ntu.edges.size(), 24u);
    EXPECT_EQ(ntu.center_joint, 1u);
    auto op = build_layout("openpose18");
    EXPECT_EQ(op.n_joints, 18u);
    EXPECT_EQ(op.edges.size(), 17u);
    EXPECT_EQ(op.center_joint, 1u);
    EXPECT_EQ(op.bone_pairs.size(), 17u);
}

TEST(Layout, BuiltinsMatchShippedFiles) {
    EXPECT_EQ(build_layout("ntu25"), build_layout(std::string(DGCN_SOURCE_DIR) + "/data/layouts/ntu25.layout"));
    EXPECT_EQ(build_layout("openpose18"),
              build_layout(std::string(DGCN_SOURCE_DIR) + "/data/layouts/openpose18.layout"));
    EXPECT_FALSE(read_file(std::string(DGCN_SOURCE_DIR) + "/data/layouts/ntu25.layout").empty());
}

TEST(Layout, CustomChainDerivesBones) {
    auto chain = parse_layout("joints 3\ncenter 1\nedge 0 1\nedge 1 2\n", "chain");
    EXPECT_EQ(chain.n_joints, 3u);
    EXPECT_EQ(chain.bone_pairs, (std::vector<JointPair>{{1, 0}, {1, 2}}));
    EXPECT_EQ(parse_layout(format_layout(chain), "again"), chain);
}

TEST(Layout, ValidationErrors) {
    EXPECT_THROW(build_layout("ntu26"), ValidationError);
    EXPECT_THROW(parse_layout("joints 3\ncenter 0\nedge 0 1\n"), ValidationError);             // joint 2 unreachable
    EXPECT_THROW(parse_layout("joints 2\ncenter 0\nedge 0 0\n"), ValidationError);             // self loop
    EXPECT_THROW(parse_layout("joints 2\ncenter 0\nedge 0 2\n"), ValidationError);             // out of range
    EXPECT_THROW(parse_layout("joints 3\ncenter 0\nedge 0 1\nedge 1 2\nbone 0 1\nbone 0 1\n"),
                 ValidationError);                                                           // duplicate target
    EXPECT_THROW(parse_layout("joints 2\ncenter 0\nedge 0 1\nbone 1 0\n"), ValidationError);  // targets center
    EXPECT_THROW(parse_layout("joints 2\nedge 0 1\n"), ParseError);
    EXPECT_THROW(parse_layout("joints 2\ncenter 0\nedge 0 x\n"), ParseError);
    EXPECT_THROW(parse_layout("joints 2\ncenter 0\nvertex 0\n"), ParseError);
}

TEST(Partition, ChainHandEnumeration) {
    auto chain = parse_layout("joints 3\ncenter 1\nedge 0 1\nedge 1 2\n");
    auto c = partition_spatial_configs(chain);
    ASSERT_EQ(c.size(), 3u);
    EXPECT_EQ(c[0], AdjacencyMatrix::identity(3));
    AdjacencyMatrix centripetal(3), centrifugal(3);
    centripetal(0, 1) = centripetal(2, 1) = 1;
    centrifugal(1, 0) = centrifugal(1, 2) = 1;
    EXPECT_EQ(c[1], centripetal);
    EXPECT_EQ(c[2], centrifugal);
}

TEST(Partition, SingleJoint) {
    auto c = partition_spatial_configs(parse_layout("joints 1\ncenter 0\n"));
    EXPECT_EQ(c[0].values, std::vector<double>{1.0});
    EXPECT_EQ(c[1].values, std::vector<double>{0.0});
    EXPECT_EQ(c[2].values, std::vector<double>{0.0});
}

TEST(Partition, StarWithTieSumsToIdentityPlusAdjacency) {
    // Star around 0 plus a leaf-leaf edge (1,2): both ends are one hop out.
    auto star = parse_layout("joints 5\ncenter 0\nedge 0 1\nedge 0 2\nedge 0 3\nedge 0 4\nedge 1 2\n");
    auto c = partition_spatial_configs(star);
    // Brute force: identity plus symmetric physical adjacency from the raw edge list.
    AdjacencyMatrix expected = AdjacencyMatrix::identity(5);
    for (auto [a, b] : star.edges) expected(a, b) = expected(b, a) = 1;
    for (std::size_t i = 0; i < 25; ++i)
        EXPECT_EQ(c[0].values[i] + c[1].values[i] + c[2].values[i], expected.values[i]);
    // Tie places both directions in the centripetal config.
    EXPECT_EQ(c[1](1, 2), 1.0);
    EXPECT_EQ(c[1](2, 1), 1.0);
    EXPECT_EQ(c[2](1, 2), 0.0);
    // Leaves point to the center centripetally, center to leaves centrifugally.
    EXPECT_EQ(c[1](3, 0), 1.0);
    EXPECT_EQ(c[2](0, 3), 1.0);
}

TEST(Partition, EveryEdgeInExactlyOneDirectedSlotPerDirection) {
    for (const char* name : {"ntu25", "openpose18"}) {
        auto layout = build_layout(name);
        auto c = partition_spatial_configs(layout);
        EXPECT_EQ(c[0], AdjacencyMatrix::identity(layout.n_joints));
        for (auto [a, b] : layout.edges) {
            EXPECT_EQ(c[1](a, b) + c[2](a, b), 1.0);
            EXPECT_EQ(c[1](b, a) + c[2](b, a), 1.0);
        }
        double total = 0;
        for (std::size_t i = 0; i < c[1].values.size(); ++i) total += c[1].values[i] + c[2].values[i];
        EXPECT_EQ(total, 2.0 * layout.edges.size());
    }
}

TEST(Normalize, AnalyticCases) {
    auto eye = normalize_adjacency(AdjacencyMatrix::identity(2), 0.001);
    EXPECT_NEAR(eye(0, 0), 1 / 1.001, 1e-15);
    EXPECT_EQ(eye(0, 1), 0.0);
    AdjacencyMatrix swap(2);
    swap(0, 1) = swap(1, 0) = 1;
    auto s = normalize_adjacency(swap, 0.001);
    EXPECT_NEAR(s(0, 1), 1 / 1.001, 1e-15);
    EXPECT_NEAR(s(1, 0), 0.999000999, 1e-9);
    EXPECT_THROW(normalize_adjacency(AdjacencyMatrix::identity(2), 0.0), ValidationError);
    swap(0, 0) = -1;
    EXPECT_THROW(normalize_adjacency(swap, 0.001), ValidationError);
}

TEST(Normalize, MatchesDenseOracleIncludingZeroRows) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t n = 1 + trial % 10;
        AdjacencyMatrix a(n);
        for (auto& v : a.values) v = u(rng) < 0.4 ? 0.0 : u(rng) * 3;
        if (trial % 3 == 0)
            for (std::size_t j = 0; j < n; ++j) a(0, j) = 0;  // all-zero row
        auto got = normalize_adjacency(a, 0.001);
        auto want = dense_normalize_oracle(a, 0.001);
        for (std::size_t i = 0; i < n * n; ++i) {
            EXPECT_NEAR(got.values[i], want.values[i], 1e-12);
            EXPECT_TRUE(std::isfinite(got.values[i]));
        }
    }
}

TEST(Normalize, SymmetricInSymmetricOut) {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0, 2);
    for (int trial = 0; trial < 20; ++trial) {
        AdjacencyMatrix a(7);
        for (std::size_t i = 0; i < 7; ++i)
            for (std::size_t j = 0; j <= i; ++j) a(i, j) = a(j, i) = u(rng);
        auto out = normalize_adjacency(a, 0.001);
        for (std::size_t i = 0; i < 7; ++i)
            for (std::size_t j = 0; j < 7; ++j) EXPECT_EQ(out(i, j), out(j, i));
    }
    auto zero = normalize_adjacency(AdjacencyMatrix(4), 1e-9);
    for (double v : zero.values) EXPECT_EQ(v, 0.0);
}

TEST(Topology, ZeroMaskEqualsNormalizedPhysical) {
    auto layout = build_layout("openpose18");
    auto topo = TopologySet<double>::from_layout(layout);
    ASSERT_EQ(topo.k(), 3u);
    auto raw = partition_spatial_configs(layout);
    for (std::size_t k = 0; k < 3; ++k) {
        auto g = topo.static_topology(k);
        auto want = normalize_adjacency(raw[k], kDefaultAlphaDegree);
        for (std::size_t i = 0; i < want.values.size(); ++i) EXPECT_EQ(g.data()[i], want.values[i]);
    }
    EXPECT_THROW(topo.static_topology(3), ValidationError);
}

TEST(Topology, MaskCancellationAndAdditivity) {
    auto topo = TopologySet<double>::from_layout(parse_layout("joints 3\ncenter 1\nedge 0 1\nedge 1 2\n"));
    auto mask = topo.mask().tensor.mutable_data();
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < 9; ++i) mask[k * 9 + i] = -topo.configs()[k].values[i];
    for (std::size_t k = 0; k < 3; ++k) {
        auto g = topo.static_topology(k);
        for (double v : g.data()) EXPECT_EQ(v, 0.0);
    }
}

TEST(Topology, TrainingStepMovesEntryByMaskDelta) {
    auto topo = TopologySet<double>::from_layout(parse_layout("joints 3\ncenter 1\nedge 0 1\nedge 1 2\n"));
    auto before = topo.static_topology(0).at({0, 2});
    auto fingerprint = topo.configs_fingerprint();
    // Loss = -G[0][0][2] so SGD raises that mask entry by lr.
    auto g = topo.stacked();
    std::vector<double> pick(27, 0.0);
    pick[2] = -1.0;
    sum(mul(g, Tensor<double>({3, 3, 3}, pick))).backward();
    std::vector<Parameter<double>*> ps{&topo.mask()};
    sgd_nesterov_step<double>(ps, {.lr = 0.25, .momentum = 0.0, .weight_decay = 0.0});
    double delta = topo.mask().tensor.at({0, 0, 2});
    EXPECT_NEAR(delta, 0.25, 1e-15);
    EXPECT_NEAR(topo.static_topology(0).at({0, 2}) - before, delta, 1e-15);
    EXPECT_EQ(topo.configs_fingerprint(), fingerprint);
}

TEST(Topology, IdentityOnlyForAggregatedJointCounts) {
    auto topo = TopologySet<float>::identity_only(15);
    EXPECT_EQ(topo.k(), 3u);
    EXPECT_EQ(topo.n_joints(), 15u);
    EXPECT_NEAR(topo.static_topology(0).at({4, 4}), 1 / 1.001, 1e-6);
    auto g1 = topo.static_topology(1);
    for (float v : g1.data()) EXPECT_EQ(v, 0.0f);
}
