#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dgcn/topology_learners.hpp"
#include "test_util.hpp"

using namespace dgcn;
using dgcn::testing::gradcheck;
using dgcn::testing::random_tensor;
using dgcn::testing::TensorD;
using dgcn::testing::TensorF;

namespace {

template <typename T>
void expect_unit_or_zero_rows(const Tensor<T>& a, double tol) {
    std::size_t n = a.shape().back();
    for (std::size_t r = 0; r < a.numel() / n; ++r) {
        double sq = 0;
        for (std::size_t j = 0; j < n; ++j) sq += double(a.data()[r * n + j]) * a.data()[r * n + j];
        if (sq == 0) continue;
        EXPECT_NEAR(std::sqrt(sq), 1.0, tol) << "row " << r;
    }
}

template <typename T>
double max_asymmetry(const Tensor<T>& a) {
    std::size_t n = a.shape().back();
    double worst = 0;
    for (std::size_t b = 0; b < a.numel() / (n * n); ++b)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                worst = std::max(worst, std::abs(double(a.data()[b * n * n + i * n + j]) -
                                                 a.data()[b * n * n + j * n + i]));
    return worst;
}

// Puts running statistics somewhere other than (0, 1) so eval-mode BN is not the identity.
template <typename T>
void randomize_bn(TopologyLearner<T>& l, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.5, 1.5);
    l.visit_buffers([&](const std::string&, BatchNormState<T>& s) {
        for (auto& m : s.running_mean) m = T(u(rng) - 1.0);
        for (auto& v : s.running_var) v = T(u(rng));
    });
}

TensorD sample(const TensorD& x, std::size_t b) {
    std::size_t per = x.numel() / x.shape()[0];
    Shape s = x.shape();
    s[0] = 1;
    return TensorD(s, std::vector<double>(x.data().begin() + b * per, x.data().begin() + (b + 1) * per));
}

}  // namespace

TEST(L2RowNormalize, AnalyticAndZeroRow) {
    TensorD m({1, 2, 2}, {3, 4, 0, 0});
    auto out = l2_row_normalize(m);
    EXPECT_NEAR(out.data()[0], 0.6, 1e-15);
    EXPECT_NEAR(out.data()[1], 0.8, 1e-15);
    EXPECT_EQ(out.data()[2], 0.0);
    EXPECT_EQ(out.data()[3], 0.0);
    EXPECT_THROW(l2_row_normalize(m, 0.0), ValidationError);
}

TEST(L2RowNormalize, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    auto x = random_tensor({2, 4, 4}, rng);
    EXPECT_LT(gradcheck([](const std::vector<TensorD>& in) { return l2_row_normalize(in[0]); }, {x}, 3), 1e-4);
}

TEST(CeN, ShapeAndUnitRows) {
    std::mt19937_64 rng(1);
    TopologyLearner<float> learner(LearnerVariant::cen, "cen", 64, 16, 25, true, rng);
    auto x = TensorF::normal({2, 64, 16, 25}, 0.f, 1.f, rng);
    for (bool training : {true, false}) {
        auto a = learner.forward(x, training);
        EXPECT_EQ(a.shape(), (Shape{2, 25, 25}));
        expect_unit_or_zero_rows(a, 1e-5);
        for (float v : a.data()) EXPECT_GE(v, 0.0f);
    }
}

TEST(CeN, OutputIsDirected) {
    std::mt19937_64 rng(2);
    TopologyLearner<double> learner(LearnerVariant::cen, "cen", 8, 6, 7, true, rng);
    randomize_bn(learner, rng);
    auto a = learner.forward(random_tensor({3, 8, 6, 7}, rng), false);
    EXPECT_GT(max_asymmetry(a), 1e-6);
}

TEST(CeN, SymmetricVariantIsExactlySymmetricBeforeNormalization) {
    std::mt19937_64 rng(4);
    TopologyLearner<double> learner(LearnerVariant::cen_symmetric, "cen", 8, 6, 7, true, rng);
    randomize_bn(learner, rng);
    auto x = random_tensor({3, 8, 6, 7}, rng);
    auto& cen = *learner.cen();
    auto pre = cen.pre_normalization(x, false);
    EXPECT_EQ(max_asymmetry(pre), 0.0);
    // Differs from the directed pipeline only by (A + A^T) / 2.
    auto raw = cen.adjacency_logits(x, false);
    std::size_t n = 7;
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double want = 0.5 * (raw.at({b, i, j}) + raw.at({b, j, i}));
                EXPECT_EQ(pre.at({b, i, j}), want);
            }
    cen.set_symmetric(false);
    auto directed = cen.pre_normalization(x, false);
    for (std::size_t i = 0; i < raw.numel(); ++i) EXPECT_EQ(directed.data()[i], raw.data()[i]);
}

TEST(CeN, SingleJointSymmetricGivesOne) {
    std::mt19937_64 rng(5);
    TopologyLearner<double> learner(LearnerVariant::cen_symmetric, "cen", 3, 4, 1, true, rng);
    // Positive weights and inputs keep every stage strictly positive.
    learner.visit([](Parameter<double>& p) {
        if (p.name.ends_with(".weight"))
            for (auto& v : p.tensor.mutable_data()) v = std::abs(v) + 0.1;
    });
    auto a = learner.forward(random_tensor({2, 3, 4, 1}, rng, 0.1, 1.0), false);
    EXPECT_EQ(a.shape(), (Shape{2, 1, 1}));
    EXPECT_NEAR(a.data()[0], 1.0, 1e-12);
    EXPECT_NEAR(a.data()[1], 1.0, 1e-12);
}

TEST(CeN, FeatureAndTemporalVariantsShapesAndDeterminism) {
    for (auto v : {LearnerVariant::cen_feature, LearnerVariant::cen_temporal}) {
        std::mt19937_64 r1(9), r2(9);
        TopologyLearner<float> a(v, "l", 64, 16, 25, true, r1);
        TopologyLearner<float> b(v, "l", 64, 16, 25, true, r2);
        std::mt19937_64 rx(10);
        auto x = TensorF::normal({2, 64, 16, 25}, 0.f, 1.f, rx);
        auto ya = a.forward(x, false);
        auto yb = b.forward(x, false);
        EXPECT_EQ(ya.shape(), (Shape{2, 25, 25}));
        for (std::size_t i = 0; i < ya.numel(); ++i) EXPECT_EQ(ya.data()[i], yb.data()[i]);
        expect_unit_or_zero_rows(ya, 1e-5);
    }
}

TEST(CeN, FinalKernelSizesPerVariant) {
    std::mt19937_64 rng(0);
    TopologyLearner<float> joint(LearnerVariant::cen, "a", 64, 16, 25, true, rng);
    TopologyLearner<float> temporal(LearnerVariant::cen_temporal, "b", 64, 16, 25, true, rng);
    TopologyLearner<float> feature(LearnerVariant::cen_feature, "c", 64, 16, 25, true, rng);
    EXPECT_EQ(joint.cen()->final_conv().weight.tensor.numel(), 25u * 625u);
    EXPECT_EQ(temporal.cen()->final_conv().weight.tensor.numel(), 16u * 625u);
    EXPECT_EQ(feature.cen()->final_conv().weight.tensor.numel(), 64u * 625u);
}

TEST(CeN, ParameterNamesFollowSqueezedAxis) {
    std::mt19937_64 rng(0);
    TopologyLearner<float> feature(LearnerVariant::cen_feature, "L", 4, 5, 3, true, rng);
    std::vector<std::string> names;
    feature.visit([&](Parameter<float>& p) { names.push_back(p.name); });
    EXPECT_EQ(names, (std::vector<std::string>{"L.conv_t.weight", "L.conv_t.bn.gamma", "L.conv_t.bn.beta",
                                               "L.conv_n.weight", "L.conv_n.bn.gamma", "L.conv_n.bn.beta",
                                               "L.conv_c.weight", "L.conv_c.bn.gamma", "L.conv_c.bn.beta"}));
}

TEST(CeN, DimensionErrors) {
    std::mt19937_64 rng(0);
    TopologyLearner<float> t(LearnerVariant::cen_temporal, "t", 4, 8, 5, true, rng);
    EXPECT_THROW(t.forward(TensorF::zeros({1, 4, 9, 5}), false), DimensionError);
    EXPECT_THROW(t.forward(TensorF::zeros({1, 4, 8, 6}), false), DimensionError);
    EXPECT_THROW(t.forward(TensorF::zeros({1, 3, 8, 5}), false), DimensionError);
    EXPECT_THROW(parse_learner_variant("cen2"), ValidationError);
    EXPECT_EQ(parse_learner_variant("cen_temporal"), LearnerVariant::cen_temporal);
}

TEST(CeN, FinalReluFlag) {
    std::mt19937_64 r1(6), r2(6);
    TopologyLearner<double> with(LearnerVariant::cen, "c", 5, 4, 6, true, r1);
    TopologyLearner<double> without(LearnerVariant::cen, "c", 5, 4, 6, false, r2);
    std::mt19937_64 rx(7);
    auto x = random_tensor({4, 5, 4, 6}, rx);
    auto a = with.cen()->adjacency_logits(x, true);
    auto b = without.cen()->adjacency_logits(x, true);
    bool saw_negative = false;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        EXPECT_EQ(a.data()[i], std::max(0.0, b.data()[i]));
        saw_negative |= b.data()[i] < 0;
    }
    EXPECT_TRUE(saw_negative);
}

TEST(NonLocal, RowsSumToOne) {
    std::mt19937_64 rng(11);
    TopologyLearner<double> nl(LearnerVariant::nonlocal, "nl", 12, 5, 9, true, rng);
    EXPECT_EQ(nl.nonlocal()->embed_dim(), 4u);
    auto a = nl.forward(random_tensor({3, 12, 5, 9}, rng), true);
    for (std::size_t r = 0; r < 27; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < 9; ++j) s += a.data()[r * 9 + j];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
    EXPECT_EQ(NonLocal<float>::embed_dim_for(64), 16u);
}

TEST(NonLocal, IdenticalJointsGiveUniformRows) {
    std::mt19937_64 rng(12);
    TopologyLearner<double> nl(LearnerVariant::nonlocal, "nl", 6, 3, 5, true, rng);
    std::vector<double> v(6 * 3 * 5);
    for (std::size_t c = 0; c < 6; ++c)
        for (std::size_t t = 0; t < 3; ++t)
            for (std::size_t n = 0; n < 5; ++n) v[(c * 3 + t) * 5 + n] = 0.3 * c - 0.7 * t;
    auto a = nl.forward(TensorD({1, 6, 3, 5}, v), false);
    for (double x : a.data()) EXPECT_NEAR(x, 0.2, 1e-12);
}

TEST(NonLocal, HandSetEmbeddingsSoftmaxArithmetic) {
    std::mt19937_64 rng(0);
    NonLocal<double> nl("nl", 2, rng);
    // With X = I over (channel, joint), the embeddings are the kernels themselves,
    // so theta^T phi = [[0, ln 3], [0, 0]].
    auto th = nl.theta.weight.tensor.mutable_data();
    auto ph = nl.phi.weight.tensor.mutable_data();
    std::fill(th.begin(), th.end(), 0.0);
    std::fill(ph.begin(), ph.end(), 0.0);
    th[0] = 1.0;           // theta[e=0][c=0]
    ph[1] = std::log(3.0); // phi[e=0][c=1]
    auto a = nl.forward(TensorD({1, 2, 1, 2}, {1, 0, 0, 1}));
    EXPECT_NEAR(a.at({0, 0, 0}), 0.25, 1e-12);
    EXPECT_NEAR(a.at({0, 0, 1}), 0.75, 1e-12);
    EXPECT_NEAR(a.at({0, 1, 0}), 0.5, 1e-12);
}

TEST(Learners, BatchInvarianceInEvalMode) {
    for (auto v : {LearnerVariant::cen, LearnerVariant::cen_symmetric, LearnerVariant::cen_feature,
                   LearnerVariant::cen_temporal, LearnerVariant::nonlocal}) {
        std::mt19937_64 rng(13);
        TopologyLearner<double> l(v, "l", 8, 6, 7, true, rng);
        randomize_bn(l, rng);
        auto x = random_tensor({4, 8, 6, 7}, rng);
        auto batched = l.forward(x, false);
        for (std::size_t b = 0; b < 4; ++b) {
            auto single = l.forward(sample(x, b), false);
            for (std::size_t i = 0; i < 49; ++i)
                ASSERT_EQ(batched.data()[b * 49 + i], single.data()[i]) << to_string(v);
        }
        // Two different samples get different graphs.
        double diff = 0;
        for (std::size_t i = 0; i < 49; ++i) diff = std::max(diff, std::abs(batched.data()[i] - batched.data()[49 + i]));
        EXPECT_GT(diff, 0.0) << to_string(v);
    }
}

TEST(Learners, GradientWrtInputMatchesFiniteDifferences) {
    for (auto v : {LearnerVariant::cen, LearnerVariant::cen_symmetric, LearnerVariant::cen_feature,
                   LearnerVariant::cen_temporal, LearnerVariant::nonlocal}) {
        for (std::uint64_t seed : {1, 2}) {
            std::mt19937_64 rng(100 + seed);
            TopologyLearner<double> l(v, "l", 4, 3, 5, true, rng);
            randomize_bn(l, rng);
            auto x = random_tensor({2, 4, 3, 5}, rng);
            double err = gradcheck([&](const std::vector<TensorD>& in) { return l.forward(in[0], false); }, {x},
                                   seed);
            EXPECT_LT(err, 1e-4) << to_string(v) << " seed " << seed;
        }
    }
}
