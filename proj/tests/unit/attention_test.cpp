#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace grand;

namespace {

AttentionParams dot_params(std::size_t heads, Eigen::Index dk, Eigen::Index d, std::mt19937_64& rng, double scale = 1.0) {
    AttentionParams p;
    for (std::size_t h = 0; h < heads; ++h) {
        p.dot_heads.push_back({oracle::random_matrix(dk, d, rng, scale), oracle::random_matrix(dk, d, rng, scale)});
    }
    return p;
}

AttentionParams additive_params(std::size_t heads, Eigen::Index dp, Eigen::Index d, std::mt19937_64& rng) {
    AttentionParams p;
    p.kind = AttentionKind::bahdanau;
    for (std::size_t h = 0; h < heads; ++h) {
        p.additive_heads.push_back({oracle::random_matrix(dp, d, rng), oracle::random_matrix(1, 2 * dp, rng)});
    }
    return p;
}

oracle::Dense mask_of(const Graph& g) {
    oracle::Dense m = oracle::dense_adjacency(g);
    return (m.array() != 0.0).cast<double>();
}

}  // namespace

TEST(ScaledDot, ZeroWeightsGiveUniformRows) {
    std::mt19937_64 rng(1);
    const Graph g = oracle::random_graph(20, 0.2, rng);
    AttentionParams p;
    p.dot_heads.push_back({Matrix::Zero(4, 3), Matrix::Zero(4, 3)});
    const auto a = scaled_dot_attention(p, oracle::random_matrix(20, 3, rng), g.adjacency_ptr());
    for (std::size_t i = 0; i < 20; ++i) {
        for (std::size_t k = a.pattern().row_begin(i); k < a.pattern().row_end(i); ++k) {
            EXPECT_DOUBLE_EQ(a.values()[k], 1.0 / static_cast<double>(g.degree(i)));
        }
    }
}

TEST(ScaledDot, RowsSumToOne) {
    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 10; ++rep) {
        const Graph g = oracle::random_graph(30, 0.15, rng);
        const auto p = dot_params(3, 5, 4, rng, 2.0);
        const auto a = scaled_dot_attention(p, oracle::random_matrix(30, 4, rng, 3.0), g.adjacency_ptr());
        EXPECT_LE(row_stochastic_deviation(a), 1e-9);
        for (double v : a.values()) EXPECT_GE(v, 0.0);
    }
}

TEST(ScaledDot, TriangleMatchesDenseSoftmax) {
    const Graph g = oracle::triangle();
    AttentionParams p;
    p.dot_heads.push_back({Matrix::Ones(1, 1), Matrix::Ones(1, 1)});
    NodeField x(3, 1);
    x << 0.0, 1.0, 2.0;
    const auto a = scaled_dot_attention(p, x, g.adjacency_ptr());
    // Node 0 has logit 0 to both neighbours: uniform.
    EXPECT_DOUBLE_EQ(a.coeff(0, 1), 0.5);
    EXPECT_DOUBLE_EQ(a.coeff(0, 2), 0.5);
    // Node 1: logits 1*0 and 1*2 -> softmax(0, 2).
    EXPECT_NEAR(a.coeff(1, 0), 1.0 / (1.0 + std::exp(2.0)), 1e-15);
    const oracle::Dense dense = oracle::dense_dot_attention(p, x, mask_of(g));
    EXPECT_LE((a.to_dense() - dense).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ScaledDot, RandomMultiHeadMatchesDenseOracle) {
    std::mt19937_64 rng(3);
    const Graph g = oracle::random_graph(25, 0.25, rng);
    const auto p = dot_params(4, 3, 5, rng);
    const NodeField x = oracle::random_matrix(25, 5, rng);
    const auto a = scaled_dot_attention(p, x, g.adjacency_ptr());
    EXPECT_LE((a.to_dense() - oracle::dense_dot_attention(p, x, mask_of(g))).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ScaledDot, SqrtScaleSwitch) {
    std::mt19937_64 rng(4);
    const Graph g = oracle::random_graph(12, 0.4, rng);
    auto p = dot_params(1, 4, 3, rng);
    p.scale = LogitScale::sqrt_key_dim;
    EXPECT_DOUBLE_EQ(p.logit_divisor(), 2.0);
    const NodeField x = oracle::random_matrix(12, 3, rng);
    const auto a = scaled_dot_attention(p, x, g.adjacency_ptr());
    EXPECT_LE((a.to_dense() - oracle::dense_dot_attention(p, x, mask_of(g))).cwiseAbs().maxCoeff(), 1e-12);
    p.scale = LogitScale::key_dim;
    EXPECT_DOUBLE_EQ(p.logit_divisor(), 4.0);
}

TEST(ScaledDot, LargeLogitsStayFinite) {
    std::mt19937_64 rng(5);
    const Graph g = oracle::random_graph(15, 0.3, rng);
    const auto p = dot_params(1, 2, 2, rng, 50.0);
    const auto a = scaled_dot_attention(p, oracle::random_matrix(15, 2, rng, 50.0), g.adjacency_ptr());
    EXPECT_TRUE(a.all_finite());
    EXPECT_LE(row_stochastic_deviation(a), 1e-9);
}

TEST(ScaledDot, IsolatedNodeGetsZeroRow) {
    const std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 1}};
    const Graph g = Graph::from_edges(3, pairs);
    std::mt19937_64 rng(6);
    const auto p = dot_params(1, 2, 2, rng);
    const auto a = scaled_dot_attention(p, oracle::random_matrix(3, 2, rng), g.adjacency_ptr());
    EXPECT_EQ(a.pattern().row_length(2), 0u);
    const SparseMatrix shifted = shift_operator(a);
    EXPECT_EQ(shifted.row_sum(2), 0.0);
    EXPECT_EQ(shifted.coeff(2, 2), 0.0);
}

TEST(ScaledDot, ValidationRejectsBadShapes) {
    AttentionParams p;
    EXPECT_THROW(p.validate(3), ConfigError);
    p.dot_heads.push_back({Matrix::Zero(2, 3), Matrix::Zero(2, 4)});
    EXPECT_THROW(p.validate(3), DimensionError);
    p.dot_heads[0].query = Matrix::Zero(2, 3);
    EXPECT_NO_THROW(p.validate(3));
    p.dot_heads[0].key(0, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(p.validate(3), ConfigError);
}

TEST(Softmax, InvariantToRowConstant) {
    std::mt19937_64 rng(7);
    const Graph g = oracle::random_graph(20, 0.3, rng);
    const auto& p = g.adjacency();
    std::vector<double> logits(p.nnz());
    std::normal_distribution<double> nd(0.0, 2.0);
    for (double& l : logits) l = nd(rng);
    std::vector<double> shifted = logits;
    for (std::size_t i = 0; i < p.rows; ++i) {
        const double c = nd(rng) * 10.0;
        for (std::size_t k = p.row_begin(i); k < p.row_end(i); ++k) shifted[k] += c;
    }
    row_softmax(p, logits);
    row_softmax(p, shifted);
    for (std::size_t k = 0; k < logits.size(); ++k) EXPECT_NEAR(logits[k], shifted[k], 1e-12);
}

TEST(Bahdanau, ZeroScoreGivesUniformRows) {
    std::mt19937_64 rng(8);
    const Graph g = oracle::random_graph(10, 0.3, rng);
    auto p = additive_params(1, 3, 2, rng);
    p.additive_heads[0].score.setZero();
    const auto a = bahdanau_attention(p, oracle::random_matrix(10, 2, rng), g.adjacency_ptr());
    EXPECT_LE((a.to_dense() - uniform_attention(g.adjacency_ptr()).to_dense()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Bahdanau, PathOfFourMatchesDenseOracle) {
    std::mt19937_64 rng(7);
    const Graph g = oracle::path_graph(4);
    const auto p = additive_params(1, 3, 2, rng);
    const NodeField x = oracle::random_matrix(4, 2, rng);
    const auto a = bahdanau_attention(p, x, g.adjacency_ptr());
    EXPECT_LE((a.to_dense() - oracle::dense_additive_attention(p, x, mask_of(g))).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Bahdanau, MultiHeadRowsSumToOneAndMatchOracle) {
    std::mt19937_64 rng(9);
    const Graph g = oracle::random_graph(30, 0.2, rng);
    auto p = additive_params(3, 4, 5, rng);
    p.leaky_slope = 0.1;
    const NodeField x = oracle::random_matrix(30, 5, rng);
    const auto a = attention(p, x, g.adjacency_ptr());
    EXPECT_LE(row_stochastic_deviation(a), 1e-9);
    EXPECT_LE((a.to_dense() - oracle::dense_additive_attention(p, x, mask_of(g))).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MultiHead, SingleHeadIsIdentity) {
    std::mt19937_64 rng(10);
    const Graph g = oracle::random_graph(12, 0.3, rng);
    const auto a = oracle::random_stochastic(g.adjacency_ptr(), rng);
    const std::vector<AttentionOperator> one{a};
    EXPECT_EQ(multi_head_average(one).values(), a.values());
}

TEST(MultiHead, AverageIsStochasticAndMatchesDenseMean) {
    std::mt19937_64 rng(11);
    const Graph g = oracle::random_graph(20, 0.25, rng);
    std::vector<AttentionOperator> heads;
    oracle::Dense mean = oracle::Dense::Zero(20, 20);
    for (int h = 0; h < 4; ++h) {
        heads.push_back(oracle::random_stochastic(g.adjacency_ptr(), rng));
        mean += heads.back().to_dense() / 4.0;
    }
    const auto avg = multi_head_average(heads);
    EXPECT_LE((avg.to_dense() - mean).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE(row_stochastic_deviation(avg), 1e-12);
}

TEST(MultiHead, PatternMismatchThrows) {
    std::mt19937_64 rng(12);
    const Graph g1 = oracle::random_graph(10, 0.3, rng);
    const Graph g2 = oracle::random_graph(10, 0.3, rng);
    const std::vector<AttentionOperator> ops{oracle::random_stochastic(g1.adjacency_ptr(), rng),
                                             oracle::random_stochastic(g2.adjacency_ptr(), rng)};
    EXPECT_THROW(multi_head_average(ops), ConfigError);
}

TEST(Shift, UniformTriangle) {
    const Graph g = oracle::triangle();
    const SparseMatrix s = shift_operator(uniform_attention(g.adjacency_ptr()));
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(s.coeff(i, i), -1.0);
        for (std::size_t j = 0; j < 3; ++j) {
            if (i != j) {
                EXPECT_DOUBLE_EQ(s.coeff(i, j), 0.5);
            }
        }
        EXPECT_NEAR(s.row_sum(i), 0.0, 1e-15);
    }
}

TEST(Shift, SelfLoopEntriesBecomeDiagonalMinusOne) {
    const std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 0}, {0, 1}, {1, 1}};
    const Graph g = Graph::from_edges(2, pairs, {}, GraphOptions{.allow_self_loops = true});
    const SparseMatrix s = shift_operator(uniform_attention(g.adjacency_ptr()));
    EXPECT_DOUBLE_EQ(s.coeff(0, 0), -0.5);
    EXPECT_DOUBLE_EQ(s.coeff(0, 1), 0.5);
}

TEST(Shift, EigenvaluesHaveNonpositiveRealPart) {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = rep == 0 ? 16 : 8 + static_cast<std::size_t>(rep) * 3;
        const Graph g = oracle::random_graph(n, 0.3, rng);
        const auto a = oracle::random_stochastic(g.adjacency_ptr(), rng);
        const SparseMatrix s = shift_operator(a);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(s.row_sum(i), 0.0, 1e-9);
        Eigen::EigenSolver<oracle::Dense> es(s.to_dense(), false);
        EXPECT_LE(es.eigenvalues().real().maxCoeff(), 1e-8);
    }
}
