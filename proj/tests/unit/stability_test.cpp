#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace grand;

namespace {

AttentionOperator two_node_with_self(double self) {
    auto p = std::make_shared<SparsityPattern>(SparsityPattern::from_rows({{0, 1}, {0, 1}}));
    return AttentionOperator(p, {self, 1.0 - self, 1.0 - self, self});
}

AttentionOperator self_loops_only(std::size_t n) {
    std::vector<std::vector<std::size_t>> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = {i};
    return AttentionOperator(std::make_shared<SparsityPattern>(SparsityPattern::from_rows(std::move(rows))),
                             std::vector<double>(n, 1.0));
}

}  // namespace

TEST(ExplicitStability, IdentityAttentionHasUnitRadius) {
    const auto r = verify_explicit_stability(self_loops_only(5), 3.0);
    EXPECT_NEAR(r.spectral_radius_estimate, 1.0, 1e-12);
    EXPECT_EQ(r.nonneg_violations, 0u);
    EXPECT_LE(r.row_sum_max_dev, 1e-15);
}

TEST(ExplicitStability, TriangleAtUnitStepIsAttentionItself) {
    const auto a = uniform_attention(oracle::triangle().adjacency_ptr());
    const auto r = verify_explicit_stability(a, 1.0);
    EXPECT_NEAR(r.spectral_radius_estimate, 1.0, 1e-6);
    EXPECT_EQ(r.nonneg_violations, 0u);
    EXPECT_LE(r.row_sum_max_dev, 1e-15);
    EXPECT_TRUE(r.dense_checked);
    EXPECT_LE(r.max_real_eigenvalue, 1e-12);
}

TEST(ExplicitStability, StepBoundFromSmallestSelfWeight) {
    // Q is nonnegative iff tau <= 1 / (1 - 0.3).
    const auto a = two_node_with_self(0.3);
    EXPECT_EQ(verify_explicit_stability(a, 0.5).nonneg_violations, 0u);
    EXPECT_EQ(verify_explicit_stability(a, 1.2).nonneg_violations, 0u);
    EXPECT_EQ(verify_explicit_stability(a, 1.0 / 0.7).nonneg_violations, 0u);
    EXPECT_EQ(verify_explicit_stability(a, 1.5).nonneg_violations, 2u);
}

TEST(ExplicitStability, RandomOperatorsKeepUnitRowSumsBelowBound) {
    std::mt19937_64 rng(31);
    for (int rep = 0; rep < 10; ++rep) {
        const Graph g = oracle::random_graph(30, 0.2, rng);
        const auto a = oracle::random_stochastic(g.adjacency_ptr(), rng);
        const auto r = verify_explicit_stability(a, 1.0);
        EXPECT_EQ(r.nonneg_violations, 0u);
        EXPECT_LE(r.row_sum_max_dev, 1e-14);
        EXPECT_LE(r.spectral_radius_estimate, 1.0 + 1e-6);
        EXPECT_LE(r.max_real_eigenvalue, 1e-10);
    }
}

TEST(ExplicitStability, PathAboveBoundViolatesEnvelope) {
    const Graph g = oracle::path_graph(3);
    const auto a = uniform_attention(g.adjacency_ptr());
    EXPECT_GT(verify_explicit_stability(a, 1.9).nonneg_violations, 0u);
    NodeField x0(3, 1);
    x0 << 1.0, 0.0, 0.0;
    SchemeConfig cfg;
    cfg.scheme = SchemeKind::explicit_euler;
    cfg.tau = 1.9;
    cfg.horizon = 3.8;
    const auto res = integrate(Dynamics::linear(shift_operator(a)), x0, cfg);
    EXPECT_FALSE(envelope_monitor(res.trace, x0).empty());
}

TEST(ImplicitStability, DominanceMarginIsOneForAnyStep) {
    std::mt19937_64 rng(32);
    const Graph g = oracle::random_graph(20, 0.3, rng);
    const auto a = oracle::random_stochastic(g.adjacency_ptr(), rng);
    for (double tau : {0.1, 1.0, 10.0, 1000.0}) {
        const auto r = verify_implicit_stability(a, tau);
        EXPECT_NEAR(r.diag_dominance_margin, 1.0, 1e-9) << tau;
        EXPECT_LE(r.row_sum_max_dev, 1e-9);
    }
    EXPECT_NEAR(verify_implicit_stability(two_node_with_self(0.3), 1000.0).diag_dominance_margin, 1.0, 1e-9);
}

TEST(ImplicitStability, DenseInverseIsMarkov) {
    std::mt19937_64 rng(33);
    const Graph g = oracle::random_graph(32, 0.2, rng);
    const auto a = oracle::random_stochastic(g.adjacency_ptr(), rng);
    const auto r = verify_implicit_stability(a, 25.0);
    ASSERT_TRUE(r.dense_checked);
    EXPECT_GE(r.inverse_min_entry, -1e-12);
    EXPECT_LE(r.inverse_row_sum_max_dev, 1e-10);
    // Independent check of the same inverse.
    const oracle::Dense b = oracle::Dense::Identity(32, 32) - 25.0 * shift_operator(a).to_dense();
    const oracle::Dense inv = b.inverse();
    EXPECT_NEAR(inv.minCoeff(), r.inverse_min_entry, 1e-12);
}

TEST(ImplicitStability, LargeGraphsSkipDenseChecks) {
    std::mt19937_64 rng(34);
    const Graph g = oracle::random_graph(100, 0.05, rng);
    const auto r = verify_implicit_stability(uniform_attention(g.adjacency_ptr()), 2.0);
    EXPECT_FALSE(r.dense_checked);
    EXPECT_TRUE(std::isnan(r.inverse_min_entry));
    const auto j = to_json(r);
    EXPECT_TRUE(j["inverse_min_entry"].is_null());
}

TEST(SpectralRadius, MatchesDenseEigenvalues) {
    const auto path = shift_operator(uniform_attention(oracle::path_graph(2).adjacency_ptr()));
    EXPECT_NEAR(spectral_radius(path).value, 2.0, 1e-8);
    std::mt19937_64 rng(35);
    const Graph g = oracle::random_graph(40, 0.15, rng);
    const auto shifted = shift_operator(uniform_attention(g.adjacency_ptr()));
    Eigen::EigenSolver<oracle::Dense> es(shifted.to_dense(), false);
    const double ref = es.eigenvalues().cwiseAbs().maxCoeff();
    const auto est = spectral_radius(shifted, 20000, 1e-12);
    EXPECT_NEAR(est.value, ref, 1e-4 * ref);
}

TEST(SpectralRadius, ZeroOperator) {
    const auto est = spectral_radius(shift_operator(self_loops_only(4)));
    EXPECT_EQ(est.value, 0.0);
    EXPECT_TRUE(est.converged);
}
