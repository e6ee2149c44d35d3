#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "grand/attention.hpp"
#include "grand/integrators.hpp"
#include "grand/sparse.hpp"

namespace grand {

struct EnvelopeViolation {
    std::size_t step = 0;
    std::size_t channel = 0;
    double amount = 0.0;
};

struct StabilityReport {
    double spectral_radius_estimate = 0.0;
    bool spectral_radius_converged = false;
    double row_sum_max_dev = 0.0;
    std::size_t nonneg_violations = 0;
    double diag_dominance_margin = std::numeric_limits<double>::infinity();
    // Dense checks, only filled for n <= kDenseCheckLimit.
    bool dense_checked = false;
    double inverse_min_entry = std::numeric_limits<double>::quiet_NaN();
    double inverse_row_sum_max_dev = std::numeric_limits<double>::quiet_NaN();
    double max_real_eigenvalue = std::numeric_limits<double>::quiet_NaN();
    std::vector<EnvelopeViolation> envelope_violations;
};

inline constexpr std::size_t kDenseCheckLimit = 64;

inline nlohmann::json to_json(const StabilityReport& r) {
    auto num = [](double v) -> nlohmann::json {
        if (std::isnan(v)) return nullptr;
        return v;
    };
    nlohmann::json violations = nlohmann::json::array();
    for (const auto& v : r.envelope_violations) violations.push_back({{"step", v.step}, {"channel", v.channel}, {"amount", v.amount}});
    return {{"spectral_radius_estimate", num(r.spectral_radius_estimate)},
            {"spectral_radius_converged", r.spectral_radius_converged},
            {"row_sum_max_dev", num(r.row_sum_max_dev)},
            {"nonneg_violations", r.nonneg_violations},
            {"diag_dominance_margin", std::isinf(r.diag_dominance_margin) ? nlohmann::json(nullptr) : nlohmann::json(r.diag_dominance_margin)},
            {"dense_checked", r.dense_checked},
            {"inverse_min_entry", num(r.inverse_min_entry)},
            {"inverse_row_sum_max_dev", num(r.inverse_row_sum_max_dev)},
            {"max_real_eigenvalue", num(r.max_real_eigenvalue)},
            {"envelope_violations", violations}};
}

struct SpectralEstimate {
    double value = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

/// Power iteration from a seeded random start. The estimate is the geometric
/// mean growth over a trailing window, which also settles when the dominant
/// eigenvalues are a complex pair; `converged` reports whether successive
/// estimates agreed to tol.
inline SpectralEstimate spectral_radius(const SparseMatrix& m, std::size_t iters = 1000, double tol = 1e-8,
                                        std::uint64_t seed = 0x5eed) {
    SpectralEstimate est;
    const auto n = static_cast<Eigen::Index>(m.rows());
    if (n == 0) return est;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.5, 1.5);
    NodeField v(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) v(i, 0) = unit(rng);
    v /= v.norm();
    constexpr std::size_t window = 8;
    std::vector<double> log_growth;
    log_growth.reserve(iters);
    double previous = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t k = 0; k < iters; ++k) {
        NodeField w = m.apply(v);
        const double norm = w.norm();
        est.iterations = k + 1;
        if (norm == 0.0) {
            est.value = 0.0;
            est.converged = true;
            return est;
        }
        log_growth.push_back(std::log(norm));
        v = w / norm;
        if (log_growth.size() >= window) {
            double s = 0.0;
            for (std::size_t j = log_growth.size() - window; j < log_growth.size(); ++j) s += log_growth[j];
            est.value = std::exp(s / static_cast<double>(window));
            if (std::isfinite(previous) && std::abs(est.value - previous) <= tol * std::max(1.0, est.value)) {
                est.converged = true;
                return est;
            }
            previous = est.value;
        }
    }
    if (log_growth.size() < window) est.value = std::exp(log_growth.back());
    return est;
}

/// Largest real part over the dense spectrum of Abar.
inline double max_real_eigenvalue(const SparseMatrix& m) {
    const Eigen::MatrixXd dense = m.to_dense();
    if (dense.rows() == 0) return 0.0;
    Eigen::EigenSolver<Eigen::MatrixXd> solver(dense, false);
    return solver.eigenvalues().real().maxCoeff();
}

/// Checks Q = I + tau Abar: unit row sums and entrywise nonnegativity. Zero
/// violations exactly when tau <= 1 / (1 - min_i a_ii).
inline StabilityReport verify_explicit_stability(const AttentionOperator& a, double tau) {
    StabilityReport r;
    const SparseMatrix shifted = shift_operator(a);
    const SparseMatrix q = shifted.scaled_plus_identity(tau, 1.0);
    for (std::size_t i = 0; i < q.rows(); ++i) {
        r.row_sum_max_dev = std::max(r.row_sum_max_dev, std::abs(q.row_sum(i) - 1.0));
        for (std::size_t k = q.pattern().row_begin(i); k < q.pattern().row_end(i); ++k) {
            if (q.values()[k] < 0.0) ++r.nonneg_violations;
        }
    }
    const auto rho = spectral_radius(q);
    r.spectral_radius_estimate = rho.value;
    r.spectral_radius_converged = rho.converged;
    if (a.rows() <= kDenseCheckLimit) {
        r.dense_checked = true;
        r.max_real_eigenvalue = max_real_eigenvalue(shifted);
    }
    return r;
}

/// Checks B = I - tau Abar: diagonal dominance margin min_i |b_ii| - sum_j |b_ij|,
/// and for small n that B^{-1} is a Markov matrix.
inline StabilityReport verify_implicit_stability(const AttentionOperator& a, double tau) {
    StabilityReport r;
    const SparseMatrix shifted = shift_operator(a);
    const SparseMatrix b = shifted.scaled_plus_identity(-tau, 1.0);
    for (std::size_t i = 0; i < b.rows(); ++i) {
        double diag = 0.0, off = 0.0;
        for (std::size_t k = b.pattern().row_begin(i); k < b.pattern().row_end(i); ++k) {
            if (b.pattern().col_indices[k] == i) {
                diag += b.values()[k];
            } else {
                off += std::abs(b.values()[k]);
            }
        }
        r.diag_dominance_margin = std::min(r.diag_dominance_margin, std::abs(diag) - off);
        r.row_sum_max_dev = std::max(r.row_sum_max_dev, std::abs(b.row_sum(i) - 1.0));
    }
    const auto rho = spectral_radius(shifted);
    r.spectral_radius_estimate = rho.value;
    r.spectral_radius_converged = rho.converged;
    if (a.rows() <= kDenseCheckLimit) {
        r.dense_checked = true;
        const Eigen::MatrixXd inv = b.to_dense().inverse();
        r.inverse_min_entry = inv.minCoeff();
        r.inverse_row_sum_max_dev = (inv.rowwise().sum().array() - 1.0).abs().maxCoeff();
        r.max_real_eigenvalue = max_real_eigenvalue(shifted);
    }
    return r;
}

/// Slack used by envelope_monitor: 10 etol for adaptive traces, 1e-9 otherwise.
inline double envelope_slack(const SolverTrace& trace, std::size_t step) {
    if (trace.adaptive && std::isfinite(trace.steps[step].tolerance)) return 10.0 * trace.steps[step].tolerance;
    return 1e-9;
}

/// Lists steps where a channel's max rose or min fell relative to the previous
/// accepted state (the initial state for step 0) by more than the slack.
inline std::vector<EnvelopeViolation> envelope_monitor(const SolverTrace& trace, const NodeField& x0) {
    std::vector<EnvelopeViolation> out;
    auto [lo, hi] = channel_bounds(x0);
    for (std::size_t s = 0; s < trace.steps.size(); ++s) {
        const auto& step = trace.steps[s];
        const double slack = envelope_slack(trace, s);
        for (std::size_t c = 0; c < hi.size() && c < step.max.size(); ++c) {
            const double rise = step.max[c] - hi[c];
            const double drop = lo[c] - step.min[c];
            const double amount = std::max(rise, drop);
            if (amount > slack) out.push_back({s, c, amount});
            hi[c] = step.max[c];
            lo[c] = step.min[c];
        }
    }
    return out;
}

}  // namespace grand
