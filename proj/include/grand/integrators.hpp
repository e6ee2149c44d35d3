#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/LU>

#include "grand/attention.hpp"
#include "grand/error.hpp"
#include "grand/graph.hpp"
#include "grand/sparse.hpp"

namespace grand {

enum class SchemeKind { explicit_euler, implicit_euler, rk4, ab4, am4_pc, dopri5, expm };

inline std::string_view to_string(SchemeKind s) {
    switch (s) {
        case SchemeKind::explicit_euler: return "explicit-euler";
        case SchemeKind::implicit_euler: return "implicit-euler";
        case SchemeKind::rk4: return "rk4";
        case SchemeKind::ab4: return "ab4";
        case SchemeKind::am4_pc: return "am4-pc";
        case SchemeKind::dopri5: return "dopri5";
        case SchemeKind::expm: return "expm";
    }
    return "unknown";
}

inline SchemeKind parse_scheme(std::string_view name) {
    for (auto s : {SchemeKind::explicit_euler, SchemeKind::implicit_euler, SchemeKind::rk4, SchemeKind::ab4,
                   SchemeKind::am4_pc, SchemeKind::dopri5, SchemeKind::expm}) {
        if (to_string(s) == name) return s;
    }
    throw ConfigError("unknown scheme '" + std::string(name) + "'");
}

inline bool is_fixed_step_explicit(SchemeKind s) {
    return s == SchemeKind::explicit_euler || s == SchemeKind::rk4 || s == SchemeKind::ab4;
}

struct SchemeConfig {
    SchemeKind scheme = SchemeKind::rk4;
    double tau = 1.0;      // fixed step size; initial step hint for dopri5
    double horizon = 1.0;  // T
    double atol = 1e-8;
    double rtol = 1e-6;
    double pc_threshold = 1e-9;
    std::size_t pc_max_iters = 100;
    double jacobi_tol = 1e-10;
    std::size_t jacobi_max_iters = 0;  // 0: derived from the contraction bound, at least 10 n
    std::size_t dense_threshold = 512;
    bool expm_fallback = true;

    /// Paired tolerances: atol = ts * 1e-12, rtol = ts * 1e-6.
    SchemeConfig& with_tolerance_scale(double ts) {
        atol = ts * 1e-12;
        rtol = ts * 1e-6;
        return *this;
    }

    void validate() const {
        if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("step size tau must be > 0");
        if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw ConfigError("horizon T must be >= 0");
        if (!(atol > 0.0) || !(rtol > 0.0)) throw ConfigError("atol and rtol must be > 0");
        if (!(pc_threshold > 0.0) || pc_max_iters == 0) throw ConfigError("predictor-corrector settings must be positive");
        if (!(jacobi_tol > 0.0)) throw ConfigError("jacobi_tol must be > 0");
    }
};

/// One accepted step.
struct TraceStep {
    double t = 0.0;
    double tau = 0.0;
    double error = std::numeric_limits<double>::quiet_NaN();      // ||e||_inf, adaptive only
    double tolerance = std::numeric_limits<double>::quiet_NaN();  // max componentwise etol, adaptive only
    std::vector<double> min;  // per channel
    std::vector<double> max;
    std::size_t evaluations = 0;  // cumulative f evaluations
};

struct SolverTrace {
    SchemeKind scheme = SchemeKind::rk4;
    bool adaptive = false;
    std::vector<TraceStep> steps;
    std::size_t evaluations = 0;
    std::size_t rejected = 0;
    std::size_t linear_iterations = 0;  // Jacobi sweeps or corrector passes
};

struct IntegrationResult {
    NodeField state;
    SolverTrace trace;
};

inline std::pair<std::vector<double>, std::vector<double>> channel_bounds(const NodeField& x) {
    std::vector<double> lo(static_cast<std::size_t>(x.cols())), hi(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        lo[static_cast<std::size_t>(c)] = x.rows() ? x.col(c).minCoeff() : 0.0;
        hi[static_cast<std::size_t>(c)] = x.rows() ? x.col(c).maxCoeff() : 0.0;
    }
    return {std::move(lo), std::move(hi)};
}

/// Right-hand side of dX/dt = Abar(X) X, either frozen (linear), rebuilt from
/// the state (nonlinear), or an arbitrary vector field.
class Dynamics {
public:
    using Field = std::function<NodeField(const NodeField&)>;
    using Generator = std::function<SparseMatrix(const NodeField&)>;

    static Dynamics linear(SparseMatrix shifted) {
        Dynamics d;
        d.frozen_ = std::move(shifted);
        return d;
    }

    static Dynamics nonlinear(Generator build) {
        Dynamics d;
        d.generator_ = std::move(build);
        return d;
    }

    static Dynamics field(Field f) {
        Dynamics d;
        d.field_ = std::move(f);
        return d;
    }

    NodeField operator()(const NodeField& x) const {
        ++evaluations_;
        if (frozen_) return frozen_->apply(x);
        if (generator_) return generator_(x).apply(x);
        return field_(x);
    }

    /// Abar at state x. Not available for plain vector fields.
    SparseMatrix generator(const NodeField& x) const {
        if (frozen_) return *frozen_;
        if (generator_) return generator_(x);
        throw ConfigError("scheme needs the diffusion operator, but dynamics is a plain vector field");
    }

    bool is_linear() const { return frozen_.has_value(); }
    const SparseMatrix* frozen() const { return frozen_ ? &*frozen_ : nullptr; }
    std::size_t evaluations() const { return evaluations_; }
    void reset_evaluations() const { evaluations_ = 0; }

private:
    Dynamics() = default;

    std::optional<SparseMatrix> frozen_;
    Generator generator_;
    Field field_;
    mutable std::size_t evaluations_ = 0;
};

// ---------------------------------------------------------------------------
// Single steps

/// X' = (I + tau Abar) X.
inline NodeField explicit_euler_step(const SparseMatrix& shifted, const NodeField& x, double tau) {
    return x + tau * shifted.apply(x);
}

template <class F>
    requires std::invocable<F&, const NodeField&>
NodeField explicit_euler_step(F&& f, const NodeField& x, double tau) {
    return x + tau * f(x);
}

struct LinearSolveStats {
    std::size_t iterations = 0;
    double residual = 0.0;
};

/// Solves (I - tau Abar) X' = X by Jacobi iteration. B = I - tau Abar is strictly
/// diagonally dominant for row-stochastic A, so the sweep contracts in the
/// infinity norm by q = max_i offdiag_i / b_ii < 1.
inline NodeField implicit_euler_step(const SparseMatrix& shifted, const NodeField& x, double tau,
                                     const SchemeConfig& cfg, LinearSolveStats* stats = nullptr) {
    if (!(tau > 0.0)) throw ConfigError("implicit Euler needs tau > 0");
    const auto& p = shifted.pattern();
    const std::size_t n = shifted.rows();
    if (static_cast<std::size_t>(x.rows()) != n) throw DimensionError("implicit Euler: operator and field sizes differ");
    Eigen::VectorXd diag(static_cast<Eigen::Index>(n));
    double contraction = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = 1.0, off = 0.0;
        for (std::size_t k = p.row_begin(i); k < p.row_end(i); ++k) {
            if (p.col_indices[k] == i) {
                d -= tau * shifted.values()[k];
            } else {
                off += std::abs(tau * shifted.values()[k]);
            }
        }
        diag(static_cast<Eigen::Index>(i)) = d;
        contraction = std::max(contraction, off / std::abs(d));
    }
    NodeField y = x;
    auto residual_of = [&](const NodeField& v) -> NodeField { return v - tau * shifted.apply(v) - x; };
    NodeField r = residual_of(y);
    double rnorm = max_abs(r);
    std::size_t cap = cfg.jacobi_max_iters;
    if (cap == 0) {
        cap = 10 * n;
        if (contraction > 0.0 && contraction < 1.0 && rnorm > cfg.jacobi_tol) {
            // Error shrinks by q per sweep; the residual can lag it by cond(B) <= (1 + 2 tau) / margin.
            const double needed = std::log(cfg.jacobi_tol / (rnorm * (1.0 + 2.0 * tau))) / std::log(contraction);
            cap = std::max(cap, static_cast<std::size_t>(std::ceil(needed)) + 10);
        }
    }
    std::size_t it = 0;
    while (rnorm > cfg.jacobi_tol) {
        if (it >= cap) {
            throw SolverDivergence("Jacobi iteration did not reach tolerance " + std::to_string(cfg.jacobi_tol) +
                                       " within " + std::to_string(cap) + " sweeps (residual " +
                                       std::to_string(rnorm) + ")",
                                   rnorm, it);
        }
        for (std::size_t i = 0; i < n; ++i) {
            y.row(static_cast<Eigen::Index>(i)) -= r.row(static_cast<Eigen::Index>(i)) / diag(static_cast<Eigen::Index>(i));
        }
        ++it;
        r = residual_of(y);
        rnorm = max_abs(r);
        if (!std::isfinite(rnorm)) throw SolverDivergence("Jacobi iteration produced a non-finite residual", rnorm, it);
    }
    if (stats) {
        stats->iterations = it;
        stats->residual = rnorm;
    }
    return y;
}

namespace detail {

template <class F>
NodeField rk4_from_first_stage(F&& f, const NodeField& x, const NodeField& k1, double tau) {
    const NodeField k2 = f(x + (0.5 * tau) * k1);
    const NodeField k3 = f(x + (0.5 * tau) * k2);
    const NodeField k4 = f(x + tau * k3);
    return x + (tau / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// Classical four-stage Runge-Kutta step for an autonomous field; t is kept
/// for the call signature only.
template <class F>
NodeField rk4_step(F&& f, const NodeField& x, double /*t*/, double tau) {
    const NodeField k1 = f(x);
    return detail::rk4_from_first_stage(f, x, k1, tau);
}

/// Last four derivative evaluations, newest first.
class DerivativeHistory {
public:
    void push(NodeField f) {
        values_.push_front(std::move(f));
        if (values_.size() > 4) values_.pop_back();
    }
    std::size_t size() const { return values_.size(); }
    /// back(0) = f_k, back(1) = f_{k-1}, ...
    const NodeField& back(std::size_t lag) const { return values_.at(lag); }
    void clear() { values_.clear(); }

private:
    std::deque<NodeField> values_;
};

inline constexpr std::array<double, 4> kAb4Weights{55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0};
/// Implicit weight first, then f_k, f_{k-1}, f_{k-2}.
inline constexpr std::array<double, 4> kAm4Weights{9.0 / 24.0, 19.0 / 24.0, -5.0 / 24.0, 1.0 / 24.0};

/// X' = X + tau (55 f_k - 59 f_{k-1} + 37 f_{k-2} - 9 f_{k-3}) / 24.
inline NodeField ab4_step(const DerivativeHistory& history, const NodeField& x, double tau) {
    if (history.size() < 4) {
        throw ConfigError("AB4 needs four derivative evaluations, have " + std::to_string(history.size()));
    }
    NodeField out = x;
    for (std::size_t l = 0; l < 4; ++l) out += (tau * kAb4Weights[l]) * history.back(l);
    return out;
}

/// AB4 predictor followed by fixed-point passes of the Adams-Moulton corrector
/// X' = X + tau (9 f(X') + 19 f_k - 5 f_{k-1} + f_{k-2}) / 24 until the
/// infinity-norm change drops to cfg.pc_threshold.
template <class F>
NodeField am4_pc_step(F&& f, const DerivativeHistory& history, const NodeField& x, double tau,
                      const SchemeConfig& cfg, std::size_t* passes = nullptr) {
    NodeField current = ab4_step(history, x, tau);
    NodeField explicit_part = x;
    for (std::size_t l = 0; l < 3; ++l) explicit_part += (tau * kAm4Weights[l + 1]) * history.back(l);
    double delta = std::numeric_limits<double>::infinity();
    for (std::size_t it = 1; it <= cfg.pc_max_iters; ++it) {
        NodeField next = explicit_part + (tau * kAm4Weights[0]) * f(current);
        delta = max_abs(next - current);
        current = std::move(next);
        if (!std::isfinite(delta)) break;
        if (delta <= cfg.pc_threshold) {
            if (passes) *passes = it;
            return current;
        }
    }
    throw NonConvergence("Adams-Moulton corrector did not settle within " + std::to_string(cfg.pc_max_iters) +
                             " passes (last change " + std::to_string(delta) + ")",
                         delta);
}

// ---------------------------------------------------------------------------
// Matrix exponential

/// Scaling-and-squaring with diagonal Pade approximants of degree 3..13
/// (Higham 2005 selection thresholds on the 1-norm).
inline Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& a) {
    if (a.rows() != a.cols()) throw DimensionError("matrix_exponential needs a square matrix");
    const Eigen::Index n = a.rows();
    const Eigen::MatrixXd ident = Eigen::MatrixXd::Identity(n, n);
    if (n == 0) return a;
    const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();

    auto pade_low = [&](const Eigen::MatrixXd& m, const double* b, int degree) {
        const Eigen::MatrixXd m2 = m * m;
        Eigen::MatrixXd power = ident;
        Eigen::MatrixXd u_even = b[1] * ident;
        Eigen::MatrixXd v = b[0] * ident;
        for (int k = 2; k <= degree; k += 2) {
            power = power * m2;
            u_even += b[k + 1] * power;
            v += b[k] * power;
        }
        const Eigen::MatrixXd u = m * u_even;
        return Eigen::PartialPivLU<Eigen::MatrixXd>(v - u).solve(v + u).eval();
    };

    static constexpr double b3[] = {120.0, 60.0, 12.0, 1.0};
    static constexpr double b5[] = {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
    static constexpr double b7[] = {17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0};
    static constexpr double b9[] = {17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
                                    2162160.0,     110880.0,     3960.0,       90.0,        1.0};
    static constexpr double b13[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                     1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                     670442572800.0,      33522128640.0,       1323241920.0,
                                     40840800.0,          960960.0,            16380.0,
                                     182.0,               1.0};
    if (norm1 <= 1.495585217958292e-2) return pade_low(a, b3, 3);
    if (norm1 <= 2.539398330063230e-1) return pade_low(a, b5, 5);
    if (norm1 <= 9.504178996162932e-1) return pade_low(a, b7, 7);
    if (norm1 <= 2.097847961257068e0) return pade_low(a, b9, 9);

    constexpr double theta13 = 5.371920351148152;
    int squarings = 0;
    if (norm1 > theta13) squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / theta13))));
    const Eigen::MatrixXd m = a / std::ldexp(1.0, squarings);
    const Eigen::MatrixXd m2 = m * m;
    const Eigen::MatrixXd m4 = m2 * m2;
    const Eigen::MatrixXd m6 = m4 * m2;
    const Eigen::MatrixXd u_inner = b13[13] * m6 + b13[11] * m4 + b13[9] * m2;
    const Eigen::MatrixXd u = m * (m6 * u_inner + b13[7] * m6 + b13[5] * m4 + b13[3] * m2 + b13[1] * ident);
    const Eigen::MatrixXd v_inner = b13[12] * m6 + b13[10] * m4 + b13[8] * m2;
    const Eigen::MatrixXd v = m6 * v_inner + b13[6] * m6 + b13[4] * m4 + b13[2] * m2 + b13[0] * ident;
    Eigen::MatrixXd r = Eigen::PartialPivLU<Eigen::MatrixXd>(v - u).solve(v + u);
    for (int s = 0; s < squarings; ++s) r = r * r;
    return r;
}

// ---------------------------------------------------------------------------
// Adaptive Dormand-Prince 5(4)

namespace dopri {
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                        a65 = -5103.0 / 18656;
// Fifth-order weights (also row 7 of the tableau; the method is FSAL).
inline constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// Embedded fourth-order weights.
inline constexpr double bs1 = 5179.0 / 57600, bs3 = 7571.0 / 16695, bs4 = 393.0 / 640, bs5 = -92097.0 / 339200,
                        bs6 = 187.0 / 2100, bs7 = 1.0 / 40;
}  // namespace dopri

/// Step-size factor clamp(0.9 (1/ratio)^(1/5), 0.2, 5).
inline double dopri5_step_factor(double error_ratio) {
    if (error_ratio <= 0.0) return 5.0;
    return std::clamp(0.9 * std::pow(error_ratio, -0.2), 0.2, 5.0);
}

template <class F>
IntegrationResult dopri5_integrate(F&& f, const NodeField& x0, double horizon, const SchemeConfig& cfg,
                                   std::size_t* eval_counter = nullptr) {
    using namespace dopri;
    IntegrationResult out;
    out.trace.scheme = SchemeKind::dopri5;
    out.trace.adaptive = true;
    out.state = x0;
    if (horizon == 0.0) return out;
    std::size_t evals = 0;
    auto eval = [&](const NodeField& v) {
        ++evals;
        return f(v);
    };

    NodeField x = x0;
    NodeField k1 = eval(x);
    // Initial step from the size of the state and its derivative.
    double tau;
    {
        const double scale = cfg.atol + cfg.rtol * max_abs(x);
        const double d0 = max_abs(x) / scale, d1 = max_abs(k1) / scale;
        tau = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
        tau = std::min({tau, horizon, cfg.tau});
        if (d1 == 0.0) tau = horizon;
    }
    double t = 0.0;
    const double min_tau = 1e-12 * horizon;
    while (t < horizon) {
        bool last = false;
        if (t + tau >= horizon * (1.0 - 1e-14)) {
            tau = horizon - t;
            last = true;
        }
        const NodeField k2 = eval(x + tau * (a21 * k1));
        const NodeField k3 = eval(x + tau * (a31 * k1 + a32 * k2));
        const NodeField k4 = eval(x + tau * (a41 * k1 + a42 * k2 + a43 * k3));
        const NodeField k5 = eval(x + tau * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
        const NodeField k6 = eval(x + tau * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
        NodeField x1 = x + tau * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        const NodeField k7 = eval(x1);
        const NodeField err = tau * ((b1 - bs1) * k1 + (b3 - bs3) * k3 + (b4 - bs4) * k4 + (b5 - bs5) * k5 +
                                     (b6 - bs6) * k6 - bs7 * k7);
        // etol = atol + rtol * max(|x0|, |x1|), componentwise.
        const auto etol = (cfg.atol + cfg.rtol * x.cwiseAbs().cwiseMax(x1.cwiseAbs()).array()).eval();
        const double ratio = (err.cwiseAbs().array() / etol).maxCoeff();
        if (!std::isfinite(ratio)) {
            throw NumericError("dopri5: non-finite error estimate at t=" + std::to_string(t));
        }
        if (ratio <= 1.0) {
            t = last ? horizon : t + tau;
            x = std::move(x1);
            k1 = k7;
            TraceStep step;
            step.t = t;
            step.tau = tau;
            step.error = max_abs(err);
            step.tolerance = etol.maxCoeff();
            std::tie(step.min, step.max) = channel_bounds(x);
            step.evaluations = evals;
            out.trace.steps.push_back(std::move(step));
            if (last) break;
            tau *= dopri5_step_factor(ratio);
        } else {
            ++out.trace.rejected;
            tau *= std::min(1.0, dopri5_step_factor(ratio));
            if (tau < min_tau) {
                throw StiffnessError("dopri5: step size underflow (tau=" + std::to_string(tau) + " at t=" +
                                         std::to_string(t) + ")",
                                     t, tau);
            }
        }
    }
    out.trace.evaluations = evals;
    if (eval_counter) *eval_counter += evals;
    out.state = std::move(x);
    return out;
}

/// X(T) = exp(T Abar) X0 for a frozen operator. Above cfg.dense_threshold nodes
/// this falls back to dopri5 on the same operator when cfg.expm_fallback is set.
inline IntegrationResult expm_solve(const SparseMatrix& shifted, const NodeField& x0, double horizon,
                                    const SchemeConfig& cfg) {
    if (shifted.rows() > cfg.dense_threshold) {
        if (!cfg.expm_fallback) {
            throw ConfigError("expm: " + std::to_string(shifted.rows()) + " nodes exceeds the dense threshold " +
                              std::to_string(cfg.dense_threshold));
        }
        return dopri5_integrate([&](const NodeField& v) { return shifted.apply(v); }, x0, horizon, cfg);
    }
    IntegrationResult out;
    out.trace.scheme = SchemeKind::expm;
    if (horizon == 0.0) {
        out.state = x0;
        return out;
    }
    const Eigen::MatrixXd propagator = matrix_exponential(horizon * shifted.to_dense());
    out.state = (propagator * x0).eval();
    TraceStep step;
    step.t = horizon;
    step.tau = horizon;
    std::tie(step.min, step.max) = channel_bounds(out.state);
    out.trace.steps.push_back(std::move(step));
    return out;
}

// ---------------------------------------------------------------------------
// Fixed-step plan and dispatch

/// ceil(T/tau) steps; every step is tau except a clipped final one.
inline std::vector<double> fixed_step_plan(double horizon, double tau) {
    std::vector<double> steps;
    if (horizon <= 0.0) return steps;
    const auto count = static_cast<std::size_t>(std::max(1.0, std::ceil(horizon / tau - 1e-9)));
    steps.assign(count, tau);
    steps.back() = horizon - static_cast<double>(count - 1) * tau;
    return steps;
}

/// True when a step of the plan is a full uniform step (multistep formulas need
/// equal spacing; a clipped final step is taken with RK4 instead).
inline bool is_uniform_step(double step, double tau) { return std::abs(step - tau) <= 1e-12 * tau; }

inline IntegrationResult integrate(const Dynamics& dynamics, const NodeField& x0, const SchemeConfig& cfg) {
    cfg.validate();
    if (!x0.allFinite()) throw NumericError("initial state is not finite");
    dynamics.reset_evaluations();
    const double horizon = cfg.horizon;

    if (cfg.scheme == SchemeKind::expm) {
        const SparseMatrix* frozen = dynamics.frozen();
        if (!frozen) throw ConfigError("expm needs frozen (linear) attention");
        return expm_solve(*frozen, x0, horizon, cfg);
    }
    if (cfg.scheme == SchemeKind::dopri5) {
        auto result = dopri5_integrate(dynamics, x0, horizon, cfg);
        result.trace.evaluations = dynamics.evaluations();
        return result;
    }

    IntegrationResult out;
    out.trace.scheme = cfg.scheme;
    NodeField x = x0;
    const auto plan = fixed_step_plan(horizon, cfg.tau);
    DerivativeHistory history;
    double t = 0.0;
    for (std::size_t k = 0; k < plan.size(); ++k) {
        const double h = plan[k];
        const bool uniform = is_uniform_step(h, cfg.tau);
        switch (cfg.scheme) {
            case SchemeKind::explicit_euler:
                x = explicit_euler_step(dynamics, x, h);
                break;
            case SchemeKind::implicit_euler: {
                LinearSolveStats stats;
                x = implicit_euler_step(dynamics.generator(x), x, h, cfg, &stats);
                out.trace.linear_iterations += stats.iterations;
                break;
            }
            case SchemeKind::rk4:
                x = rk4_step(dynamics, x, t, h);
                break;
            case SchemeKind::ab4:
            case SchemeKind::am4_pc: {
                history.push(dynamics(x));
                if (history.size() < 4 || !uniform) {
                    x = detail::rk4_from_first_stage(dynamics, x, history.back(0), h);
                } else if (cfg.scheme == SchemeKind::ab4) {
                    x = ab4_step(history, x, h);
                } else {
                    std::size_t passes = 0;
                    x = am4_pc_step(dynamics, history, x, h, cfg, &passes);
                    out.trace.linear_iterations += passes;
                }
                break;
            }
            default:
                throw ConfigError("unsupported fixed-step scheme");
        }
        t = (k + 1 == plan.size()) ? horizon : static_cast<double>(k + 1) * cfg.tau;
        if (!x.allFinite()) {
            throw NumericError(std::string(to_string(cfg.scheme)) + ": state became non-finite at t=" + std::to_string(t));
        }
        TraceStep step;
        step.t = t;
        step.tau = h;
        std::tie(step.min, step.max) = channel_bounds(x);
        step.evaluations = dynamics.evaluations();
        out.trace.steps.push_back(std::move(step));
    }
    out.trace.evaluations = dynamics.evaluations();
    out.state = std::move(x);
    return out;
}

}  // namespace grand
