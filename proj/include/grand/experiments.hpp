#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "grand/data.hpp"
#include "grand/error.hpp"
#include "grand/integrators.hpp"
#include "grand/model.hpp"

namespace grand {

struct SolverRun {
    SchemeKind scheme = SchemeKind::rk4;
    double tau = 0.0;
    double seconds = 0.0;
    double error = std::numeric_limits<double>::quiet_NaN();  // relative inf-norm error vs reference
    bool diverged = false;
    std::string failure;  // solver message when it threw
};

/// A run counts as diverged when the solver throws, the state stops being
/// finite, or its relative error against the reference exceeds 1.
inline constexpr double kDivergenceThreshold = 1.0;

/// Runs every (scheme, tau) pair on the frozen system dX/dt = Abar X from x0 to
/// `horizon`, scoring each against a dopri5 reference at atol = rtol = 1e-10.
inline std::vector<SolverRun> solver_compare(const SparseMatrix& shifted, const NodeField& x0, double horizon,
                                             const std::vector<SchemeKind>& schemes, const std::vector<double>& taus,
                                             const SchemeConfig& base = {}) {
    const Dynamics dyn = Dynamics::linear(shifted);
    SchemeConfig ref_cfg = base;
    ref_cfg.scheme = SchemeKind::dopri5;
    ref_cfg.horizon = horizon;
    ref_cfg.atol = 1e-10;
    ref_cfg.rtol = 1e-10;
    ref_cfg.tau = horizon > 0.0 ? horizon : 1.0;
    const NodeField reference = integrate(dyn, x0, ref_cfg).state;
    const double scale = std::max(max_abs(reference), std::numeric_limits<double>::min());

    std::vector<SolverRun> out;
    for (auto scheme : schemes) {
        for (double tau : taus) {
            SchemeConfig cfg = base;
            cfg.scheme = scheme;
            cfg.tau = tau;
            cfg.horizon = horizon;
            SolverRun run;
            run.scheme = scheme;
            run.tau = tau;
            const auto start = std::chrono::steady_clock::now();
            try {
                const NodeField x = integrate(dyn, x0, cfg).state;
                run.error = max_abs(x - reference) / scale;
                run.diverged = !std::isfinite(run.error) || run.error > kDivergenceThreshold;
            } catch (const NumericError& e) {
                run.diverged = true;
                run.failure = e.what();
            }
            run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            out.push_back(std::move(run));
        }
    }
    return out;
}

struct RewirePoint {
    std::size_t top_k = 0;
    std::size_t edges = 0;          // undirected edges of the densified graph
    std::size_t pattern_nnz = 0;    // directed entries diffused over
    double seconds_per_epoch = 0.0; // fastest of the timed epochs
    double val_acc = 0.0;
    double test_acc = 0.0;
};

/// grand-nl-rw with PPR top-K densification for each K. Accuracy is the test
/// accuracy at the best-validation epoch. Time per epoch (rewire, forward,
/// backward, update from the initial model) is the fastest of `timing_epochs`
/// rounds; each round times every K once, so slow spells hit all K alike.
inline std::vector<RewirePoint> rewire_sweep(const ModelConfig& base, const Dataset& ds, const std::vector<std::size_t>& ks,
                                             const TrainConfig& cfg, std::uint64_t init_seed,
                                             std::size_t timing_epochs = 20) {
    std::vector<RewirePoint> out;
    std::vector<PreparedGraph> graphs;
    std::vector<GrandModel> initial;
    for (std::size_t k : ks) {
        ModelConfig mc = base;
        mc.variant = Variant::grand_nl_rw;
        mc.rewire.ppr = true;
        mc.rewire.top_k = k;
        graphs.push_back(prepare_graph(mc, ds.graph));
        initial.push_back(GrandModel::initialize(mc, init_seed));
        const auto result = train(initial.back(), graphs.back(), ds, cfg);
        out.push_back({k, graphs.back().graph.num_edges(), 0, std::numeric_limits<double>::infinity(),
                       result.best_val_acc, result.test_acc});
    }
    for (std::size_t r = 0; r < std::max<std::size_t>(1, timing_epochs); ++r) {
        for (std::size_t i = 0; i < ks.size(); ++i) {
            GrandModel timed = initial[i];
            Optimizer opt(cfg);
            const auto start = std::chrono::steady_clock::now();
            const PatternPtr pattern = diffusion_pattern(timed, graphs[i], ds.features);
            const auto lg = loss_and_gradients(timed, pattern, ds.features, ds.labels, ds.splits.train);
            opt.step(timed, lg.grads);
            const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            out[i].seconds_per_epoch = std::min(out[i].seconds_per_epoch, dt);
            out[i].pattern_nnz = pattern->nnz();
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Minimal SVG line chart

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct ChartOptions {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_x = false;
    bool log_y = false;
    int width = 640;
    int height = 400;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace detail

/// Points with non-finite coordinates (or nonpositive ones on a log axis) are skipped.
inline std::string line_chart_svg(const std::vector<Series>& series, const ChartOptions& opt) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
    auto tx = [&](double v) { return opt.log_x ? std::log10(v) : v; };
    auto ty = [&](double v) { return opt.log_y ? std::log10(v) : v; };
    auto usable = [&](double x, double y) {
        return std::isfinite(x) && std::isfinite(y) && (!opt.log_x || x > 0.0) && (!opt.log_y || y > 0.0);
    };
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!usable(s.x[i], s.y[i])) continue;
            x0 = std::min(x0, tx(s.x[i]));
            x1 = std::max(x1, tx(s.x[i]));
            y0 = std::min(y0, ty(s.y[i]));
            y1 = std::max(y1, ty(s.y[i]));
        }
    }
    if (!std::isfinite(x0)) x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
    if (x1 == x0) x1 = x0 + 1.0;
    if (y1 == y0) y1 = y0 + 1.0;
    const double left = 70, right = 150, top = 40, bottom = 50;
    const double pw = opt.width - left - right, ph = opt.height - top - bottom;
    auto px = [&](double v) { return left + (tx(v) - x0) / (x1 - x0) * pw; };
    auto py = [&](double v) { return top + ph - (ty(v) - y0) / (y1 - y0) * ph; };
    auto tick = [](double v, bool log) {
        std::ostringstream s;
        s.precision(3);
        s << (log ? std::pow(10.0, v) : v);
        return s.str();
    };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\"" << opt.height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << left + pw / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
        << detail::xml_escape(opt.title) << "</text>\n";
    svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double fx = x0 + (x1 - x0) * k / 4.0, fy = y0 + (y1 - y0) * k / 4.0;
        const double sx = left + pw * k / 4.0, sy = top + ph - ph * k / 4.0;
        svg << "<text x=\"" << sx << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << tick(fx, opt.log_x)
            << "</text>\n";
        svg << "<text x=\"" << left - 6 << "\" y=\"" << sy + 4 << "\" text-anchor=\"end\">" << tick(fy, opt.log_y)
            << "</text>\n";
    }
    svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << opt.height - 10 << "\" text-anchor=\"middle\">"
        << detail::xml_escape(opt.x_label) << "</text>\n";
    svg << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
        << detail::xml_escape(opt.y_label) << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = palette[s % std::size(palette)];
        std::ostringstream pts;
        for (std::size_t i = 0; i < std::min(series[s].x.size(), series[s].y.size()); ++i) {
            if (!usable(series[s].x[i], series[s].y[i])) continue;
            pts << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
            svg << "<circle cx=\"" << px(series[s].x[i]) << "\" cy=\"" << py(series[s].y[i]) << "\" r=\"3\" fill=\""
                << color << "\"/>\n";
        }
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << pts.str()
            << "\"/>\n";
        svg << "<text x=\"" << left + pw + 10 << "\" y=\"" << top + 14 + 16 * static_cast<double>(s) << "\" fill=\""
            << color << "\">" << detail::xml_escape(series[s].name) << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace grand
