#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "grand/attention.hpp"
#include "grand/error.hpp"
#include "grand/graph.hpp"
#include "grand/parallel.hpp"

namespace grand {

/// Rewiring pipeline: optional personalized-PageRank densification (done once,
/// as preprocessing) followed by attention thresholding at t = 0.
struct RewireConfig {
    bool ppr = true;
    double alpha = 0.15;       // teleport probability
    std::size_t top_k = 64;    // PPR coefficients kept per node
    double rho = 0.0;          // attention threshold, edges kept iff a_ij > rho
    double ppr_tol = 1e-8;
    std::size_t ppr_max_iters = 10000;

    void validate() const {
        if (ppr) {
            if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("PPR teleport alpha must lie in (0,1)");
            if (top_k < 1) throw ConfigError("top_k must be >= 1");
        }
        if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("attention threshold rho must lie in [0,1)");
    }
};

/// Personalized-PageRank vector seeded at `source`: the row of
/// alpha (I - (1 - alpha) D^{-1} W)^{-1}, by power iteration to `tol` in the 1-norm.
/// Nodes without neighbours keep their walk in place.
inline std::vector<double> ppr_vector(const Graph& g, std::size_t source, double alpha, double tol,
                                      std::size_t max_iters) {
    const std::size_t n = g.num_nodes();
    const auto& adj = g.adjacency();
    std::vector<double> weighted_degree(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = adj.row_begin(i); k < adj.row_end(i); ++k) weighted_degree[i] += g.entry_weight(k);
    }
    std::vector<double> pi(n, 0.0), next(n, 0.0);
    pi[source] = 1.0;
    for (std::size_t it = 0; it < max_iters; ++it) {
        std::fill(next.begin(), next.end(), 0.0);
        next[source] = alpha;
        for (std::size_t i = 0; i < n; ++i) {
            if (pi[i] == 0.0) continue;
            const double mass = (1.0 - alpha) * pi[i];
            if (weighted_degree[i] == 0.0) {
                next[i] += mass;
                continue;
            }
            for (std::size_t k = adj.row_begin(i); k < adj.row_end(i); ++k) {
                next[adj.col_indices[k]] += mass * g.entry_weight(k) / weighted_degree[i];
            }
        }
        double change = 0.0;
        for (std::size_t i = 0; i < n; ++i) change += std::abs(next[i] - pi[i]);
        pi.swap(next);
        if (change <= tol) return pi;
    }
    throw NumericError("PPR power iteration from node " + std::to_string(source) + " did not converge");
}

/// Keeps the K largest PPR coefficients of every node (ties broken by lower
/// index), then symmetrizes by union with weight max(s_ij, s_ji). Self-loops are
/// allowed in the result.
inline Graph ppr_densify(const Graph& g, double alpha, std::size_t top_k, double tol = 1e-8,
                         std::size_t max_iters = 10000) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("PPR teleport alpha must lie in (0,1)");
    if (top_k < 1) throw ConfigError("top_k must be >= 1");
    const std::size_t n = g.num_nodes();
    std::vector<std::vector<std::pair<std::size_t, double>>> kept(n);
    parallel_for(n, [&](std::size_t s) {
        const auto pi = ppr_vector(g, s, alpha, tol, max_iters);
        std::vector<std::size_t> idx;
        for (std::size_t j = 0; j < n; ++j) {
            if (pi[j] > 0.0) idx.push_back(j);
        }
        const std::size_t keep = std::min(top_k, idx.size());
        std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(),
                          [&](std::size_t a, std::size_t b) {
                              // Scores within rounding of each other tie; the lower index wins.
                              if (std::abs(pi[a] - pi[b]) > 1e-9 * std::max(pi[a], pi[b])) return pi[a] > pi[b];
                              return a < b;
                          });
        for (std::size_t t = 0; t < keep; ++t) kept[s].emplace_back(idx[t], pi[idx[t]]);
    }, 16);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<double> weights;
    {
        // Union symmetrization: merge (i,j) and (j,i) keeping the larger score.
        std::vector<std::pair<Edge, double>> canon;
        for (std::size_t i = 0; i < n; ++i) {
            for (auto [j, w] : kept[i]) canon.push_back({Edge{std::min(i, j), std::max(i, j)}, w});
        }
        std::sort(canon.begin(), canon.end(), [](const auto& a, const auto& b) {
            if (a.first.i != b.first.i) return a.first.i < b.first.i;
            if (a.first.j != b.first.j) return a.first.j < b.first.j;
            return a.second > b.second;
        });
        for (std::size_t t = 0; t < canon.size(); ++t) {
            if (t > 0 && canon[t].first == canon[t - 1].first) continue;
            pairs.emplace_back(canon[t].first.i, canon[t].first.j);
            weights.push_back(canon[t].second);
        }
    }
    return Graph::from_edges(n, pairs, weights, Graph::Options{.allow_self_loops = true});
}

/// E' = {(i,j) : a_ij > rho}. Nodes that lose every edge keep a self-loop.
inline PatternPtr threshold_rewire(const AttentionOperator& a, double rho) {
    if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("attention threshold rho must lie in [0,1)");
    const auto& p = a.pattern();
    std::vector<std::vector<std::size_t>> rows(p.rows);
    for (std::size_t i = 0; i < p.rows; ++i) {
        for (std::size_t k = p.row_begin(i); k < p.row_end(i); ++k) {
            if (a.values()[k] > rho) rows[i].push_back(p.col_indices[k]);
        }
        if (rows[i].empty() && p.row_length(i) > 0) rows[i].push_back(i);
    }
    return std::make_shared<SparsityPattern>(SparsityPattern::from_rows(std::move(rows)));
}

/// Restricts A to a sub-pattern and renormalizes each row to sum to one.
/// Entries absent from A (the fallback self-loops) take the whole row mass.
inline AttentionOperator restrict_and_normalize(const AttentionOperator& a, const PatternPtr& pattern) {
    std::vector<double> v(pattern->nnz(), 0.0);
    for (std::size_t i = 0; i < pattern->rows; ++i) {
        double s = 0.0;
        for (std::size_t k = pattern->row_begin(i); k < pattern->row_end(i); ++k) {
            v[k] = a.coeff(i, pattern->col_indices[k]);
            s += v[k];
        }
        const std::size_t len = pattern->row_length(i);
        for (std::size_t k = pattern->row_begin(i); k < pattern->row_end(i); ++k) {
            v[k] = s > 0.0 ? v[k] / s : 1.0 / static_cast<double>(len);
        }
    }
    return AttentionOperator(pattern, std::move(v));
}

}  // namespace grand
