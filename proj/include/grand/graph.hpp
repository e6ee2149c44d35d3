#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "grand/error.hpp"

namespace grand {

/// Row-major dense matrix. Node features, parameters and gradients all use it.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// n x d node features X(t).
using NodeField = Matrix;

/// Compressed-row sparsity structure of a square operator.
/// Column indices are sorted within each row.
struct SparsityPattern {
    std::size_t rows = 0;
    std::vector<std::size_t> row_offsets{0};
    std::vector<std::size_t> col_indices;

    std::size_t nnz() const { return col_indices.size(); }
    std::size_t row_begin(std::size_t i) const { return row_offsets[i]; }
    std::size_t row_end(std::size_t i) const { return row_offsets[i + 1]; }
    std::size_t row_length(std::size_t i) const { return row_offsets[i + 1] - row_offsets[i]; }

    /// Entry index of (i, j), if present.
    std::optional<std::size_t> find(std::size_t i, std::size_t j) const {
        auto first = col_indices.begin() + static_cast<std::ptrdiff_t>(row_offsets[i]);
        auto last = col_indices.begin() + static_cast<std::ptrdiff_t>(row_offsets[i + 1]);
        auto it = std::lower_bound(first, last, j);
        if (it == last || *it != j) return std::nullopt;
        return static_cast<std::size_t>(it - col_indices.begin());
    }

    /// Builds a pattern from per-row column lists (sorted and deduplicated here).
    static SparsityPattern from_rows(std::vector<std::vector<std::size_t>> rows_cols) {
        SparsityPattern p;
        p.rows = rows_cols.size();
        p.row_offsets.assign(p.rows + 1, 0);
        for (std::size_t i = 0; i < p.rows; ++i) {
            auto& r = rows_cols[i];
            std::sort(r.begin(), r.end());
            r.erase(std::unique(r.begin(), r.end()), r.end());
            for (std::size_t j : r) {
                if (j >= p.rows) throw DimensionError("pattern column index out of range");
            }
            p.row_offsets[i + 1] = p.row_offsets[i] + r.size();
        }
        p.col_indices.reserve(p.row_offsets.back());
        for (auto& r : rows_cols) p.col_indices.insert(p.col_indices.end(), r.begin(), r.end());
        return p;
    }

    bool operator==(const SparsityPattern&) const = default;
};

using PatternPtr = std::shared_ptr<const SparsityPattern>;

/// Undirected edge in canonical orientation (i <= j; i == j only for self-loops).
struct Edge {
    std::size_t i = 0;
    std::size_t j = 0;
    bool operator==(const Edge&) const = default;
};

/// Immutable undirected graph. Each undirected edge is stored once; the
/// compressed adjacency lists both orientations and maps every entry back
/// to its edge with an orientation sign.
struct GraphOptions {
    bool allow_self_loops = false;
};

class Graph {
public:
    using Options = GraphOptions;

    Graph() : adjacency_(std::make_shared<SparsityPattern>()) {}

    /// Deduplicates (i,j)/(j,i) pairs, keeping the first weight seen.
    /// Self-loops are rejected unless options.allow_self_loops.
    static Graph from_edges(std::size_t n,
                            std::span<const std::pair<std::size_t, std::size_t>> pairs,
                            std::span<const double> weights = {},
                            Options options = {}) {
        if (!weights.empty() && weights.size() != pairs.size()) {
            throw DimensionError("edge weight count does not match edge count");
        }
        std::vector<std::pair<Edge, double>> canon;
        canon.reserve(pairs.size());
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            auto [a, b] = pairs[k];
            if (a >= n || b >= n) {
                throw DimensionError("edge (" + std::to_string(a) + "," + std::to_string(b) +
                                     ") references a node outside [0," + std::to_string(n) + ")");
            }
            if (a == b && !options.allow_self_loops) {
                throw ConfigError("self-loop (" + std::to_string(a) + "," + std::to_string(a) +
                                  ") not allowed in a base graph");
            }
            double w = weights.empty() ? 1.0 : weights[k];
            if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("edge weights must be finite and nonnegative");
            canon.push_back({Edge{std::min(a, b), std::max(a, b)}, w});
        }
        std::stable_sort(canon.begin(), canon.end(), [](const auto& x, const auto& y) {
            return x.first.i != y.first.i ? x.first.i < y.first.i : x.first.j < y.first.j;
        });
        Graph g;
        g.n_ = n;
        for (const auto& [e, w] : canon) {
            if (!g.edges_.empty() && g.edges_.back() == e) continue;
            g.edges_.push_back(e);
            g.weights_.push_back(w);
            if (e.i == e.j) g.self_loops_ = true;
        }
        g.build_adjacency();
        return g;
    }

    std::size_t num_nodes() const { return n_; }
    /// Undirected edge count (self-loops count once).
    std::size_t num_edges() const { return edges_.size(); }
    bool has_self_loops() const { return self_loops_; }

    const std::vector<Edge>& edges() const { return edges_; }
    const std::vector<double>& weights() const { return weights_; }

    const SparsityPattern& adjacency() const { return *adjacency_; }
    PatternPtr adjacency_ptr() const { return adjacency_; }

    /// Canonical edge behind adjacency entry k.
    std::size_t entry_edge(std::size_t k) const { return entry_edge_[k]; }
    /// +1 when the entry's row is the canonical tail, -1 for the reversed
    /// orientation, 0 for self-loops (an alternating field vanishes there).
    int entry_sign(std::size_t k) const { return entry_sign_[k]; }
    double entry_weight(std::size_t k) const { return weights_[entry_edge_[k]]; }

    std::size_t degree(std::size_t i) const { return adjacency_->row_length(i); }

    std::optional<std::size_t> find_edge(std::size_t i, std::size_t j) const {
        auto k = adjacency_->find(i, j);
        if (!k) return std::nullopt;
        return entry_edge_[*k];
    }

private:
    void build_adjacency() {
        std::vector<std::size_t> counts(n_ + 1, 0);
        for (const auto& e : edges_) {
            ++counts[e.i + 1];
            if (e.i != e.j) ++counts[e.j + 1];
        }
        auto pattern = std::make_shared<SparsityPattern>();
        pattern->rows = n_;
        pattern->row_offsets.assign(n_ + 1, 0);
        for (std::size_t i = 0; i < n_; ++i) pattern->row_offsets[i + 1] = pattern->row_offsets[i] + counts[i + 1];
        const std::size_t nnz = pattern->row_offsets.back();
        pattern->col_indices.assign(nnz, 0);
        entry_edge_.assign(nnz, 0);
        entry_sign_.assign(nnz, 0);
        std::vector<std::size_t> cursor(pattern->row_offsets.begin(), pattern->row_offsets.end() - 1);
        for (std::size_t k = 0; k < edges_.size(); ++k) {
            const auto& e = edges_[k];
            std::size_t slot = cursor[e.i]++;
            pattern->col_indices[slot] = e.j;
            entry_edge_[slot] = k;
            entry_sign_[slot] = e.i == e.j ? 0 : 1;
            if (e.i != e.j) {
                slot = cursor[e.j]++;
                pattern->col_indices[slot] = e.i;
                entry_edge_[slot] = k;
                entry_sign_[slot] = -1;
            }
        }
        // Sort each row by column, carrying the edge map along.
        std::vector<std::size_t> order;
        for (std::size_t r = 0; r < n_; ++r) {
            const std::size_t lo = pattern->row_offsets[r], hi = pattern->row_offsets[r + 1];
            order.resize(hi - lo);
            for (std::size_t t = 0; t < order.size(); ++t) order[t] = lo + t;
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return pattern->col_indices[a] < pattern->col_indices[b];
            });
            std::vector<std::size_t> cols(order.size()), eidx(order.size());
            std::vector<int> sgn(order.size());
            for (std::size_t t = 0; t < order.size(); ++t) {
                cols[t] = pattern->col_indices[order[t]];
                eidx[t] = entry_edge_[order[t]];
                sgn[t] = entry_sign_[order[t]];
            }
            for (std::size_t t = 0; t < order.size(); ++t) {
                pattern->col_indices[lo + t] = cols[t];
                entry_edge_[lo + t] = eidx[t];
                entry_sign_[lo + t] = sgn[t];
            }
        }
        adjacency_ = std::move(pattern);
    }

    std::size_t n_ = 0;
    std::vector<Edge> edges_;
    std::vector<double> weights_;
    bool self_loops_ = false;
    PatternPtr adjacency_;
    std::vector<std::size_t> entry_edge_;
    std::vector<int> entry_sign_;
};

/// Alternating edge field: one row of channel values per canonical edge.
/// The reversed orientation reads the negated value, and self-loops read zero,
/// so value(j,i) = -value(i,j) holds by construction.
class EdgeField {
public:
    EdgeField() = default;
    EdgeField(std::size_t edges, std::size_t channels) : values_(Matrix::Zero(static_cast<Eigen::Index>(edges), static_cast<Eigen::Index>(channels))) {}
    explicit EdgeField(Matrix canonical) : values_(std::move(canonical)) {}

    std::size_t num_edges() const { return static_cast<std::size_t>(values_.rows()); }
    std::size_t channels() const { return static_cast<std::size_t>(values_.cols()); }

    /// Canonical-orientation storage (e x d).
    const Matrix& canonical() const { return values_; }
    Matrix& canonical() { return values_; }

    /// Oriented value for (i, j); zero when (i, j) is not an edge of g.
    double at(const Graph& g, std::size_t i, std::size_t j, std::size_t channel = 0) const {
        auto k = g.adjacency().find(i, j);
        if (!k) return 0.0;
        return g.entry_sign(*k) * values_(static_cast<Eigen::Index>(g.entry_edge(*k)), static_cast<Eigen::Index>(channel));
    }

private:
    Matrix values_;
};

/// (grad x)_ij = x_j - x_i on every canonical edge.
inline EdgeField gradient(const Graph& g, const NodeField& x) {
    if (static_cast<std::size_t>(x.rows()) != g.num_nodes()) {
        throw DimensionError("gradient: field has " + std::to_string(x.rows()) + " rows, graph has " +
                             std::to_string(g.num_nodes()) + " nodes");
    }
    EdgeField out(g.num_edges(), static_cast<std::size_t>(x.cols()));
    for (std::size_t k = 0; k < g.num_edges(); ++k) {
        const auto& e = g.edges()[k];
        if (e.i == e.j) continue;
        out.canonical().row(static_cast<Eigen::Index>(k)) =
            x.row(static_cast<Eigen::Index>(e.j)) - x.row(static_cast<Eigen::Index>(e.i));
    }
    return out;
}

/// (div f)_i = sum_j w_ij f_ij.
inline NodeField divergence(const Graph& g, const EdgeField& f) {
    if (f.num_edges() != g.num_edges()) {
        throw DimensionError("divergence: edge field has " + std::to_string(f.num_edges()) +
                             " edges, graph has " + std::to_string(g.num_edges()));
    }
    const auto& adj = g.adjacency();
    NodeField out = NodeField::Zero(static_cast<Eigen::Index>(g.num_nodes()), static_cast<Eigen::Index>(f.channels()));
    for (std::size_t i = 0; i < g.num_nodes(); ++i) {
        for (std::size_t k = adj.row_begin(i); k < adj.row_end(i); ++k) {
            const int s = g.entry_sign(k);
            if (s == 0) continue;
            out.row(static_cast<Eigen::Index>(i)) +=
                (s * g.entry_weight(k)) * f.canonical().row(static_cast<Eigen::Index>(g.entry_edge(k)));
        }
    }
    return out;
}

/// Weighted edge inner product, each undirected edge counted once.
inline double edge_inner(const Graph& g, const EdgeField& a, const EdgeField& b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < g.num_edges(); ++k) {
        acc += g.weights()[k] * a.canonical().row(static_cast<Eigen::Index>(k)).dot(b.canonical().row(static_cast<Eigen::Index>(k)));
    }
    return acc;
}

inline double node_inner(const NodeField& a, const NodeField& b) {
    return (a.array() * b.array()).sum();
}

/// div(grad x): the weighted combinatorial Laplacian action sum_j w_ij (x_j - x_i).
inline NodeField graph_laplacian_apply(const Graph& g, const NodeField& x) {
    return divergence(g, gradient(g, x));
}

/// Largest discrepancy in the gradient/divergence duality over random fields.
/// With grad x = x_j - x_i and div f = sum_j w_ij f_ij the divergence is the
/// negative adjoint, so the residual is |<grad x, f> + <x, div f>|.
inline double adjointness_check(const Graph& g, std::size_t trials, std::uint64_t seed = 0,
                                std::size_t channels = 1) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const auto n = static_cast<Eigen::Index>(g.num_nodes());
    const auto e = static_cast<Eigen::Index>(g.num_edges());
    const auto d = static_cast<Eigen::Index>(channels);
    double worst = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        NodeField x(n, d);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = unit(rng);
        Matrix fv(e, d);
        for (Eigen::Index i = 0; i < fv.size(); ++i) fv.data()[i] = unit(rng);
        for (std::size_t k = 0; k < g.num_edges(); ++k) {
            if (g.edges()[k].i == g.edges()[k].j) fv.row(static_cast<Eigen::Index>(k)).setZero();
        }
        EdgeField f(std::move(fv));
        const double lhs = edge_inner(g, gradient(g, x), f);
        const double rhs = node_inner(x, divergence(g, f));
        worst = std::max(worst, std::abs(lhs + rhs));
    }
    return worst;
}

}  // namespace grand
