#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "grand/error.hpp"
#include "grand/graph.hpp"
#include "grand/sparse.hpp"

namespace grand {

enum class AttentionKind { scaled_dot, bahdanau };

/// Divisor applied to dot-product logits.
enum class LogitScale { key_dim, sqrt_key_dim };

/// One scaled dot-product head: logits (W_K x_i)^T (W_Q x_j) / scale.
struct DotHead {
    Matrix key;    // d_k x d
    Matrix query;  // d_k x d
};

/// One additive (Bahdanau) head: leakyrelu(a^T [W x_i || W x_j]).
struct AdditiveHead {
    Matrix weight;  // d' x d
    Matrix score;   // 1 x 2d'
};

struct AttentionParams {
    AttentionKind kind = AttentionKind::scaled_dot;
    LogitScale scale = LogitScale::key_dim;
    double leaky_slope = 0.2;
    std::vector<DotHead> dot_heads;
    std::vector<AdditiveHead> additive_heads;

    std::size_t heads() const {
        return kind == AttentionKind::scaled_dot ? dot_heads.size() : additive_heads.size();
    }

    double logit_divisor() const {
        const auto dk = static_cast<double>(dot_heads.empty() ? 1 : dot_heads.front().key.rows());
        return scale == LogitScale::key_dim ? dk : std::sqrt(dk);
    }

    /// Throws unless every head is consistent with d input channels.
    void validate(std::size_t d) const {
        if (heads() == 0) throw ConfigError("attention needs at least one head");
        const auto dd = static_cast<Eigen::Index>(d);
        if (kind == AttentionKind::scaled_dot) {
            const auto dk = dot_heads.front().key.rows();
            if (dk < 1) throw ConfigError("attention key dimension must be >= 1");
            for (const auto& h : dot_heads) {
                if (h.key.rows() != dk || h.query.rows() != dk || h.key.cols() != dd || h.query.cols() != dd) {
                    throw DimensionError("dot-product head shape does not match d_k x " + std::to_string(d));
                }
                if (!h.key.allFinite() || !h.query.allFinite()) throw ConfigError("attention weights must be finite");
            }
        } else {
            for (const auto& h : additive_heads) {
                if (h.weight.cols() != dd || h.score.rows() != 1 || h.score.cols() != 2 * h.weight.rows()) {
                    throw DimensionError("additive head shape does not match input width " + std::to_string(d));
                }
                if (!h.weight.allFinite() || !h.score.allFinite()) throw ConfigError("attention weights must be finite");
            }
        }
    }
};

/// Row-stochastic attention matrix A(X) on a declared edge set.
using AttentionOperator = SparseMatrix;

/// In-place softmax over each row's entries with max subtraction.
/// Rows without entries are left empty, i.e. zero rows of the operator.
inline void row_softmax(const SparsityPattern& p, std::span<double> logits) {
    for (std::size_t i = 0; i < p.rows; ++i) {
        const std::size_t lo = p.row_begin(i), hi = p.row_end(i);
        if (lo == hi) continue;
        double m = logits[lo];
        for (std::size_t k = lo + 1; k < hi; ++k) m = std::max(m, logits[k]);
        double z = 0.0;
        for (std::size_t k = lo; k < hi; ++k) {
            logits[k] = std::exp(logits[k] - m);
            z += logits[k];
        }
        for (std::size_t k = lo; k < hi; ++k) logits[k] /= z;
    }
}

inline std::vector<double> dot_head_logits(const DotHead& head, double divisor, const NodeField& x,
                                           const SparsityPattern& p) {
    const Matrix keys = x * head.key.transpose();
    const Matrix queries = x * head.query.transpose();
    std::vector<double> logits(p.nnz());
    parallel_for(p.rows, [&](std::size_t i) {
        for (std::size_t k = p.row_begin(i); k < p.row_end(i); ++k) {
            logits[k] = keys.row(static_cast<Eigen::Index>(i)).dot(queries.row(static_cast<Eigen::Index>(p.col_indices[k]))) / divisor;
        }
    });
    return logits;
}

inline double leaky_relu(double v, double slope) { return v > 0.0 ? v : slope * v; }

/// Pre-activation additive scores s_i + r_j with s = (XW^T) a_1, r = (XW^T) a_2.
inline std::vector<double> additive_head_preactivation(const AdditiveHead& head, const NodeField& x,
                                                       const SparsityPattern& p) {
    const Eigen::Index dp = head.weight.rows();
    const Matrix hidden = x * head.weight.transpose();
    const Eigen::VectorXd src = hidden * head.score.leftCols(dp).transpose();
    const Eigen::VectorXd dst = hidden * head.score.rightCols(dp).transpose();
    std::vector<double> pre(p.nnz());
    for (std::size_t i = 0; i < p.rows; ++i) {
        for (std::size_t k = p.row_begin(i); k < p.row_end(i); ++k) {
            pre[k] = src(static_cast<Eigen::Index>(i)) + dst(static_cast<Eigen::Index>(p.col_indices[k]));
        }
    }
    return pre;
}

/// Entrywise mean of operators sharing one sparsity pattern.
inline AttentionOperator multi_head_average(std::span<const AttentionOperator> ops) {
    if (ops.empty()) throw ConfigError("multi_head_average needs at least one operator");
    const auto& first = ops.front();
    std::vector<double> acc(first.nnz(), 0.0);
    for (const auto& op : ops) {
        if (op.pattern_ptr() != first.pattern_ptr() && !(op.pattern() == first.pattern())) {
            throw DimensionError("multi_head_average: heads have different sparsity patterns");
        }
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += op.values()[k];
    }
    const double inv = 1.0 / static_cast<double>(ops.size());
    for (double& v : acc) v *= inv;
    return AttentionOperator(first.pattern_ptr(), std::move(acc));
}

inline AttentionOperator scaled_dot_attention(const AttentionParams& params, const NodeField& x,
                                              const PatternPtr& edges) {
    if (params.kind != AttentionKind::scaled_dot) throw ConfigError("scaled_dot_attention called with non dot-product params");
    params.validate(static_cast<std::size_t>(x.cols()));
    if (static_cast<std::size_t>(x.rows()) != edges->rows) throw DimensionError("attention: feature rows do not match edge set");
    std::vector<AttentionOperator> heads;
    heads.reserve(params.dot_heads.size());
    for (const auto& h : params.dot_heads) {
        auto logits = dot_head_logits(h, params.logit_divisor(), x, *edges);
        row_softmax(*edges, logits);
        heads.emplace_back(edges, std::move(logits));
    }
    return multi_head_average(heads);
}

inline AttentionOperator bahdanau_attention(const AttentionParams& params, const NodeField& x,
                                            const PatternPtr& edges) {
    if (params.kind != AttentionKind::bahdanau) throw ConfigError("bahdanau_attention called with non additive params");
    params.validate(static_cast<std::size_t>(x.cols()));
    if (static_cast<std::size_t>(x.rows()) != edges->rows) throw DimensionError("attention: feature rows do not match edge set");
    std::vector<AttentionOperator> heads;
    heads.reserve(params.additive_heads.size());
    for (const auto& h : params.additive_heads) {
        auto logits = additive_head_preactivation(h, x, *edges);
        for (double& v : logits) v = leaky_relu(v, params.leaky_slope);
        row_softmax(*edges, logits);
        heads.emplace_back(edges, std::move(logits));
    }
    return multi_head_average(heads);
}

inline AttentionOperator attention(const AttentionParams& params, const NodeField& x, const PatternPtr& edges) {
    return params.kind == AttentionKind::scaled_dot ? scaled_dot_attention(params, x, edges)
                                                    : bahdanau_attention(params, x, edges);
}

/// a_ij = 1/deg(i): the fixed random-walk diffusivity.
inline AttentionOperator uniform_attention(const PatternPtr& edges) {
    std::vector<double> v(edges->nnz());
    for (std::size_t i = 0; i < edges->rows; ++i) {
        const double w = 1.0 / static_cast<double>(std::max<std::size_t>(1, edges->row_length(i)));
        for (std::size_t k = edges->row_begin(i); k < edges->row_end(i); ++k) v[k] = w;
    }
    return AttentionOperator(edges, std::move(v));
}

/// Abar = A - I on every row that has at least one entry. Empty rows stay zero,
/// so isolated nodes keep their features.
inline SparseMatrix shift_operator(const AttentionOperator& a) {
    const auto& src = a.pattern();
    std::vector<std::vector<std::size_t>> rows(src.rows);
    for (std::size_t i = 0; i < src.rows; ++i) {
        rows[i].assign(src.col_indices.begin() + static_cast<std::ptrdiff_t>(src.row_begin(i)),
                       src.col_indices.begin() + static_cast<std::ptrdiff_t>(src.row_end(i)));
        if (!rows[i].empty()) rows[i].push_back(i);
    }
    auto p = std::make_shared<SparsityPattern>(SparsityPattern::from_rows(std::move(rows)));
    std::vector<double> v(p->nnz(), 0.0);
    for (std::size_t i = 0; i < src.rows; ++i) {
        if (src.row_length(i) == 0) continue;
        for (std::size_t k = src.row_begin(i); k < src.row_end(i); ++k) v[*p->find(i, src.col_indices[k])] += a.values()[k];
        v[*p->find(i, i)] -= 1.0;
    }
    return SparseMatrix(std::move(p), std::move(v));
}

/// max_i |sum_j a_ij - 1| over rows with at least one entry.
inline double row_stochastic_deviation(const AttentionOperator& a) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        if (a.pattern().row_length(i) == 0) continue;
        worst = std::max(worst, std::abs(a.row_sum(i) - 1.0));
    }
    return worst;
}

}  // namespace grand
