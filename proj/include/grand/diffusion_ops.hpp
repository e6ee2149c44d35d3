#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "grand/attention.hpp"
#include "grand/autodiff.hpp"
#include "grand/graph.hpp"

namespace grand::ops {

/// Tape handles for one dot-product head.
struct DotHeadVars {
    Var key;
    Var query;
};

struct AdditiveHeadVars {
    Var weight;
    Var score;
};

namespace detail {

/// Softmax backward on one row set: dlogit_k = a_k (g_k - sum_row a g).
inline std::vector<double> softmax_backward(const SparsityPattern& p, const std::vector<double>& a,
                                            const Matrix& g, double scale) {
    std::vector<double> out(p.nnz());
    for (std::size_t i = 0; i < p.rows; ++i) {
        double s = 0.0;
        for (std::size_t k = p.row_begin(i); k < p.row_end(i); ++k) s += a[k] * g(static_cast<Eigen::Index>(k), 0);
        for (std::size_t k = p.row_begin(i); k < p.row_end(i); ++k) {
            out[k] = scale * a[k] * (g(static_cast<Eigen::Index>(k), 0) - s);
        }
    }
    return out;
}

}  // namespace detail

/// Head-averaged scaled dot-product attention values on `pattern`, as an nnz x 1 node.
inline Var dot_attention(Tape& t, Var x, const std::vector<DotHeadVars>& heads, double divisor,
                         const PatternPtr& pattern) {
    const Matrix& xv = t.value(x);
    const auto& p = *pattern;
    const double inv_heads = 1.0 / static_cast<double>(heads.size());
    Matrix avg = Matrix::Zero(static_cast<Eigen::Index>(p.nnz()), 1);
    std::vector<std::vector<double>> probs;
    std::vector<Matrix> keys, queries;
    for (const auto& h : heads) {
        DotHead head{t.value(h.key), t.value(h.query)};
        auto a = dot_head_logits(head, divisor, xv, p);
        row_softmax(p, a);
        for (std::size_t k = 0; k < a.size(); ++k) avg(static_cast<Eigen::Index>(k), 0) += inv_heads * a[k];
        probs.push_back(std::move(a));
        keys.push_back(xv * head.key.transpose());
        queries.push_back(xv * head.query.transpose());
    }
    return t.record(std::move(avg), "attention",
                    [x, heads, divisor, pattern, probs = std::move(probs), keys = std::move(keys),
                     queries = std::move(queries), inv_heads](Tape& tp, std::size_t self) {
                        const Matrix g = tp.grad(self);
                        const auto& p = *pattern;
                        const Matrix& xv = tp.value(x);
                        for (std::size_t h = 0; h < heads.size(); ++h) {
                            const auto dlogit = detail::softmax_backward(p, probs[h], g, inv_heads / divisor);
                            Matrix dk = Matrix::Zero(keys[h].rows(), keys[h].cols());
                            Matrix dq = Matrix::Zero(queries[h].rows(), queries[h].cols());
                            for (std::size_t i = 0; i < p.rows; ++i) {
                                const auto ii = static_cast<Eigen::Index>(i);
                                for (std::size_t k = p.row_begin(i); k < p.row_end(i); ++k) {
                                    const auto jj = static_cast<Eigen::Index>(p.col_indices[k]);
                                    dk.row(ii) += dlogit[k] * queries[h].row(jj);
                                    dq.row(jj) += dlogit[k] * keys[h].row(ii);
                                }
                            }
                            const Matrix& wk = tp.value(heads[h].key);
                            const Matrix& wq = tp.value(heads[h].query);
                            tp.grad(heads[h].key).noalias() += dk.transpose() * xv;
                            tp.grad(heads[h].query).noalias() += dq.transpose() * xv;
                            tp.grad(x).noalias() += dk * wk + dq * wq;
                        }
                    });
}

/// Head-averaged Bahdanau attention values on `pattern`, as an nnz x 1 node.
inline Var additive_attention(Tape& t, Var x, const std::vector<AdditiveHeadVars>& heads, double slope,
                              const PatternPtr& pattern) {
    const Matrix& xv = t.value(x);
    const auto& p = *pattern;
    const double inv_heads = 1.0 / static_cast<double>(heads.size());
    Matrix avg = Matrix::Zero(static_cast<Eigen::Index>(p.nnz()), 1);
    std::vector<std::vector<double>> probs, pre;
    for (const auto& h : heads) {
        AdditiveHead head{t.value(h.weight), t.value(h.score)};
        auto z = additive_head_preactivation(head, xv, p);
        std::vector<double> a(z.size());
        for (std::size_t k = 0; k < z.size(); ++k) a[k] = leaky_relu(z[k], slope);
        row_softmax(p, a);
        for (std::size_t k = 0; k < a.size(); ++k) avg(static_cast<Eigen::Index>(k), 0) += inv_heads * a[k];
        probs.push_back(std::move(a));
        pre.push_back(std::move(z));
    }
    return t.record(std::move(avg), "attention",
                    [x, heads, slope, pattern, probs = std::move(probs), pre = std::move(pre),
                     inv_heads](Tape& tp, std::size_t self) {
                        const Matrix g = tp.grad(self);
                        const auto& p = *pattern;
                        const Matrix& xv = tp.value(x);
                        for (std::size_t h = 0; h < heads.size(); ++h) {
                            auto dz = detail::softmax_backward(p, probs[h], g, inv_heads);
                            Eigen::VectorXd ds = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.rows));
                            Eigen::VectorXd dr = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.rows));
                            for (std::size_t i = 0; i < p.rows; ++i) {
                                for (std::size_t k = p.row_begin(i); k < p.row_end(i); ++k) {
                                    const double d = dz[k] * (pre[h][k] > 0.0 ? 1.0 : slope);
                                    ds(static_cast<Eigen::Index>(i)) += d;
                                    dr(static_cast<Eigen::Index>(p.col_indices[k])) += d;
                                }
                            }
                            const Matrix& w = tp.value(heads[h].weight);
                            const Matrix& a = tp.value(heads[h].score);
                            const Eigen::Index dp = w.rows();
                            const Matrix hidden = xv * w.transpose();
                            Matrix& ga = tp.grad(heads[h].score);
                            ga.leftCols(dp) += ds.transpose() * hidden;
                            ga.rightCols(dp) += dr.transpose() * hidden;
                            const Matrix dhidden = ds * a.leftCols(dp) + dr * a.rightCols(dp);
                            tp.grad(heads[h].weight).noalias() += dhidden.transpose() * xv;
                            tp.grad(x).noalias() += dhidden * w;
                        }
                    });
}

/// Abar X = A X - X on rows with at least one entry (empty rows give zero).
inline Var diffuse(Tape& t, Var attention_values, Var x, const PatternPtr& pattern) {
    const auto& p = *pattern;
    const Matrix& a = t.value(attention_values);
    const Matrix& xv = t.value(x);
    Matrix y = Matrix::Zero(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < p.rows; ++i) {
        if (p.row_length(i) == 0) continue;
        const auto ii = static_cast<Eigen::Index>(i);
        for (std::size_t k = p.row_begin(i); k < p.row_end(i); ++k) {
            y.row(ii) += a(static_cast<Eigen::Index>(k), 0) * xv.row(static_cast<Eigen::Index>(p.col_indices[k]));
        }
        y.row(ii) -= xv.row(ii);
    }
    return t.record(std::move(y), "diffuse", [attention_values, x, pattern](Tape& tp, std::size_t self) {
        const Matrix g = tp.grad(self);
        const auto& p = *pattern;
        const Matrix& a = tp.value(attention_values);
        const Matrix& xv = tp.value(x);
        Matrix& ga = tp.grad(attention_values);
        Matrix& gx = tp.grad(x);
        for (std::size_t i = 0; i < p.rows; ++i) {
            if (p.row_length(i) == 0) continue;
            const auto ii = static_cast<Eigen::Index>(i);
            for (std::size_t k = p.row_begin(i); k < p.row_end(i); ++k) {
                const auto jj = static_cast<Eigen::Index>(p.col_indices[k]);
                ga(static_cast<Eigen::Index>(k), 0) += g.row(ii).dot(xv.row(jj));
                gx.row(jj) += a(static_cast<Eigen::Index>(k), 0) * g.row(ii);
            }
            gx.row(ii) -= g.row(ii);
        }
    });
}

}  // namespace grand::ops
