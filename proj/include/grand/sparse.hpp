#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "grand/error.hpp"
#include "grand/graph.hpp"
#include "grand/parallel.hpp"

namespace grand {

/// Square CSR operator over a shared sparsity pattern.
class SparseMatrix {
public:
    SparseMatrix() : pattern_(std::make_shared<SparsityPattern>()) {}

    SparseMatrix(PatternPtr pattern, std::vector<double> values)
        : pattern_(std::move(pattern)), values_(std::move(values)) {
        if (values_.size() != pattern_->nnz()) {
            throw DimensionError("sparse values (" + std::to_string(values_.size()) +
                                 ") do not match pattern nnz (" + std::to_string(pattern_->nnz()) + ")");
        }
    }

    static SparseMatrix identity(std::size_t n) {
        std::vector<std::vector<std::size_t>> rows(n);
        for (std::size_t i = 0; i < n; ++i) rows[i] = {i};
        return SparseMatrix(std::make_shared<SparsityPattern>(SparsityPattern::from_rows(std::move(rows))),
                            std::vector<double>(n, 1.0));
    }

    std::size_t rows() const { return pattern_->rows; }
    std::size_t nnz() const { return values_.size(); }
    const SparsityPattern& pattern() const { return *pattern_; }
    const PatternPtr& pattern_ptr() const { return pattern_; }
    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

    double coeff(std::size_t i, std::size_t j) const {
        auto k = pattern_->find(i, j);
        return k ? values_[*k] : 0.0;
    }

    /// Y = M X.
    NodeField apply(const NodeField& x) const {
        if (static_cast<std::size_t>(x.rows()) != rows()) {
            throw DimensionError("sparse apply: operator has " + std::to_string(rows()) + " rows, field has " +
                                 std::to_string(x.rows()));
        }
        NodeField y = NodeField::Zero(x.rows(), x.cols());
        const auto& p = *pattern_;
        parallel_for(rows(), [&](std::size_t i) {
            auto yi = y.row(static_cast<Eigen::Index>(i));
            for (std::size_t k = p.row_begin(i); k < p.row_end(i); ++k) {
                yi.noalias() += values_[k] * x.row(static_cast<Eigen::Index>(p.col_indices[k]));
            }
        });
        return y;
    }

    /// Y = M^T G.
    NodeField apply_transpose(const NodeField& g) const {
        if (static_cast<std::size_t>(g.rows()) != rows()) throw DimensionError("sparse transpose apply: size mismatch");
        NodeField y = NodeField::Zero(g.rows(), g.cols());
        const auto& p = *pattern_;
        for (std::size_t i = 0; i < rows(); ++i) {
            for (std::size_t k = p.row_begin(i); k < p.row_end(i); ++k) {
                y.row(static_cast<Eigen::Index>(p.col_indices[k])) += values_[k] * g.row(static_cast<Eigen::Index>(i));
            }
        }
        return y;
    }

    double row_sum(std::size_t i) const {
        double s = 0.0;
        for (std::size_t k = pattern_->row_begin(i); k < pattern_->row_end(i); ++k) s += values_[k];
        return s;
    }

    Eigen::MatrixXd to_dense() const {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(rows()));
        for (std::size_t i = 0; i < rows(); ++i) {
            for (std::size_t k = pattern_->row_begin(i); k < pattern_->row_end(i); ++k) {
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(pattern_->col_indices[k])) += values_[k];
            }
        }
        return m;
    }

    /// alpha * this + beta * I, on the pattern extended with the diagonal.
    SparseMatrix scaled_plus_identity(double alpha, double beta) const {
        PatternPtr p = with_diagonal(pattern_);
        std::vector<double> v(p->nnz(), 0.0);
        for (std::size_t i = 0; i < rows(); ++i) {
            std::size_t kd = p->row_begin(i);
            for (std::size_t k = pattern_->row_begin(i); k < pattern_->row_end(i); ++k) {
                const std::size_t j = pattern_->col_indices[k];
                while (p->col_indices[kd] != j) ++kd;
                v[kd] += alpha * values_[k];
            }
            v[*p->find(i, i)] += beta;
        }
        return SparseMatrix(std::move(p), std::move(v));
    }

    bool all_finite() const {
        for (double v : values_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    /// Pattern with every diagonal entry present; returns the input when it already has them.
    static PatternPtr with_diagonal(const PatternPtr& pattern) {
        bool complete = true;
        for (std::size_t i = 0; i < pattern->rows && complete; ++i) complete = pattern->find(i, i).has_value();
        if (complete) return pattern;
        std::vector<std::vector<std::size_t>> rows(pattern->rows);
        for (std::size_t i = 0; i < pattern->rows; ++i) {
            rows[i].assign(pattern->col_indices.begin() + static_cast<std::ptrdiff_t>(pattern->row_begin(i)),
                           pattern->col_indices.begin() + static_cast<std::ptrdiff_t>(pattern->row_end(i)));
            rows[i].push_back(i);
        }
        return std::make_shared<SparsityPattern>(SparsityPattern::from_rows(std::move(rows)));
    }

private:
    PatternPtr pattern_;
    std::vector<double> values_;
};

/// Infinity norm of a dense field.
inline double max_abs(const NodeField& x) {
    return x.size() == 0 ? 0.0 : x.cwiseAbs().maxCoeff();
}

}  // namespace grand
