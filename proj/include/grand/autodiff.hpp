#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "grand/error.hpp"
#include "grand/graph.hpp"

namespace grand {

/// Handle to a tape node.
struct Var {
    std::size_t id = 0;
};

/// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
/// order; backward() walks them in reverse, skipping nodes no gradient reached.
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Var input(Matrix value, std::string_view kind = "input") { return push(std::move(value), kind, nullptr); }

    Var record(Matrix value, std::string_view kind, Backward backward) {
        return push(std::move(value), kind, std::move(backward));
    }

    const Matrix& value(Var v) const { return nodes_[v.id].value; }

    bool has_grad(Var v) const { return nodes_[v.id].has_grad; }

    /// Gradient accumulator; zero-initialised on first access.
    Matrix& grad(Var v) { return grad(v.id); }
    Matrix& grad(std::size_t id) {
        auto& node = nodes_[id];
        if (!node.has_grad) {
            node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
            node.has_grad = true;
        }
        return node.grad;
    }

    /// Seeds d(out)/d(out) = 1 for a 1x1 output and propagates.
    void backward(Var out) {
        if (value(out).size() != 1) throw DimensionError("backward needs a scalar output");
        grad(out)(0, 0) += 1.0;
        for (std::size_t id = out.id + 1; id-- > 0;) {
            auto& node = nodes_[id];
            if (node.has_grad && node.backward) node.backward(*this, id);
        }
    }

    std::size_t size() const { return nodes_.size(); }

    std::size_t count(std::string_view kind) const {
        std::size_t c = 0;
        for (const auto& n : nodes_) c += n.kind == kind;
        return c;
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool has_grad = false;
        std::string kind;
        Backward backward;
    };

    Var push(Matrix value, std::string_view kind, Backward backward) {
        nodes_.push_back(Node{std::move(value), Matrix(), false, std::string(kind), std::move(backward)});
        return Var{nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
};

namespace ops {

/// y = x W^T + 1 b.
inline Var affine(Tape& t, Var x, Var w, Var b) {
    const Matrix& xv = t.value(x);
    const Matrix& wv = t.value(w);
    const Matrix& bv = t.value(b);
    if (xv.cols() != wv.cols() || bv.rows() != 1 || bv.cols() != wv.rows()) {
        throw DimensionError("affine: shapes " + std::to_string(xv.rows()) + "x" + std::to_string(xv.cols()) + " * (" +
                             std::to_string(wv.rows()) + "x" + std::to_string(wv.cols()) + ")^T do not chain");
    }
    Matrix y = xv * wv.transpose();
    y.rowwise() += bv.row(0);
    return t.record(std::move(y), "affine", [x, w, b](Tape& tp, std::size_t self) {
        const Matrix gy = tp.grad(self);
        tp.grad(x).noalias() += gy * tp.value(w);
        tp.grad(w).noalias() += gy.transpose() * tp.value(x);
        tp.grad(b) += gy.colwise().sum();
    });
}

/// y = sum_k c_k v_k.
inline Var lincomb(Tape& t, std::vector<std::pair<double, Var>> terms) {
    if (terms.empty()) throw ConfigError("lincomb needs at least one term");
    Matrix y = terms.front().first * t.value(terms.front().second);
    for (std::size_t k = 1; k < terms.size(); ++k) y += terms[k].first * t.value(terms[k].second);
    return t.record(std::move(y), "lincomb", [terms = std::move(terms)](Tape& tp, std::size_t self) {
        const Matrix gy = tp.grad(self);
        for (const auto& [c, v] : terms) tp.grad(v) += c * gy;
    });
}

/// Mean over masked rows of -log softmax(z_i)[label_i].
inline Var softmax_cross_entropy(Tape& t, Var logits, const std::vector<int>& labels,
                                 const std::vector<std::size_t>& mask) {
    if (mask.empty()) throw ConfigError("cross entropy over an empty mask");
    const Matrix& z = t.value(logits);
    Matrix probs(static_cast<Eigen::Index>(mask.size()), z.cols());
    double loss = 0.0;
    for (std::size_t m = 0; m < mask.size(); ++m) {
        const auto i = static_cast<Eigen::Index>(mask[m]);
        const double zmax = z.row(i).maxCoeff();
        const auto e = (z.row(i).array() - zmax).exp();
        const double lse = std::log(e.sum()) + zmax;
        probs.row(static_cast<Eigen::Index>(m)) = e / e.sum();
        loss += lse - z(i, labels[mask[m]]);
    }
    loss /= static_cast<double>(mask.size());
    Matrix out(1, 1);
    out(0, 0) = loss;
    return t.record(std::move(out), "cross_entropy",
                    [logits, labels, mask, probs = std::move(probs)](Tape& tp, std::size_t self) {
                        const double g = tp.grad(self)(0, 0) / static_cast<double>(mask.size());
                        Matrix& gz = tp.grad(logits);
                        for (std::size_t m = 0; m < mask.size(); ++m) {
                            const auto i = static_cast<Eigen::Index>(mask[m]);
                            gz.row(i) += g * probs.row(static_cast<Eigen::Index>(m));
                            gz(i, labels[mask[m]]) -= g;
                        }
                    });
}

}  // namespace ops
}  // namespace grand
