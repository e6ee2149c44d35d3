#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include <json.hpp>

#include "grand/attention.hpp"
#include "grand/autodiff.hpp"
#include "grand/data.hpp"
#include "grand/diffusion_ops.hpp"
#include "grand/error.hpp"
#include "grand/graph.hpp"
#include "grand/integrators.hpp"
#include "grand/rewiring.hpp"

namespace grand {

enum class Variant { grand_l, grand_nl, grand_nl_rw };

inline std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::grand_l: return "grand-l";
        case Variant::grand_nl: return "grand-nl";
        case Variant::grand_nl_rw: return "grand-nl-rw";
    }
    return "?";
}

inline Variant parse_variant(std::string_view name) {
    for (auto v : {Variant::grand_l, Variant::grand_nl, Variant::grand_nl_rw}) {
        if (to_string(v) == name) return v;
    }
    throw ConfigError("unknown variant '" + std::string(name) + "'");
}

/// Learned attention, or the fixed a_ij = 1/deg(i) baseline with no attention
/// parameters at all.
enum class Diffusivity { attention, uniform };

inline std::string_view to_string(Diffusivity d) { return d == Diffusivity::attention ? "attention" : "uniform"; }

inline Diffusivity parse_diffusivity(std::string_view name) {
    if (name == "attention") return Diffusivity::attention;
    if (name == "uniform") return Diffusivity::uniform;
    throw ConfigError("unknown diffusivity '" + std::string(name) + "'");
}

struct ModelConfig {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 64;
    std::size_t classes = 0;
    std::size_t key_dim = 16;
    std::size_t heads = 1;
    AttentionKind attention_kind = AttentionKind::scaled_dot;
    LogitScale logit_scale = LogitScale::key_dim;
    double leaky_slope = 0.2;
    Variant variant = Variant::grand_l;
    Diffusivity diffusivity = Diffusivity::attention;
    SchemeConfig scheme{};
    RewireConfig rewire{};  // read only by grand-nl-rw

    void validate() const {
        if (input_dim < 1 || hidden_dim < 1 || classes < 1) throw DimensionError("model dimensions must be >= 1");
        if (key_dim < 1) throw ConfigError("attention key dimension must be >= 1");
        if (heads < 1) throw ConfigError("attention needs at least one head");
        scheme.validate();
        if (variant == Variant::grand_nl_rw) rewire.validate();
    }
};

struct ModelParams {
    Matrix encoder_weight;  // d x d_in
    Matrix encoder_bias;    // 1 x d
    Matrix decoder_weight;  // classes x d
    Matrix decoder_bias;    // 1 x classes
    AttentionParams attention;
};

/// Trainable tensors in a fixed order. Attention tensors are absent for the
/// uniform baseline.
template <class Params>
auto parameter_tensors(Params& p, Diffusivity diffusivity) {
    using Ptr = std::conditional_t<std::is_const_v<Params>, const Matrix*, Matrix*>;
    std::vector<std::pair<std::string, Ptr>> out{{"encoder_weight", &p.encoder_weight},
                                                 {"encoder_bias", &p.encoder_bias}};
    if (diffusivity == Diffusivity::attention) {
        for (std::size_t h = 0; h < p.attention.dot_heads.size(); ++h) {
            out.emplace_back("head" + std::to_string(h) + ".key", &p.attention.dot_heads[h].key);
            out.emplace_back("head" + std::to_string(h) + ".query", &p.attention.dot_heads[h].query);
        }
        for (std::size_t h = 0; h < p.attention.additive_heads.size(); ++h) {
            out.emplace_back("head" + std::to_string(h) + ".weight", &p.attention.additive_heads[h].weight);
            out.emplace_back("head" + std::to_string(h) + ".score", &p.attention.additive_heads[h].score);
        }
    }
    out.emplace_back("decoder_weight", &p.decoder_weight);
    out.emplace_back("decoder_bias", &p.decoder_bias);
    return out;
}

class GrandModel {
public:
    GrandModel() = default;
    GrandModel(ModelConfig config, ModelParams params) : config_(std::move(config)), params_(std::move(params)) {
        check();
    }

    /// Encoder/decoder drawn uniformly from +-1/sqrt(fan_in); attention weights
    /// constant, W_K = W_Q = 1/sqrt(d d_k) (additive: W = 1/sqrt(d d'), a = 1/sqrt(2 d')).
    static GrandModel initialize(const ModelConfig& config, std::uint64_t seed) {
        config.validate();
        std::mt19937_64 rng(seed);
        auto uniform = [&](std::size_t rows, std::size_t cols, std::size_t fan_in) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            std::uniform_real_distribution<double> dist(-bound, bound);
            Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
            return m;
        };
        const std::size_t d = config.hidden_dim;
        ModelParams p;
        p.encoder_weight = uniform(d, config.input_dim, config.input_dim);
        p.encoder_bias = uniform(1, d, config.input_dim);
        p.decoder_weight = uniform(config.classes, d, d);
        p.decoder_bias = uniform(1, config.classes, d);
        p.attention.kind = config.attention_kind;
        p.attention.scale = config.logit_scale;
        p.attention.leaky_slope = config.leaky_slope;
        const auto dk = static_cast<Eigen::Index>(config.key_dim);
        const auto dd = static_cast<Eigen::Index>(d);
        const double c = 1.0 / std::sqrt(static_cast<double>(d * config.key_dim));
        for (std::size_t h = 0; h < config.heads; ++h) {
            if (config.attention_kind == AttentionKind::scaled_dot) {
                p.attention.dot_heads.push_back({Matrix::Constant(dk, dd, c), Matrix::Constant(dk, dd, c)});
            } else {
                p.attention.additive_heads.push_back(
                    {Matrix::Constant(dk, dd, c), Matrix::Constant(1, 2 * dk, 1.0 / std::sqrt(2.0 * static_cast<double>(dk)))});
            }
        }
        return GrandModel(config, std::move(p));
    }

    const ModelConfig& config() const { return config_; }
    ModelConfig& config() { return config_; }
    const ModelParams& params() const { return params_; }
    ModelParams& params() { return params_; }

    /// Number of trainable scalars; independent of T and of the step count.
    std::size_t parameter_count() const {
        std::size_t total = 0;
        for (const auto& [name, t] : parameter_tensors(params_, config_.diffusivity)) total += static_cast<std::size_t>(t->size());
        return total;
    }

    /// X(0) = X_in E^T + b_e.
    NodeField encode(const Matrix& x_in) const {
        if (static_cast<std::size_t>(x_in.cols()) != config_.input_dim) {
            throw DimensionError("encoder expects " + std::to_string(config_.input_dim) + " input columns, got " +
                                 std::to_string(x_in.cols()));
        }
        NodeField x = x_in * params_.encoder_weight.transpose();
        x.rowwise() += params_.encoder_bias.row(0);
        return x;
    }

    Matrix decode(const NodeField& x) const {
        Matrix y = x * params_.decoder_weight.transpose();
        y.rowwise() += params_.decoder_bias.row(0);
        return y;
    }

    void check() const {
        config_.validate();
        const auto d = static_cast<Eigen::Index>(config_.hidden_dim);
        const auto c = static_cast<Eigen::Index>(config_.classes);
        const auto din = static_cast<Eigen::Index>(config_.input_dim);
        const auto& p = params_;
        if (p.encoder_weight.rows() != d || p.encoder_weight.cols() != din || p.encoder_bias.rows() != 1 ||
            p.encoder_bias.cols() != d || p.decoder_weight.rows() != c || p.decoder_weight.cols() != d ||
            p.decoder_bias.rows() != 1 || p.decoder_bias.cols() != c) {
            throw DimensionError("parameter shapes do not chain d_in -> d -> classes");
        }
        if (config_.diffusivity == Diffusivity::attention) p.attention.validate(config_.hidden_dim);
    }

private:
    ModelConfig config_;
    ModelParams params_;
};

// ---------------------------------------------------------------------------
// Graph preparation and forward pass

/// Edge set the diffusion runs on. For grand-nl-rw with PPR enabled this is the
/// densified graph, computed once.
struct PreparedGraph {
    Graph graph;
    PatternPtr pattern;
};

inline PreparedGraph prepare_graph(const ModelConfig& config, const Graph& g) {
    PreparedGraph out;
    if (config.variant == Variant::grand_nl_rw && config.rewire.ppr) {
        out.graph = ppr_densify(g, config.rewire.alpha, config.rewire.top_k, config.rewire.ppr_tol,
                                config.rewire.ppr_max_iters);
    } else {
        out.graph = g;
    }
    out.pattern = out.graph.adjacency_ptr();
    return out;
}

inline AttentionOperator diffusivity_at(const GrandModel& m, const NodeField& x, const PatternPtr& pattern) {
    if (m.config().diffusivity == Diffusivity::uniform) return uniform_attention(pattern);
    return attention(m.params().attention, x, pattern);
}

/// Pattern used for one forward pass: the prepared edge set, thresholded on
/// A(X(0)) for grand-nl-rw.
inline PatternPtr diffusion_pattern(const GrandModel& m, const PreparedGraph& pg, const Matrix& x_in) {
    if (m.config().variant != Variant::grand_nl_rw) return pg.pattern;
    return threshold_rewire(diffusivity_at(m, m.encode(x_in), pg.pattern), m.config().rewire.rho);
}

struct ForwardResult {
    Matrix logits;
    NodeField state;
    SolverTrace trace;
};

/// Encode, diffuse to T, decode. `pattern` overrides the rewiring step.
inline ForwardResult forward(const GrandModel& m, const PreparedGraph& pg, const Matrix& x_in,
                             PatternPtr pattern = nullptr) {
    if (static_cast<std::size_t>(x_in.rows()) != pg.graph.num_nodes()) {
        throw DimensionError("feature rows do not match node count");
    }
    const NodeField x0 = m.encode(x_in);
    if (!pattern) pattern = diffusion_pattern(m, pg, x_in);
    const bool frozen = m.config().variant == Variant::grand_l || m.config().diffusivity == Diffusivity::uniform;
    std::optional<Dynamics> dyn;
    if (frozen) {
        dyn.emplace(Dynamics::linear(shift_operator(diffusivity_at(m, x0, pattern))));
    } else {
        dyn.emplace(Dynamics::nonlinear(
            [&m, pattern](const NodeField& x) { return shift_operator(attention(m.params().attention, x, pattern)); }));
    }
    auto result = integrate(*dyn, x0, m.config().scheme);
    ForwardResult out;
    out.logits = m.decode(result.state);
    out.state = std::move(result.state);
    out.trace = std::move(result.trace);
    return out;
}

// ---------------------------------------------------------------------------
// Loss, accuracy, gradients

inline double cross_entropy(const Matrix& logits, const std::vector<int>& labels, const std::vector<std::size_t>& mask) {
    Tape t;
    return t.value(ops::softmax_cross_entropy(t, t.input(logits), labels, mask))(0, 0);
}

/// Fraction of masked nodes whose argmax (lowest index on ties) is the label.
inline double accuracy(const Matrix& logits, const std::vector<int>& labels, const std::vector<std::size_t>& mask) {
    if (mask.empty()) return 0.0;
    std::size_t hits = 0;
    for (auto i : mask) {
        Eigen::Index best = 0;
        logits.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
        hits += best == labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(mask.size());
}

/// Tape handles of every parameter, in parameter_tensors order.
struct TapeParams {
    Var encoder_weight, encoder_bias, decoder_weight, decoder_bias;
    std::vector<ops::DotHeadVars> dot;
    std::vector<ops::AdditiveHeadVars> additive;
    std::vector<Var> ordered;
};

inline TapeParams record_params(Tape& t, const GrandModel& m) {
    const auto& p = m.params();
    TapeParams v;
    v.encoder_weight = t.input(p.encoder_weight, "param");
    v.encoder_bias = t.input(p.encoder_bias, "param");
    v.ordered = {v.encoder_weight, v.encoder_bias};
    if (m.config().diffusivity == Diffusivity::attention) {
        for (const auto& h : p.attention.dot_heads) {
            v.dot.push_back({t.input(h.key, "param"), t.input(h.query, "param")});
            v.ordered.push_back(v.dot.back().key);
            v.ordered.push_back(v.dot.back().query);
        }
        for (const auto& h : p.attention.additive_heads) {
            v.additive.push_back({t.input(h.weight, "param"), t.input(h.score, "param")});
            v.ordered.push_back(v.additive.back().weight);
            v.ordered.push_back(v.additive.back().score);
        }
    }
    v.decoder_weight = t.input(p.decoder_weight, "param");
    v.decoder_bias = t.input(p.decoder_bias, "param");
    v.ordered.push_back(v.decoder_weight);
    v.ordered.push_back(v.decoder_bias);
    return v;
}

/// Records the forward pass on a tape, mirroring integrate() step for step.
/// Only fixed-step explicit schemes can be recorded.
inline Var record_logits(Tape& t, const GrandModel& m, const TapeParams& v, const Matrix& x_in,
                         const PatternPtr& pattern) {
    const auto& cfg = m.config();
    if (!is_fixed_step_explicit(cfg.scheme.scheme)) {
        throw ConfigError("unsupported configuration: gradients need explicit-euler, rk4 or ab4, not " +
                          std::string(to_string(cfg.scheme.scheme)));
    }
    const Var xin = t.input(x_in);
    const Var x0 = ops::affine(t, xin, v.encoder_weight, v.encoder_bias);

    auto attention_at = [&](Var x) -> Var {
        if (cfg.diffusivity == Diffusivity::uniform) {
            const auto& vals = uniform_attention(pattern).values();
            Matrix a(static_cast<Eigen::Index>(vals.size()), 1);
            for (std::size_t k = 0; k < vals.size(); ++k) a(static_cast<Eigen::Index>(k), 0) = vals[k];
            return t.input(std::move(a), "attention");
        }
        if (cfg.attention_kind == AttentionKind::scaled_dot) {
            return ops::dot_attention(t, x, v.dot, m.params().attention.logit_divisor(), pattern);
        }
        return ops::additive_attention(t, x, v.additive, cfg.leaky_slope, pattern);
    };
    std::optional<Var> frozen;
    if (cfg.variant == Variant::grand_l || cfg.diffusivity == Diffusivity::uniform) frozen = attention_at(x0);
    auto f = [&](Var x) { return ops::diffuse(t, frozen ? *frozen : attention_at(x), x, pattern); };
    auto rk4_rest = [&](Var x, Var k1, double h) {
        const Var k2 = f(ops::lincomb(t, {{1.0, x}, {0.5 * h, k1}}));
        const Var k3 = f(ops::lincomb(t, {{1.0, x}, {0.5 * h, k2}}));
        const Var k4 = f(ops::lincomb(t, {{1.0, x}, {h, k3}}));
        return ops::lincomb(t, {{1.0, x}, {h / 6.0, k1}, {h / 3.0, k2}, {h / 3.0, k3}, {h / 6.0, k4}});
    };

    Var x = x0;
    std::vector<Var> history;  // newest first
    for (double h : fixed_step_plan(cfg.scheme.horizon, cfg.scheme.tau)) {
        switch (cfg.scheme.scheme) {
            case SchemeKind::explicit_euler:
                x = ops::lincomb(t, {{1.0, x}, {h, f(x)}});
                break;
            case SchemeKind::rk4:
                x = rk4_rest(x, f(x), h);
                break;
            default: {
                history.insert(history.begin(), f(x));
                if (history.size() > 4) history.pop_back();
                if (history.size() < 4 || !is_uniform_step(h, cfg.scheme.tau)) {
                    x = rk4_rest(x, history.front(), h);
                } else {
                    std::vector<std::pair<double, Var>> terms{{1.0, x}};
                    for (std::size_t l = 0; l < 4; ++l) terms.emplace_back(h * kAb4Weights[l], history[l]);
                    x = ops::lincomb(t, std::move(terms));
                }
            }
        }
    }
    return ops::affine(t, x, v.decoder_weight, v.decoder_bias);
}

struct LossGradients {
    double loss = 0.0;
    ModelParams grads;  // same layout as the model's parameters
};

/// Exact reverse-mode gradient of the masked cross entropy through every solver step.
inline LossGradients loss_and_gradients(const GrandModel& m, const PatternPtr& pattern, const Matrix& x_in,
                                        const std::vector<int>& labels, const std::vector<std::size_t>& mask) {
    Tape t;
    const TapeParams v = record_params(t, m);
    const Var logits = record_logits(t, m, v, x_in, pattern);
    const Var loss = ops::softmax_cross_entropy(t, logits, labels, mask);
    t.backward(loss);
    LossGradients out;
    out.loss = t.value(loss)(0, 0);
    out.grads = m.params();
    auto slots = parameter_tensors(out.grads, m.config().diffusivity);
    for (std::size_t k = 0; k < slots.size(); ++k) *slots[k].second = t.grad(v.ordered[k]);
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer and training

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
    std::size_t epochs = 200;
    double learning_rate = 0.01;
    OptimizerKind optimizer = OptimizerKind::adam;
    double weight_decay = 5e-4;
    std::size_t patience = 50;  // epochs without validation gain; 0 disables
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be > 0");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
    }
};

/// Per-tensor Adam (beta 0.9/0.999, eps 1e-8) or plain SGD, with L2 decay added
/// to the gradient.
class Optimizer {
public:
    explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

    void step(GrandModel& m, const ModelParams& grads) {
        auto params = parameter_tensors(m.params(), m.config().diffusivity);
        auto gs = parameter_tensors(grads, m.config().diffusivity);
        if (first_.empty()) {
            for (const auto& [name, p] : params) {
                first_.push_back(Matrix::Zero(p->rows(), p->cols()));
                second_.push_back(Matrix::Zero(p->rows(), p->cols()));
            }
        }
        ++steps_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            Matrix& p = *params[k].second;
            const Matrix g = *gs[k].second + cfg_.weight_decay * p;
            if (cfg_.optimizer == OptimizerKind::sgd) {
                p -= cfg_.learning_rate * g;
                continue;
            }
            first_[k] = b1 * first_[k] + (1.0 - b1) * g;
            second_[k] = b2 * second_[k] + (1.0 - b2) * g.cwiseProduct(g);
            p.array() -= cfg_.learning_rate * (first_[k].array() / c1) / ((second_[k].array() / c2).sqrt() + eps);
        }
    }

private:
    TrainConfig cfg_;
    std::vector<Matrix> first_, second_;
    std::size_t steps_ = 0;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_acc = 0.0;
    double test_acc = 0.0;
};

struct TrainResult {
    GrandModel best;
    std::vector<EpochMetrics> history;
    std::size_t best_epoch = 0;
    double best_val_acc = -1.0;
    double test_acc = 0.0;  // at the best-validation epoch
    double seconds_per_epoch = 0.0;
};

struct Evaluation {
    double train_acc = 0.0;
    double val_acc = 0.0;
    double test_acc = 0.0;
};

inline Evaluation evaluate(const GrandModel& m, const PreparedGraph& pg, const Dataset& ds) {
    const Matrix logits = forward(m, pg, ds.features).logits;
    return {accuracy(logits, ds.labels, ds.splits.train), accuracy(logits, ds.labels, ds.splits.val),
            accuracy(logits, ds.labels, ds.splits.test)};
}

/// Full-batch training. Rewiring (grand-nl-rw) is recomputed at the start of
/// every epoch; the returned model is the best-validation snapshot (earliest
/// on ties).
inline TrainResult train(GrandModel model, const PreparedGraph& pg, const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    model.check();
    if (ds.splits.train.empty()) throw ConfigError("training split is empty");
    Optimizer opt(cfg);
    TrainResult out;
    out.best = model;
    std::size_t since_best = 0;
    const auto start = std::chrono::steady_clock::now();
    std::size_t epochs_run = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const PatternPtr pattern = diffusion_pattern(model, pg, ds.features);
        const auto lg = loss_and_gradients(model, pattern, ds.features, ds.labels, ds.splits.train);
        if (!std::isfinite(lg.loss)) {
            throw NumericError("training loss became non-finite at epoch " + std::to_string(epoch) +
                               "; try a smaller learning rate or step size");
        }
        opt.step(model, lg.grads);
        ++epochs_run;
        const Evaluation ev = evaluate(model, pg, ds);
        out.history.push_back({epoch, lg.loss, ev.val_acc, ev.test_acc});
        if (ev.val_acc > out.best_val_acc) {
            out.best_val_acc = ev.val_acc;
            out.best_epoch = epoch;
            out.test_acc = ev.test_acc;
            out.best = model;
            since_best = 0;
        } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
            break;
        }
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    out.seconds_per_epoch = epochs_run ? elapsed.count() / static_cast<double>(epochs_run) : 0.0;
    return out;
}

struct DepthPoint {
    double horizon = 0.0;
    double val_acc = 0.0;
    double test_acc = 0.0;
};

/// One model per T, everything else held fixed (same init seed).
inline std::vector<DepthPoint> depth_sweep(const ModelConfig& base, const Dataset& ds, const std::vector<double>& horizons,
                                           const TrainConfig& cfg, std::uint64_t init_seed) {
    std::vector<DepthPoint> out;
    for (double horizon : horizons) {
        ModelConfig mc = base;
        mc.scheme.horizon = horizon;
        const PreparedGraph pg = prepare_graph(mc, ds.graph);
        auto result = train(GrandModel::initialize(mc, init_seed), pg, ds, cfg);
        out.push_back({horizon, result.best_val_acc, result.test_acc});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints and metric files

inline nlohmann::json checkpoint_json(const GrandModel& m) {
    const auto& c = m.config();
    nlohmann::json meta{
        {"variant", to_string(c.variant)},
        {"diffusivity", to_string(c.diffusivity)},
        {"dims", {{"input", c.input_dim}, {"hidden", c.hidden_dim}, {"classes", c.classes}, {"key", c.key_dim}, {"heads", c.heads}}},
        {"attention", {{"kind", c.attention_kind == AttentionKind::scaled_dot ? "scaled-dot" : "bahdanau"},
                       {"scale", c.logit_scale == LogitScale::key_dim ? "dk" : "sqrt-dk"},
                       {"leaky_slope", c.leaky_slope}}},
        {"scheme", {{"name", to_string(c.scheme.scheme)}, {"tau", c.scheme.tau}, {"horizon", c.scheme.horizon},
                    {"atol", c.scheme.atol}, {"rtol", c.scheme.rtol}}},
        {"rewire", {{"ppr", c.rewire.ppr}, {"alpha", c.rewire.alpha}, {"top_k", c.rewire.top_k}, {"rho", c.rewire.rho}}}};
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& [name, t] : parameter_tensors(m.params(), c.diffusivity)) {
        tensors[name] = {{"rows", t->rows()}, {"cols", t->cols()},
                         {"data", std::vector<double>(t->data(), t->data() + t->size())}};
    }
    return {{"meta", meta}, {"tensors", tensors}};
}

inline GrandModel model_from_json(const nlohmann::json& j) {
    try {
        const auto& meta = j.at("meta");
        ModelConfig c;
        c.variant = parse_variant(meta.at("variant").get<std::string>());
        c.diffusivity = parse_diffusivity(meta.at("diffusivity").get<std::string>());
        const auto& dims = meta.at("dims");
        c.input_dim = dims.at("input");
        c.hidden_dim = dims.at("hidden");
        c.classes = dims.at("classes");
        c.key_dim = dims.at("key");
        c.heads = dims.at("heads");
        const auto& att = meta.at("attention");
        c.attention_kind = att.at("kind") == "bahdanau" ? AttentionKind::bahdanau : AttentionKind::scaled_dot;
        c.logit_scale = att.at("scale") == "sqrt-dk" ? LogitScale::sqrt_key_dim : LogitScale::key_dim;
        c.leaky_slope = att.at("leaky_slope");
        const auto& s = meta.at("scheme");
        c.scheme.scheme = parse_scheme(s.at("name").get<std::string>());
        c.scheme.tau = s.at("tau");
        c.scheme.horizon = s.at("horizon");
        c.scheme.atol = s.at("atol");
        c.scheme.rtol = s.at("rtol");
        const auto& r = meta.at("rewire");
        c.rewire.ppr = r.at("ppr");
        c.rewire.alpha = r.at("alpha");
        c.rewire.top_k = r.at("top_k");
        c.rewire.rho = r.at("rho");

        GrandModel m = GrandModel::initialize(c, 0);
        for (auto& [name, t] : parameter_tensors(m.params(), c.diffusivity)) {
            const auto& e = j.at("tensors").at(name);
            const auto data = e.at("data").get<std::vector<double>>();
            if (e.at("rows").get<Eigen::Index>() != t->rows() || e.at("cols").get<Eigen::Index>() != t->cols() ||
                static_cast<Eigen::Index>(data.size()) != t->size()) {
                throw DimensionError("checkpoint tensor '" + name + "' has the wrong shape");
            }
            std::copy(data.begin(), data.end(), t->data());
        }
        m.check();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const std::filesystem::path& path, const GrandModel& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << checkpoint_json(m).dump(1) << '\n';
}

inline GrandModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    return model_from_json(j);
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,train_loss,val_acc,test_acc\n";
    for (const auto& e : history) {
        out << e.epoch << ',' << detail::format_real(e.train_loss) << ',' << detail::format_real(e.val_acc) << ','
            << detail::format_real(e.test_acc) << '\n';
    }
}

}  // namespace grand
