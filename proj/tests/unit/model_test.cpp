#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "oracles.hpp"

using namespace grand;

namespace {

struct Toy {
    Graph graph;
    Matrix x;
    std::vector<int> labels;
    std::vector<std::size_t> mask;
};

Toy toy(std::size_t n, std::size_t d_in, int classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Toy t;
    t.graph = oracle::random_graph(n, 0.3, rng);
    t.x = oracle::random_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d_in), rng);
    std::uniform_int_distribution<int> lab(0, classes - 1);
    for (std::size_t i = 0; i < n; ++i) t.labels.push_back(lab(rng));
    for (std::size_t i = 0; i < n; i += 2) t.mask.push_back(i);
    return t;
}

ModelConfig small_config(std::size_t d_in, std::size_t classes) {
    ModelConfig c;
    c.input_dim = d_in;
    c.hidden_dim = 4;
    c.classes = classes;
    c.key_dim = 2;
    c.scheme.scheme = SchemeKind::rk4;
    c.scheme.tau = 0.5;
    c.scheme.horizon = 1.0;
    return c;
}

/// Random parameters so that attention is far from uniform.
GrandModel randomized(const ModelConfig& c, std::uint64_t seed) {
    GrandModel m = GrandModel::initialize(c, seed);
    std::mt19937_64 rng(seed + 100);
    for (auto& [name, t] : parameter_tensors(m.params(), c.diffusivity)) {
        *t = oracle::random_matrix(t->rows(), t->cols(), rng, 0.6);
    }
    return m;
}

double masked_loss(const GrandModel& m, const PatternPtr& p, const Toy& t) {
    PreparedGraph pg{t.graph, t.graph.adjacency_ptr()};
    return cross_entropy(forward(m, pg, t.x, p).logits, t.labels, t.mask);
}

Dataset sbm_dataset(std::uint64_t seed) {
    SbmConfig c;
    c.seed = seed;
    return synth_sbm(c);
}

}  // namespace

TEST(Encoder, MatchesDenseAffineMap) {
    ModelConfig c = small_config(4, 2);
    c.hidden_dim = 3;
    const GrandModel m = GrandModel::initialize(c, 3);
    std::mt19937_64 rng(3);
    const Matrix x = oracle::random_matrix(5, 4, rng);
    const oracle::Dense w = m.params().encoder_weight;
    oracle::Dense expected = oracle::Dense(x) * w.transpose();
    for (Eigen::Index i = 0; i < 5; ++i) expected.row(i) += oracle::Dense(m.params().encoder_bias).row(0);
    EXPECT_LE((oracle::Dense(m.encode(x)) - expected).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_THROW(m.encode(Matrix::Zero(5, 3)), DimensionError);
}

TEST(Model, InitializationIsSeededAndBounded) {
    const ModelConfig c = small_config(9, 3);
    const GrandModel a = GrandModel::initialize(c, 7), b = GrandModel::initialize(c, 7), d = GrandModel::initialize(c, 8);
    EXPECT_EQ(a.params().encoder_weight, b.params().encoder_weight);
    EXPECT_NE(a.params().encoder_weight, d.params().encoder_weight);
    EXPECT_LE(a.params().encoder_weight.cwiseAbs().maxCoeff(), 1.0 / 3.0);
    EXPECT_LE(a.params().decoder_weight.cwiseAbs().maxCoeff(), 0.5);
}

TEST(Model, ValidationRejectsBadShapes) {
    ModelConfig c = small_config(3, 2);
    c.classes = 0;
    EXPECT_THROW(GrandModel::initialize(c, 1), DimensionError);
    c = small_config(3, 2);
    GrandModel m = GrandModel::initialize(c, 1);
    ModelParams p = m.params();
    p.decoder_weight = Matrix::Zero(2, 5);
    EXPECT_THROW(GrandModel(c, p), DimensionError);
    EXPECT_THROW(parse_variant("grand-xl"), ConfigError);
    EXPECT_EQ(parse_variant(to_string(Variant::grand_nl_rw)), Variant::grand_nl_rw);
    EXPECT_EQ(parse_diffusivity(to_string(Diffusivity::uniform)), Diffusivity::uniform);
}

TEST(Forward, ZeroHorizonDecodesEncodedInput) {
    const Toy t = toy(10, 3, 2, 1);
    ModelConfig c = small_config(3, 2);
    c.scheme.horizon = 0.0;
    const GrandModel m = randomized(c, 1);
    const auto out = forward(m, prepare_graph(c, t.graph), t.x);
    EXPECT_EQ((out.logits - m.decode(m.encode(t.x))).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Forward, ConstantChannelsAreFixedPoints) {
    const Toy t = toy(12, 3, 2, 2);
    for (auto variant : {Variant::grand_l, Variant::grand_nl}) {
        ModelConfig c = small_config(3, 2);
        c.variant = variant;
        c.scheme.horizon = 3.0;
        GrandModel m = randomized(c, 2);
        m.params().encoder_weight.setZero();
        const auto out = forward(m, prepare_graph(c, t.graph), t.x);
        EXPECT_LE((out.state - m.encode(t.x)).cwiseAbs().maxCoeff(), 1e-13);
    }
}

TEST(Forward, ExpmAgreesWithDopri5ForLinearModel) {
    const Toy t = toy(20, 3, 2, 3);
    ModelConfig c = small_config(3, 2);
    c.scheme.horizon = 2.5;
    c.scheme.scheme = SchemeKind::expm;
    const GrandModel m = randomized(c, 3);
    const auto pg = prepare_graph(c, t.graph);
    const auto a = forward(m, pg, t.x);
    GrandModel m2 = m;
    m2.config().scheme.scheme = SchemeKind::dopri5;
    m2.config().scheme.atol = 1e-12;
    m2.config().scheme.rtol = 1e-10;
    const auto b = forward(m2, pg, t.x);
    EXPECT_LE((a.state - b.state).cwiseAbs().maxCoeff() / a.state.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Forward, UniformDiffusivityIgnoresAttentionWeights) {
    const Toy t = toy(15, 3, 2, 4);
    ModelConfig c = small_config(3, 2);
    c.diffusivity = Diffusivity::uniform;
    GrandModel m = randomized(c, 4);
    const auto pg = prepare_graph(c, t.graph);
    const Matrix before = forward(m, pg, t.x).logits;
    m.params().attention.dot_heads[0].key.setConstant(5.0);
    EXPECT_EQ((forward(m, pg, t.x).logits - before).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Loss, UniformLogitsGiveLogClasses) {
    const std::vector<int> labels{0, 2, 1, 2};
    const std::vector<std::size_t> mask{0, 1, 3};
    EXPECT_NEAR(cross_entropy(Matrix::Zero(4, 3), labels, mask), std::log(3.0), 1e-15);
    Matrix confident = Matrix::Zero(4, 3);
    for (std::size_t i = 0; i < 4; ++i) confident(static_cast<Eigen::Index>(i), labels[i]) = 60.0;
    EXPECT_LE(cross_entropy(confident, labels, mask), 1e-20);
}

TEST(Loss, MatchesDirectLogSoftmax) {
    std::mt19937_64 rng(5);
    const Matrix logits = oracle::random_matrix(6, 4, rng, 3.0);
    const std::vector<int> labels{3, 0, 1, 1, 2, 0};
    const std::vector<std::size_t> mask{1, 2, 5};
    double expected = 0.0;
    for (auto i : mask) {
        const auto r = static_cast<Eigen::Index>(i);
        expected -= logits(r, labels[i]) - std::log(logits.row(r).array().exp().sum());
    }
    EXPECT_NEAR(cross_entropy(logits, labels, mask), expected / 3.0, 1e-12);
}

TEST(Accuracy, ArgmaxWithLowestIndexTieBreak) {
    Matrix logits(3, 2);
    logits << 1, 1, 0, 2, 3, -1;
    EXPECT_DOUBLE_EQ(accuracy(logits, {0, 1, 1}, {0, 1, 2}), 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(accuracy(logits, {1, 1, 0}, {0}), 0.0);
}

TEST(Gradients, MatchCentralDifferences) {
    const Toy t = toy(8, 3, 3, 6);
    for (auto kind : {AttentionKind::scaled_dot, AttentionKind::bahdanau}) {
        for (auto variant : {Variant::grand_l, Variant::grand_nl}) {
            for (auto s : {SchemeKind::explicit_euler, SchemeKind::rk4, SchemeKind::ab4}) {
                ModelConfig c = small_config(3, 3);
                c.attention_kind = kind;
                c.variant = variant;
                c.scheme.scheme = s;
                c.scheme.tau = 0.4;
                c.scheme.horizon = 2.0;
                GrandModel m = randomized(c, 6);
                const PatternPtr p = t.graph.adjacency_ptr();
                const auto lg = loss_and_gradients(m, p, t.x, t.labels, t.mask);
                EXPECT_NEAR(lg.loss, masked_loss(m, p, t), 1e-12);
                auto grads = parameter_tensors(lg.grads, c.diffusivity);
                auto params = parameter_tensors(m.params(), c.diffusivity);
                double worst = 0.0;
                for (std::size_t k = 0; k < params.size(); ++k) {
                    Matrix& w = *params[k].second;
                    for (Eigen::Index e = 0; e < w.size(); ++e) {
                        const double keep = w.data()[e], h = 1e-6;
                        w.data()[e] = keep + h;
                        const double up = masked_loss(m, p, t);
                        w.data()[e] = keep - h;
                        const double down = masked_loss(m, p, t);
                        w.data()[e] = keep;
                        const double fd = (up - down) / (2 * h);
                        const double g = grads[k].second->data()[e];
                        worst = std::max(worst, std::abs(fd - g) / std::max(1e-3, std::abs(fd)));
                    }
                }
                EXPECT_LE(worst, 1e-5) << to_string(variant) << " " << to_string(s) << " kind "
                                       << static_cast<int>(kind);
            }
        }
    }
}

TEST(Gradients, LinearModelEvaluatesAttentionOnce) {
    const Toy t = toy(8, 3, 2, 7);
    ModelConfig c = small_config(3, 2);
    c.scheme.tau = 0.25;
    c.scheme.horizon = 2.0;
    const GrandModel m = randomized(c, 7);
    Tape tape;
    const auto v = record_params(tape, m);
    record_logits(tape, m, v, t.x, t.graph.adjacency_ptr());
    EXPECT_EQ(tape.count("attention"), 1u);
    EXPECT_EQ(tape.count("diffuse"), 32u);

    GrandModel nl = m;
    nl.config().variant = Variant::grand_nl;
    Tape tape2;
    record_logits(tape2, nl, record_params(tape2, nl), t.x, t.graph.adjacency_ptr());
    EXPECT_EQ(tape2.count("attention"), 32u);
}

TEST(Gradients, ImplicitAndAdaptiveSchemesAreRejected) {
    const Toy t = toy(6, 2, 2, 8);
    for (auto s : {SchemeKind::implicit_euler, SchemeKind::dopri5, SchemeKind::expm, SchemeKind::am4_pc}) {
        ModelConfig c = small_config(2, 2);
        c.scheme.scheme = s;
        const GrandModel m = GrandModel::initialize(c, 1);
        try {
            loss_and_gradients(m, t.graph.adjacency_ptr(), t.x, t.labels, t.mask);
            FAIL() << to_string(s);
        } catch (const ConfigError& e) {
            EXPECT_NE(std::string(e.what()).find("unsupported configuration"), std::string::npos);
        }
    }
}

TEST(Params, CountIndependentOfHorizonAndStep) {
    ModelConfig c = small_config(5, 3);
    const std::size_t base = GrandModel::initialize(c, 1).parameter_count();
    EXPECT_EQ(base, 4u * 5 + 4 + 2u * 2 * 4 + 3u * 4 + 3);
    for (double horizon : {0.5, 8.0, 64.0}) {
        for (double tau : {0.1, 1.0}) {
            c.scheme.horizon = horizon;
            c.scheme.tau = tau;
            EXPECT_EQ(GrandModel::initialize(c, 1).parameter_count(), base);
        }
    }
    c.diffusivity = Diffusivity::uniform;
    EXPECT_EQ(GrandModel::initialize(c, 1).parameter_count(), 4u * 5 + 4 + 3u * 4 + 3);
}

TEST(Checkpoint, RoundTripReproducesLogits) {
    const Toy t = toy(12, 3, 2, 9);
    for (auto kind : {AttentionKind::scaled_dot, AttentionKind::bahdanau}) {
        ModelConfig c = small_config(3, 2);
        c.attention_kind = kind;
        c.heads = 2;
        c.variant = Variant::grand_nl_rw;
        c.rewire.top_k = 5;
        c.rewire.rho = 0.05;
        const GrandModel m = randomized(c, 9);
        const auto path = std::filesystem::temp_directory_path() / ("grand_ckpt_" + std::to_string(static_cast<int>(kind)) + ".json");
        save_checkpoint(path, m);
        const GrandModel back = load_checkpoint(path);
        std::filesystem::remove(path);
        EXPECT_EQ(back.config().variant, Variant::grand_nl_rw);
        EXPECT_EQ(back.config().rewire.top_k, 5u);
        EXPECT_EQ(back.parameter_count(), m.parameter_count());
        const auto pg = prepare_graph(c, t.graph);
        EXPECT_EQ((forward(m, pg, t.x).logits - forward(back, pg, t.x).logits).cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(Checkpoint, MalformedJsonIsRejected) {
    EXPECT_THROW(model_from_json(nlohmann::json::object()), Error);
    const ModelConfig c = small_config(3, 2);
    auto j = checkpoint_json(GrandModel::initialize(c, 1));
    j["tensors"]["encoder_weight"]["rows"] = 99;
    EXPECT_THROW(model_from_json(j), Error);
}

TEST(Train, DeterministicForFixedSeeds) {
    const Dataset ds = sbm_dataset(11);
    ModelConfig c = small_config(2, 2);
    c.hidden_dim = 8;
    TrainConfig tc;
    tc.epochs = 15;
    const auto pg = prepare_graph(c, ds.graph);
    const auto a = train(GrandModel::initialize(c, 5), pg, ds, tc);
    const auto b = train(GrandModel::initialize(c, 5), pg, ds, tc);
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t e = 0; e < a.history.size(); ++e) EXPECT_EQ(a.history[e].train_loss, b.history[e].train_loss);
    EXPECT_EQ(a.best.params().decoder_weight, b.best.params().decoder_weight);
}

TEST(Train, PatienceStopsEarlyAndKeepsBestCheckpoint) {
    const Dataset ds = sbm_dataset(12);
    ModelConfig c = small_config(2, 2);
    TrainConfig tc;
    tc.epochs = 400;
    tc.patience = 5;
    const auto pg = prepare_graph(c, ds.graph);
    const auto r = train(GrandModel::initialize(c, 1), pg, ds, tc);
    EXPECT_LT(r.history.size(), 400u);
    EXPECT_EQ(r.history.size(), r.best_epoch + 5);
    EXPECT_DOUBLE_EQ(evaluate(r.best, pg, ds).val_acc, r.best_val_acc);
    EXPECT_DOUBLE_EQ(evaluate(r.best, pg, ds).test_acc, r.test_acc);
}

TEST(Train, RejectsBadSettings) {
    const Dataset ds = sbm_dataset(13);
    ModelConfig c = small_config(2, 2);
    TrainConfig tc;
    tc.learning_rate = 0.0;
    EXPECT_THROW(train(GrandModel::initialize(c, 1), prepare_graph(c, ds.graph), ds, tc), ConfigError);
}

TEST(Train, SbmReachesHighAccuracyLikeLabelPropagation) {
    const Dataset ds = sbm_dataset(14);
    const double lp = oracle::label_propagation_accuracy(ds, ds.splits.test);
    ASSERT_GE(lp, 0.9) << "planted partition should be recoverable";
    ModelConfig c = small_config(2, 2);
    c.hidden_dim = 16;
    c.key_dim = 8;
    c.scheme.tau = 1.0;
    c.scheme.horizon = 4.0;
    TrainConfig tc;
    tc.epochs = 100;
    const auto r = train(GrandModel::initialize(c, 2), prepare_graph(c, ds.graph), ds, tc);
    EXPECT_GE(r.test_acc, 0.9);
}

TEST(Train, AttentionPreservesImageBoundaryBetterThanUniform) {
    // Label flips after T = 4.8 with tau = 0.8, learned attention against the
    // fixed random-walk diffusivity, summed over a few noise draws.
    std::size_t flips_attention = 0, flips_uniform = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        GridImageConfig gc;
        gc.seed = seed;
        const Dataset ds = synth_grid_image(gc);
        for (auto diffusivity : {Diffusivity::attention, Diffusivity::uniform}) {
            ModelConfig c = small_config(1, 2);
            c.hidden_dim = 8;
            c.key_dim = 4;
            c.variant = Variant::grand_nl;
            c.diffusivity = diffusivity;
            c.scheme.tau = 0.8;
            c.scheme.horizon = 4.8;
            TrainConfig tc;
            tc.epochs = 150;
            tc.patience = 0;
            const auto pg = prepare_graph(c, ds.graph);
            const auto r = train(GrandModel::initialize(c, seed), pg, ds, tc);
            const Matrix logits = forward(r.best, pg, ds.features).logits;
            std::size_t flips = 0;
            for (std::size_t i = 0; i < ds.num_nodes(); ++i) {
                Eigen::Index best = 0;
                logits.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
                flips += best != ds.labels[i];
            }
            (diffusivity == Diffusivity::attention ? flips_attention : flips_uniform) += flips;
        }
    }
    EXPECT_LT(flips_attention, flips_uniform);
}

TEST(DepthSweep, OneResultPerHorizon) {
    const Dataset ds = sbm_dataset(15);
    ModelConfig c = small_config(2, 2);
    TrainConfig tc;
    tc.epochs = 3;
    const auto pts = depth_sweep(c, ds, {1.0, 2.0, 4.0}, tc, 1);
    ASSERT_EQ(pts.size(), 3u);
    EXPECT_DOUBLE_EQ(pts[2].horizon, 4.0);
}
