// grand: diffusion, training and experiment driver.
//
// Exit codes: 0 ok, 2 configuration error, 3 numeric failure, 4 I/O error.

#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "grand/grand.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { ok = 0, config_error = 2, numeric_error = 3, io_error = 4 };

struct DataOptions {
    std::string dir;
    bool normalize = true;
    bool lcc = false;
};

struct ModelOptions {
    std::string variant = "grand-l";
    std::string scheme = "rk4";
    double tau = 1.0;
    double horizon = 1.0;
    double atol = 1e-8;
    double rtol = 1e-6;
    std::size_t hidden = 64;
    std::size_t key_dim = 16;
    std::size_t heads = 1;
    std::string attention = "scaled-dot";
    std::string scale = "dk";
    std::string diffusivity = "attention";
    bool ppr = true;
    double alpha = 0.15;
    std::size_t top_k = 64;
    double rho = 0.0;
};

struct TrainOptions {
    std::size_t epochs = 200;
    double lr = 0.01;
    double weight_decay = 5e-4;
    std::size_t patience = 50;
    std::string optimizer = "adam";
};

struct Common {
    std::string out;
    std::uint64_t seed = 0;
};

void add_data(CLI::App* cmd, DataOptions& d) {
    cmd->add_option("--data", d.dir, "dataset directory (edges.tsv, features.csv, labels.txt, splits.json)")->required();
    cmd->add_flag("--normalize,!--no-normalize", d.normalize, "row-normalize input features");
    cmd->add_flag("--lcc,!--no-lcc", d.lcc, "restrict to the largest connected component");
}

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--out", c.out, "output directory")->required();
    cmd->add_option("--seed", c.seed, "random seed");
}

void add_model(CLI::App* cmd, ModelOptions& m) {
    cmd->add_option("--variant", m.variant, "grand-l | grand-nl | grand-nl-rw")->capture_default_str();
    cmd->add_option("--scheme", m.scheme, "explicit-euler | implicit-euler | rk4 | ab4 | am4-pc | dopri5 | expm")
        ->capture_default_str();
    cmd->add_option("--tau", m.tau, "step size")->capture_default_str();
    cmd->add_option("--t", m.horizon, "integration time T")->capture_default_str();
    cmd->add_option("--atol", m.atol, "dopri5 absolute tolerance")->capture_default_str();
    cmd->add_option("--rtol", m.rtol, "dopri5 relative tolerance")->capture_default_str();
    cmd->add_option("--hidden", m.hidden, "hidden width d")->capture_default_str();
    cmd->add_option("--key-dim", m.key_dim, "attention key width d_k")->capture_default_str();
    cmd->add_option("--heads", m.heads, "attention heads")->capture_default_str();
    cmd->add_option("--attention", m.attention, "scaled-dot | bahdanau")->capture_default_str();
    cmd->add_option("--logit-scale", m.scale, "dk | sqrt-dk")->capture_default_str();
    cmd->add_option("--diffusivity", m.diffusivity, "attention | uniform")->capture_default_str();
    cmd->add_flag("--ppr,!--no-ppr", m.ppr, "PPR densification before rewiring (grand-nl-rw)");
    cmd->add_option("--ppr-alpha", m.alpha, "PPR teleport probability")->capture_default_str();
    cmd->add_option("--top-k", m.top_k, "PPR coefficients kept per node")->capture_default_str();
    cmd->add_option("--rho", m.rho, "attention threshold")->capture_default_str();
}

void add_train(CLI::App* cmd, TrainOptions& t) {
    cmd->add_option("--epochs", t.epochs, "training epochs")->capture_default_str();
    cmd->add_option("--lr", t.lr, "learning rate")->capture_default_str();
    cmd->add_option("--weight-decay", t.weight_decay, "L2 weight decay")->capture_default_str();
    cmd->add_option("--patience", t.patience, "early-stop patience in epochs (0 = off)")->capture_default_str();
    cmd->add_option("--optimizer", t.optimizer, "adam | sgd")->capture_default_str();
}

json to_json(const DataOptions& d) { return {{"data", d.dir}, {"normalize", d.normalize}, {"lcc", d.lcc}}; }

json to_json(const ModelOptions& m) {
    return {{"variant", m.variant}, {"scheme", m.scheme},   {"tau", m.tau},         {"t", m.horizon},
            {"atol", m.atol},       {"rtol", m.rtol},       {"hidden", m.hidden},   {"key_dim", m.key_dim},
            {"heads", m.heads},     {"attention", m.attention}, {"logit_scale", m.scale},
            {"diffusivity", m.diffusivity}, {"ppr", m.ppr}, {"ppr_alpha", m.alpha}, {"top_k", m.top_k},
            {"rho", m.rho}};
}

json to_json(const TrainOptions& t) {
    return {{"epochs", t.epochs}, {"lr", t.lr}, {"weight_decay", t.weight_decay}, {"patience", t.patience},
            {"optimizer", t.optimizer}};
}

grand::Dataset load(const DataOptions& d) {
    auto ds = grand::load_dataset(d.dir, grand::LoadOptions{.row_normalize = d.normalize});
    return d.lcc ? grand::largest_connected_component(ds) : ds;
}

grand::ModelConfig model_config(const ModelOptions& m, const grand::Dataset& ds) {
    grand::ModelConfig c;
    c.input_dim = static_cast<std::size_t>(ds.features.cols());
    c.classes = static_cast<std::size_t>(std::max(ds.classes, 1));
    c.hidden_dim = m.hidden;
    c.key_dim = m.key_dim;
    c.heads = m.heads;
    if (m.attention == "scaled-dot") {
        c.attention_kind = grand::AttentionKind::scaled_dot;
    } else if (m.attention == "bahdanau") {
        c.attention_kind = grand::AttentionKind::bahdanau;
    } else {
        throw grand::ConfigError("unknown attention '" + m.attention + "'");
    }
    if (m.scale == "dk") {
        c.logit_scale = grand::LogitScale::key_dim;
    } else if (m.scale == "sqrt-dk") {
        c.logit_scale = grand::LogitScale::sqrt_key_dim;
    } else {
        throw grand::ConfigError("unknown logit scale '" + m.scale + "'");
    }
    c.variant = grand::parse_variant(m.variant);
    c.diffusivity = grand::parse_diffusivity(m.diffusivity);
    c.scheme.scheme = grand::parse_scheme(m.scheme);
    c.scheme.tau = m.tau;
    c.scheme.horizon = m.horizon;
    c.scheme.atol = m.atol;
    c.scheme.rtol = m.rtol;
    c.rewire.ppr = m.ppr;
    c.rewire.alpha = m.alpha;
    c.rewire.top_k = m.top_k;
    c.rewire.rho = m.rho;
    c.validate();
    return c;
}

grand::TrainConfig train_config(const TrainOptions& t, std::uint64_t seed) {
    grand::TrainConfig c;
    c.epochs = t.epochs;
    c.learning_rate = t.lr;
    c.weight_decay = t.weight_decay;
    c.patience = t.patience;
    c.seed = seed;
    if (t.optimizer == "adam") {
        c.optimizer = grand::OptimizerKind::adam;
    } else if (t.optimizer == "sgd") {
        c.optimizer = grand::OptimizerKind::sgd;
    } else {
        throw grand::ConfigError("unknown optimizer '" + t.optimizer + "'");
    }
    c.validate();
    return c;
}

std::vector<fs::path> dataset_files(const std::string& dir) {
    return {fs::path(dir) / "edges.tsv", fs::path(dir) / "features.csv", fs::path(dir) / "labels.txt",
            fs::path(dir) / "splits.json"};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw grand::IoError("cannot write " + path.string());
    out << text;
}

void write_field(const fs::path& path, const grand::NodeField& x) {
    std::ofstream out(path);
    if (!out) throw grand::IoError("cannot write " + path.string());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) out << (c ? "," : "") << grand::detail::format_real(x(i, c));
        out << '\n';
    }
}

std::string fmt(double v) { return grand::detail::format_real(v); }

/// Runs one command body, maps failures to the exit-code contract and always
/// leaves one manifest.json in the output directory.
int run_command(grand::cli::RunManifest& manifest, const std::string& out_dir,
                const std::function<void(std::vector<std::string>&)>& body) {
    const auto start = std::chrono::steady_clock::now();
    int code = ok;
    try {
        fs::create_directories(out_dir);
        body(manifest.outputs);
    } catch (const grand::Error& e) {
        manifest.error = e.what();
        switch (e.kind()) {
            case grand::ErrorKind::config: code = config_error; break;
            case grand::ErrorKind::numeric: code = numeric_error; break;
            case grand::ErrorKind::io: code = io_error; break;
        }
    } catch (const fs::filesystem_error& e) {
        manifest.error = e.what();
        code = io_error;
    } catch (const std::exception& e) {
        manifest.error = e.what();
        code = numeric_error;
    }
    if (!manifest.error.empty()) std::cerr << "error: " << manifest.error << '\n';
    manifest.exit_code = code;
    manifest.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    try {
        manifest.write(out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return code == ok ? io_error : code;
    }
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph neural diffusion: integrate, train and reproduce experiments"};
    app.require_subcommand(1);

    Common common;
    DataOptions data;
    ModelOptions model;
    TrainOptions training;
    std::string checkpoint;
    std::vector<double> horizons{2, 4, 8, 16, 32};
    bool baseline = false;
    std::vector<std::string> schemes{"explicit-euler", "rk4", "ab4", "am4-pc"};
    std::vector<double> taus{0.005, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0};
    std::vector<std::size_t> ks{1, 2, 4, 8, 16, 32, 64};
    std::size_t timing_epochs = 20;

    auto* diffuse = app.add_subcommand("diffuse", "integrate X(0) to X(T) with an untrained or saved model");
    auto* train = app.add_subcommand("train", "train a model; writes metrics.csv and checkpoint.json");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    auto* depth = app.add_subcommand("depth-sweep", "train one model per integration time T");
    auto* solvers = app.add_subcommand("solver-compare", "error and stability of each scheme on a frozen system");
    auto* rewire = app.add_subcommand("rewire-sweep", "PPR top-K sparsity vs speed and accuracy");
    auto* stability = app.add_subcommand("stability", "stability report for the attention operator at X(0)");
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");

    for (auto* cmd : {diffuse, train, eval, depth, solvers, rewire, stability}) {
        add_data(cmd, data);
        add_common(cmd, common);
    }
    for (auto* cmd : {diffuse, train, depth, solvers, rewire, stability}) add_model(cmd, model);
    for (auto* cmd : {train, depth, rewire}) add_train(cmd, training);
    diffuse->add_option("--checkpoint", checkpoint, "use a saved model instead of a fresh one");
    solvers->add_option("--checkpoint", checkpoint, "use a saved model instead of a fresh one");
    stability->add_option("--checkpoint", checkpoint, "use a saved model instead of a fresh one");
    eval->add_option("--checkpoint", checkpoint, "checkpoint.json from train")->required();
    depth->add_option("--ts", horizons, "integration times")->delimiter(',')->capture_default_str();
    depth->add_flag("--baseline", baseline, "also sweep the uniform-diffusivity baseline");
    solvers->add_option("--schemes", schemes, "schemes to compare")->delimiter(',')->capture_default_str();
    solvers->add_option("--taus", taus, "step sizes")->delimiter(',')->capture_default_str();
    rewire->add_option("--k-values", ks, "top-K values")->delimiter(',')->capture_default_str();
    rewire->add_option("--timing-epochs", timing_epochs, "epochs timed per K (minimum is reported)")
        ->capture_default_str();

    grand::SbmConfig sbm;
    grand::GridImageConfig grid;
    std::string kind = "sbm";
    std::string shape = "disk";
    synth->add_option("--out", common.out, "output dataset directory")->required();
    synth->add_option("--seed", common.seed, "random seed");
    synth->add_option("--kind", kind, "sbm | grid")->capture_default_str();
    synth->add_option("--nodes", sbm.nodes, "SBM node count")->capture_default_str();
    synth->add_option("--blocks", sbm.blocks, "SBM block count")->capture_default_str();
    synth->add_option("--p-in", sbm.p_in, "SBM within-block edge probability")->capture_default_str();
    synth->add_option("--p-out", sbm.p_out, "SBM between-block edge probability")->capture_default_str();
    synth->add_option("--noise", sbm.feature_noise, "feature noise standard deviation")->capture_default_str();
    synth->add_option("--noise-dims", sbm.noise_dims, "extra pure-noise feature columns")->capture_default_str();
    synth->add_option("--train-per-class", sbm.train_per_class, "training nodes per class")->capture_default_str();
    synth->add_option("--val-size", sbm.val_size, "validation nodes")->capture_default_str();
    synth->add_option("--width", grid.width, "grid width")->capture_default_str();
    synth->add_option("--height", grid.height, "grid height")->capture_default_str();
    synth->add_option("--shape", shape, "disk | square | background")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : config_error;
    }

    grand::cli::RunManifest manifest;
    manifest.seed = common.seed;
    CLI::App* cmd = app.get_subcommands().front();
    manifest.command = cmd->get_name();

    std::vector<fs::path> inputs;
    if (cmd != synth) {
        inputs = dataset_files(data.dir);
        manifest.config["data"] = to_json(data);
    }
    if (!checkpoint.empty()) inputs.emplace_back(checkpoint);
    if (cmd == diffuse || cmd == train || cmd == depth || cmd == solvers || cmd == rewire || cmd == stability) {
        manifest.config["model"] = to_json(model);
    }
    if (cmd == train || cmd == depth || cmd == rewire) manifest.config["train"] = to_json(training);
    if (!checkpoint.empty()) manifest.config["checkpoint"] = checkpoint;

    const fs::path out = common.out;
    return run_command(manifest, common.out, [&](std::vector<std::string>& outputs) {
        manifest.input_hash = grand::cli::inputs_hash(inputs);

        if (cmd == synth) {
            manifest.config["synth"] = {{"kind", kind}, {"nodes", sbm.nodes}, {"blocks", sbm.blocks}, {"p_in", sbm.p_in},
                                        {"p_out", sbm.p_out}, {"noise", sbm.feature_noise}, {"noise_dims", sbm.noise_dims},
                                        {"width", grid.width}, {"height", grid.height}, {"shape", shape}};
            grand::Dataset ds;
            if (kind == "sbm") {
                sbm.seed = common.seed;
                ds = grand::synth_sbm(sbm);
            } else if (kind == "grid") {
                grid.seed = common.seed;
                grid.intensity_noise = sbm.feature_noise;
                if (shape == "disk") {
                    grid.shape = grand::ImageShape::disk;
                } else if (shape == "square") {
                    grid.shape = grand::ImageShape::square;
                } else if (shape == "background") {
                    grid.shape = grand::ImageShape::background;
                } else {
                    throw grand::ConfigError("unknown shape '" + shape + "'");
                }
                ds = grand::synth_grid_image(grid);
            } else {
                throw grand::ConfigError("unknown synthetic kind '" + kind + "'");
            }
            grand::save_dataset(out, ds);
            outputs = {"edges.tsv", "features.csv", "labels.txt", "splits.json"};
            return;
        }

        const grand::Dataset ds = load(data);

        if (cmd == eval) {
            const grand::GrandModel m = grand::load_checkpoint(checkpoint);
            const auto pg = grand::prepare_graph(m.config(), ds.graph);
            const auto ev = grand::evaluate(m, pg, ds);
            const json result{{"train_acc", ev.train_acc}, {"val_acc", ev.val_acc}, {"test_acc", ev.test_acc}};
            write_text(out / "eval.json", result.dump(2) + "\n");
            outputs.push_back("eval.json");
            std::cout << result.dump() << '\n';
            return;
        }

        const grand::ModelConfig mc = model_config(model, ds);
        auto make_model = [&] {
            if (checkpoint.empty()) return grand::GrandModel::initialize(mc, common.seed);
            grand::GrandModel m = grand::load_checkpoint(checkpoint);
            m.config().scheme = mc.scheme;
            m.check();
            return m;
        };

        if (cmd == diffuse) {
            const grand::GrandModel m = make_model();
            const auto pg = grand::prepare_graph(m.config(), ds.graph);
            const auto result = grand::forward(m, pg, ds.features);
            const grand::NodeField x0 = m.encode(ds.features);
            const auto violations = grand::envelope_monitor(result.trace, x0);
            write_field(out / "state.csv", result.state);
            std::ofstream trace(out / "trace.csv");
            if (!trace) throw grand::IoError("cannot write trace.csv");
            trace << "t,tau,err,min,max\n";
            for (const auto& s : result.trace.steps) {
                const double lo = s.min.empty() ? 0.0 : *std::min_element(s.min.begin(), s.min.end());
                const double hi = s.max.empty() ? 0.0 : *std::max_element(s.max.begin(), s.max.end());
                trace << fmt(s.t) << ',' << fmt(s.tau) << ',' << (std::isnan(s.error) ? "" : fmt(s.error)) << ','
                      << fmt(lo) << ',' << fmt(hi) << '\n';
            }
            const json summary{{"steps", result.trace.steps.size()},
                               {"evaluations", result.trace.evaluations},
                               {"rejected", result.trace.rejected},
                               {"linear_iterations", result.trace.linear_iterations},
                               {"envelope_violations", violations.size()}};
            write_text(out / "summary.json", summary.dump(2) + "\n");
            outputs = {"state.csv", "trace.csv", "summary.json"};
            return;
        }

        if (cmd == train) {
            const auto pg = grand::prepare_graph(mc, ds.graph);
            const auto result = grand::train(make_model(), pg, ds, train_config(training, common.seed));
            grand::write_metrics_csv(out / "metrics.csv", result.history);
            grand::save_checkpoint(out / "checkpoint.json", result.best);
            const json summary{{"best_epoch", result.best_epoch},
                               {"best_val_acc", result.best_val_acc},
                               {"test_acc", result.test_acc},
                               {"parameters", result.best.parameter_count()},
                               {"seconds_per_epoch", result.seconds_per_epoch}};
            write_text(out / "summary.json", summary.dump(2) + "\n");
            outputs = {"metrics.csv", "checkpoint.json", "summary.json"};
            std::cout << summary.dump() << '\n';
            return;
        }

        if (cmd == depth) {
            const auto tc = train_config(training, common.seed);
            std::vector<grand::Diffusivity> kinds{mc.diffusivity};
            if (baseline && mc.diffusivity != grand::Diffusivity::uniform) kinds.push_back(grand::Diffusivity::uniform);
            std::ofstream csv(out / "depth.csv");
            if (!csv) throw grand::IoError("cannot write depth.csv");
            csv << "diffusivity,T,val_acc,test_acc\n";
            std::vector<grand::Series> series;
            for (auto kind_d : kinds) {
                grand::ModelConfig c = mc;
                c.diffusivity = kind_d;
                grand::Series s{std::string(grand::to_string(kind_d)), {}, {}};
                for (const auto& p : grand::depth_sweep(c, ds, horizons, tc, common.seed)) {
                    csv << grand::to_string(kind_d) << ',' << fmt(p.horizon) << ',' << fmt(p.val_acc) << ','
                        << fmt(p.test_acc) << '\n';
                    s.x.push_back(p.horizon);
                    s.y.push_back(p.test_acc);
                }
                series.push_back(std::move(s));
            }
            write_text(out / "depth.svg",
                       grand::line_chart_svg(series, {"Test accuracy vs integration time", "T", "test accuracy"}));
            outputs = {"depth.csv", "depth.svg"};
            return;
        }

        if (cmd == solvers) {
            const grand::GrandModel m = make_model();
            const grand::NodeField x0 = m.encode(ds.features);
            const auto pg = grand::prepare_graph(m.config(), ds.graph);
            const auto shifted = grand::shift_operator(grand::diffusivity_at(m, x0, grand::diffusion_pattern(m, pg, ds.features)));
            std::vector<grand::SchemeKind> kinds;
            for (const auto& s : schemes) kinds.push_back(grand::parse_scheme(s));
            const auto runs = grand::solver_compare(shifted, x0, mc.scheme.horizon, kinds, taus, mc.scheme);
            std::ofstream csv(out / "solver_compare.csv");
            if (!csv) throw grand::IoError("cannot write solver_compare.csv");
            csv << "scheme,tau,seconds,error,diverged\n";
            std::vector<grand::Series> series;
            for (const auto& r : runs) {
                csv << grand::to_string(r.scheme) << ',' << fmt(r.tau) << ',' << fmt(r.seconds) << ','
                    << (std::isnan(r.error) ? "" : fmt(r.error)) << ',' << (r.diverged ? 1 : 0) << '\n';
                const std::string name(grand::to_string(r.scheme));
                if (series.empty() || series.back().name != name) series.push_back({name, {}, {}});
                if (!r.diverged) {
                    series.back().x.push_back(r.tau);
                    series.back().y.push_back(r.error);
                }
            }
            write_text(out / "solver_compare.svg",
                       grand::line_chart_svg(series, {"Error vs step size (diverged runs omitted)", "tau",
                                                      "relative error", true, true}));
            outputs = {"solver_compare.csv", "solver_compare.svg"};
            return;
        }

        if (cmd == rewire) {
            const auto points =
                grand::rewire_sweep(mc, ds, ks, train_config(training, common.seed), common.seed, timing_epochs);
            std::ofstream csv(out / "rewire_sweep.csv");
            if (!csv) throw grand::IoError("cannot write rewire_sweep.csv");
            csv << "K,edges,nnz,seconds_per_epoch,val_acc,test_acc\n";
            grand::Series time{"seconds per epoch", {}, {}}, acc{"test accuracy", {}, {}};
            for (const auto& p : points) {
                csv << p.top_k << ',' << p.edges << ',' << p.pattern_nnz << ',' << fmt(p.seconds_per_epoch) << ','
                    << fmt(p.val_acc) << ',' << fmt(p.test_acc) << '\n';
                acc.x.push_back(static_cast<double>(p.top_k));
                acc.y.push_back(p.test_acc);
                time.x.push_back(static_cast<double>(p.top_k));
                time.y.push_back(p.seconds_per_epoch);
            }
            write_text(out / "rewire_accuracy.svg",
                       grand::line_chart_svg({acc}, {"Accuracy vs K", "K", "test accuracy", true}));
            write_text(out / "rewire_time.svg",
                       grand::line_chart_svg({time}, {"Time per epoch vs K", "K", "seconds", true}));
            outputs = {"rewire_sweep.csv", "rewire_accuracy.svg", "rewire_time.svg"};
            return;
        }

        if (cmd == stability) {
            const grand::GrandModel m = make_model();
            const auto pg = grand::prepare_graph(m.config(), ds.graph);
            const grand::NodeField x0 = m.encode(ds.features);
            const auto a = grand::diffusivity_at(m, x0, grand::diffusion_pattern(m, pg, ds.features));
            const json report{{"tau", mc.scheme.tau},
                              {"explicit", grand::to_json(grand::verify_explicit_stability(a, mc.scheme.tau))},
                              {"implicit", grand::to_json(grand::verify_implicit_stability(a, mc.scheme.tau))}};
            write_text(out / "stability.json", report.dump(2) + "\n");
            outputs = {"stability.json"};
            return;
        }
    });
}
