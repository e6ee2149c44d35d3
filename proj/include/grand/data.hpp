#pragma once

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "grand/error.hpp"
#include "grand/graph.hpp"

namespace grand {

struct Splits {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

struct Dataset {
    Graph graph;
    Matrix features;  // n x d_in
    std::vector<int> labels;
    Splits splits;
    int classes = 0;

    std::size_t num_nodes() const { return graph.num_nodes(); }

    /// Throws unless labels, splits and feature rows agree with the graph.
    void validate() const {
        const std::size_t n = graph.num_nodes();
        if (static_cast<std::size_t>(features.rows()) != n) {
            throw DimensionError("dataset has " + std::to_string(features.rows()) + " feature rows for " +
                                 std::to_string(n) + " nodes");
        }
        if (labels.size() != n) {
            throw DimensionError("dataset has " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                                 " nodes");
        }
        for (int y : labels) {
            if (y < 0 || y >= classes) throw ConfigError("label " + std::to_string(y) + " outside [0, classes)");
        }
        if (!features.allFinite()) throw ConfigError("features must be finite");
        std::vector<char> seen(n, 0);
        for (const auto* part : {&splits.train, &splits.val, &splits.test}) {
            for (std::size_t i : *part) {
                if (i >= n) throw ConfigError("split index " + std::to_string(i) + " out of range");
                if (seen[i]) throw ConfigError("node " + std::to_string(i) + " appears in more than one split");
                seen[i] = 1;
            }
        }
    }
};

struct LoadOptions {
    bool row_normalize = true;
};

namespace detail {

inline std::ifstream open_input(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p.string());
    return in;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline bool parse_index(const std::string& tok, std::size_t& out) {
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) return false;
    errno = 0;
    const unsigned long long v = std::strtoull(tok.c_str(), nullptr, 10);
    if (errno == ERANGE) return false;
    out = static_cast<std::size_t>(v);
    return true;
}

inline bool parse_real(const std::string& tok, double& out) {
    const std::string t = trim(tok);
    if (t.empty()) return false;
    char* end = nullptr;
    errno = 0;
    out = std::strtod(t.c_str(), &end);
    return end == t.c_str() + t.size() && errno != ERANGE && std::isfinite(out);
}

/// Shortest decimal that reads back to the same double.
inline std::string format_real(double v) {
    char buf[32];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

}  // namespace detail

inline Matrix row_normalized(Matrix x) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double s = x.row(i).cwiseAbs().sum();
        if (s > 0.0) x.row(i) /= s;
    }
    return x;
}

/// Reads edges.tsv, features.csv, labels.txt and splits.json from `dir`.
inline Dataset load_dataset(const std::filesystem::path& dir, LoadOptions options = {}) {
    namespace fs = std::filesystem;
    Dataset ds;

    // features.csv defines the node count.
    std::vector<std::vector<double>> rows;
    {
        const auto path = dir / "features.csv";
        auto in = detail::open_input(path);
        std::string line;
        std::size_t lineno = 0, width = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (detail::trim(line).empty()) continue;
            std::vector<double> row;
            std::stringstream ss(line);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                double v;
                if (!detail::parse_real(tok, v)) throw ParseError(path.string(), lineno, "bad number '" + tok + "'");
                row.push_back(v);
            }
            if (row.empty()) throw ParseError(path.string(), lineno, "empty feature row");
            if (width == 0) width = row.size();
            if (row.size() != width) {
                throw ParseError(path.string(), lineno,
                                 "expected " + std::to_string(width) + " columns, got " + std::to_string(row.size()));
            }
            rows.push_back(std::move(row));
        }
        if (rows.empty()) throw ParseError(path.string(), lineno, "no feature rows");
        ds.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t c = 0; c < width; ++c) ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
        }
    }
    const std::size_t n = rows.size();

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    {
        const auto path = dir / "edges.tsv";
        auto in = detail::open_input(path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string t = detail::trim(line);
            if (t.empty()) continue;
            const auto tab = t.find('\t');
            std::size_t a = 0, b = 0;
            if (tab == std::string::npos || !detail::parse_index(detail::trim(t.substr(0, tab)), a) ||
                !detail::parse_index(detail::trim(t.substr(tab + 1)), b)) {
                throw ParseError(path.string(), lineno, "expected '<i>\\t<j>'");
            }
            if (a >= n || b >= n) {
                throw ParseError(path.string(), lineno,
                                 "node index exceeds feature row count " + std::to_string(n) + " (inconsistent node counts)");
            }
            if (a == b) throw ParseError(path.string(), lineno, "self-loop in base graph");
            pairs.emplace_back(a, b);
        }
    }
    ds.graph = Graph::from_edges(n, pairs);

    {
        const auto path = dir / "labels.txt";
        auto in = detail::open_input(path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string t = detail::trim(line);
            if (t.empty()) continue;
            std::size_t y;
            if (!detail::parse_index(t, y)) throw ParseError(path.string(), lineno, "bad label '" + t + "'");
            ds.labels.push_back(static_cast<int>(y));
        }
        if (ds.labels.size() != n) {
            throw IoError(path.string() + ": " + std::to_string(ds.labels.size()) + " labels for " + std::to_string(n) +
                          " nodes (inconsistent node counts)");
        }
        ds.classes = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    }

    {
        const auto path = dir / "splits.json";
        auto in = detail::open_input(path);
        nlohmann::json j;
        try {
            in >> j;
            ds.splits.train = j.at("train").get<std::vector<std::size_t>>();
            ds.splits.val = j.at("val").get<std::vector<std::size_t>>();
            ds.splits.test = j.at("test").get<std::vector<std::size_t>>();
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path.string() + ": " + e.what());
        }
    }
    try {
        ds.validate();
    } catch (const ConfigError& e) {
        throw IoError(dir.string() + ": " + e.what());
    }
    if (options.row_normalize) ds.features = row_normalized(std::move(ds.features));
    return ds;
}

/// Writes the canonical layout: edges sorted by (i, j) with i < j, round-trip
/// decimals, one label per line, splits as JSON arrays.
inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream out(dir / name);
        if (!out) throw IoError("cannot write " + (dir / name).string());
        return out;
    };
    {
        auto out = open("edges.tsv");
        for (const auto& e : ds.graph.edges()) out << e.i << '\t' << e.j << '\n';
    }
    {
        auto out = open("features.csv");
        for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
            for (Eigen::Index c = 0; c < ds.features.cols(); ++c) {
                if (c) out << ',';
                out << detail::format_real(ds.features(i, c));
            }
            out << '\n';
        }
    }
    {
        auto out = open("labels.txt");
        for (int y : ds.labels) out << y << '\n';
    }
    {
        auto out = open("splits.json");
        nlohmann::json j{{"train", ds.splits.train}, {"val", ds.splits.val}, {"test", ds.splits.test}};
        out << j.dump() << '\n';
    }
}

/// Connected component id per node, numbered in order of each component's lowest node.
inline std::vector<std::size_t> connected_components(const Graph& g, std::size_t* count = nullptr) {
    const std::size_t n = g.num_nodes();
    constexpr auto unset = static_cast<std::size_t>(-1);
    std::vector<std::size_t> comp(n, unset);
    std::size_t next = 0;
    const auto& adj = g.adjacency();
    for (std::size_t s = 0; s < n; ++s) {
        if (comp[s] != unset) continue;
        std::queue<std::size_t> q;
        q.push(s);
        comp[s] = next;
        while (!q.empty()) {
            const std::size_t u = q.front();
            q.pop();
            for (std::size_t k = adj.row_begin(u); k < adj.row_end(u); ++k) {
                const std::size_t v = adj.col_indices[k];
                if (comp[v] == unset) {
                    comp[v] = next;
                    q.push(v);
                }
            }
        }
        ++next;
    }
    if (count) *count = next;
    return comp;
}

/// Induced subgraph on the largest component, reindexed in original order.
/// Ties go to the component containing the lowest original index.
inline Dataset largest_connected_component(const Dataset& ds, std::vector<std::size_t>* kept_nodes = nullptr) {
    std::size_t count = 0;
    const auto comp = connected_components(ds.graph, &count);
    std::vector<std::size_t> sizes(count, 0);
    for (auto c : comp) ++sizes[c];
    const std::size_t best = count == 0 ? 0 : static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    constexpr auto dropped = static_cast<std::size_t>(-1);
    std::vector<std::size_t> remap(ds.num_nodes(), dropped), keep;
    for (std::size_t i = 0; i < ds.num_nodes(); ++i) {
        if (comp[i] == best) {
            remap[i] = keep.size();
            keep.push_back(i);
        }
    }
    Dataset out;
    out.classes = ds.classes;
    out.features.resize(static_cast<Eigen::Index>(keep.size()), ds.features.cols());
    for (std::size_t r = 0; r < keep.size(); ++r) {
        out.features.row(static_cast<Eigen::Index>(r)) = ds.features.row(static_cast<Eigen::Index>(keep[r]));
        out.labels.push_back(ds.labels[keep[r]]);
    }
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<double> weights;
    for (std::size_t k = 0; k < ds.graph.num_edges(); ++k) {
        const auto& e = ds.graph.edges()[k];
        if (remap[e.i] == dropped) continue;
        pairs.emplace_back(remap[e.i], remap[e.j]);
        weights.push_back(ds.graph.weights()[k]);
    }
    out.graph = Graph::from_edges(keep.size(), pairs, weights, Graph::Options{.allow_self_loops = ds.graph.has_self_loops()});
    auto map_split = [&](const std::vector<std::size_t>& in) {
        std::vector<std::size_t> res;
        for (auto i : in) {
            if (remap[i] != dropped) res.push_back(remap[i]);
        }
        return res;
    };
    out.splits = {map_split(ds.splits.train), map_split(ds.splits.val), map_split(ds.splits.test)};
    if (kept_nodes) *kept_nodes = keep;
    return out;
}

/// `train_per_class` random nodes per class for training, then up to
/// `val_size` (at most half of the remainder) for validation, rest test.
inline Splits random_split(const std::vector<int>& labels, int classes, std::size_t train_per_class,
                           std::size_t val_size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    Splits s;
    std::vector<std::size_t> taken(static_cast<std::size_t>(classes), 0), rest;
    for (auto i : order) {
        auto& t = taken[static_cast<std::size_t>(labels[i])];
        if (t < train_per_class) {
            s.train.push_back(i);
            ++t;
        } else {
            rest.push_back(i);
        }
    }
    const std::size_t nval = std::min(val_size, rest.size() / 2);
    s.val.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(nval));
    s.test.assign(rest.begin() + static_cast<std::ptrdiff_t>(nval), rest.end());
    for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
    return s;
}

struct SbmConfig {
    std::size_t blocks = 2;
    std::size_t nodes = 200;
    double p_in = 0.1;
    double p_out = 0.01;
    double feature_noise = 1.0;
    std::size_t noise_dims = 0;  // extra pure-noise feature columns
    std::size_t train_per_class = 20;
    std::size_t val_size = 500;
    bool require_connected = true;
    std::uint64_t seed = 0;
};

/// Stochastic block model with contiguous equal blocks. Features are the block
/// indicator plus N(0, noise^2). Unless require_connected is off, a sample is
/// accepted only when every block is internally connected and, for p_out > 0,
/// the whole graph is connected; up to 10 draws are tried.
inline Dataset synth_sbm(const SbmConfig& cfg) {
    if (cfg.blocks < 1 || cfg.nodes < cfg.blocks) throw ConfigError("SBM needs 1 <= blocks <= nodes");
    if (!(cfg.p_in > cfg.p_out) || cfg.p_out < 0.0 || cfg.p_in > 1.0) throw ConfigError("SBM needs 0 <= p_out < p_in <= 1");
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    const std::size_t n = cfg.nodes;
    std::vector<int> block(n);
    for (std::size_t i = 0; i < n; ++i) block[i] = static_cast<int>(i * cfg.blocks / n);

    for (int attempt = 0; attempt < 10; ++attempt) {
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const double p = block[i] == block[j] ? cfg.p_in : cfg.p_out;
                if (unit(rng) < p) pairs.emplace_back(i, j);
            }
        }
        Graph g = Graph::from_edges(n, pairs);
        std::size_t count = 0;
        const auto comp = connected_components(g, &count);
        bool ok = !cfg.require_connected || (cfg.p_out > 0.0 ? count == 1 : count == cfg.blocks);
        if (ok && cfg.require_connected && cfg.p_out == 0.0) {
            for (std::size_t i = 0; i < n; ++i) ok = ok && comp[i] == static_cast<std::size_t>(block[i]);
        }
        if (!ok) continue;

        Dataset ds;
        ds.graph = std::move(g);
        ds.classes = static_cast<int>(cfg.blocks);
        ds.labels = block;
        const auto width = static_cast<Eigen::Index>(cfg.blocks + cfg.noise_dims);
        ds.features = Matrix::Zero(static_cast<Eigen::Index>(n), width);
        for (std::size_t i = 0; i < n; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            ds.features(ii, block[i]) = 1.0;
            for (Eigen::Index c = 0; c < width; ++c) ds.features(ii, c) += cfg.feature_noise * noise(rng);
        }
        ds.splits = random_split(ds.labels, ds.classes, cfg.train_per_class, cfg.val_size, cfg.seed + 1);
        return ds;
    }
    throw NumericError("SBM sample stayed disconnected after 10 attempts");
}

enum class ImageShape { disk, square, background };

struct GridImageConfig {
    std::size_t width = 8;
    std::size_t height = 8;
    ImageShape shape = ImageShape::disk;
    double intensity_noise = 0.3;
    std::uint64_t seed = 0;
};

/// Figure mask for the built-in shapes, row-major over (y, x).
inline std::vector<int> image_mask(const GridImageConfig& cfg) {
    std::vector<int> mask(cfg.width * cfg.height, 0);
    const double cx = (static_cast<double>(cfg.width) - 1.0) / 2.0;
    const double cy = (static_cast<double>(cfg.height) - 1.0) / 2.0;
    const double radius = 0.35 * static_cast<double>(std::min(cfg.width, cfg.height));
    for (std::size_t y = 0; y < cfg.height; ++y) {
        for (std::size_t x = 0; x < cfg.width; ++x) {
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            int v = 0;
            switch (cfg.shape) {
                case ImageShape::disk: v = dx * dx + dy * dy <= radius * radius; break;
                case ImageShape::square: v = std::abs(dx) <= radius && std::abs(dy) <= radius; break;
                case ImageShape::background: v = 0; break;
            }
            mask[y * cfg.width + x] = v;
        }
    }
    return mask;
}

/// 4-connected pixel grid; label 1 for figure pixels, 0 for background; one
/// intensity feature (label plus noise). Half the pixels train, the rest
/// split evenly between validation and test.
inline Dataset synth_grid_image(const GridImageConfig& cfg) {
    if (cfg.width < 2 || cfg.height < 2) throw ConfigError("grid image needs width, height >= 2");
    const std::size_t n = cfg.width * cfg.height;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t y = 0; y < cfg.height; ++y) {
        for (std::size_t x = 0; x < cfg.width; ++x) {
            const std::size_t i = y * cfg.width + x;
            if (x + 1 < cfg.width) pairs.emplace_back(i, i + 1);
            if (y + 1 < cfg.height) pairs.emplace_back(i, i + cfg.width);
        }
    }
    Dataset ds;
    ds.graph = Graph::from_edges(n, pairs);
    ds.labels = image_mask(cfg);
    ds.classes = 2;
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    ds.features.resize(static_cast<Eigen::Index>(n), 1);
    for (std::size_t i = 0; i < n; ++i) ds.features(static_cast<Eigen::Index>(i), 0) = ds.labels[i] + cfg.intensity_noise * noise(rng);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t ntrain = n / 2;
    const std::size_t nval = (n - ntrain) / 2;
    ds.splits.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(ntrain));
    ds.splits.val.assign(order.begin() + static_cast<std::ptrdiff_t>(ntrain), order.begin() + static_cast<std::ptrdiff_t>(ntrain + nval));
    ds.splits.test.assign(order.begin() + static_cast<std::ptrdiff_t>(ntrain + nval), order.end());
    for (auto* part : {&ds.splits.train, &ds.splits.val, &ds.splits.test}) std::sort(part->begin(), part->end());
    return ds;
}

}  // namespace grand
