#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "oracles.hpp"

using namespace grand;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    explicit TempDir(const std::string& tag) : path_(fs::temp_directory_path() / ("grand_data_" + tag)) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

    void write(const std::string& name, const std::string& body) const { std::ofstream(path_ / name) << body; }

private:
    fs::path path_;
};

void write_two_node(const TempDir& d) {
    d.write("edges.tsv", "0\t1\n");
    d.write("features.csv", "1,0\n0,1\n");
    d.write("labels.txt", "0\n1\n");
    d.write("splits.json", R"({"train":[0],"val":[1],"test":[]})");
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Loader, TwoNodeFixture) {
    TempDir d("two");
    write_two_node(d);
    const Dataset ds = load_dataset(d.path());
    EXPECT_EQ(ds.num_nodes(), 2u);
    EXPECT_EQ(ds.graph.num_edges(), 1u);
    EXPECT_EQ(ds.classes, 2);
    EXPECT_EQ(ds.splits.train, std::vector<std::size_t>{0});
    EXPECT_DOUBLE_EQ(ds.features(0, 0), 1.0);
}

TEST(Loader, DuplicateAndReversedEdgesCollapse) {
    TempDir d("dup");
    write_two_node(d);
    d.write("edges.tsv", "0\t1\n1\t0\n0\t1\n");
    EXPECT_EQ(load_dataset(d.path()).graph.num_edges(), 1u);
}

TEST(Loader, RowNormalizationIsOptional) {
    TempDir d("norm");
    write_two_node(d);
    d.write("features.csv", "3,1\n0,0\n");
    const Dataset a = load_dataset(d.path());
    EXPECT_DOUBLE_EQ(a.features(0, 0), 0.75);
    EXPECT_DOUBLE_EQ(a.features(1, 1), 0.0);
    const Dataset b = load_dataset(d.path(), LoadOptions{.row_normalize = false});
    EXPECT_DOUBLE_EQ(b.features(0, 0), 3.0);
}

TEST(Loader, ParseErrorsCarryLineNumbers) {
    TempDir d("parse");
    write_two_node(d);
    d.write("features.csv", "1,0\n0,abc\n");
    try {
        load_dataset(d.path());
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    write_two_node(d);
    d.write("edges.tsv", "\n0 1\n");
    try {
        load_dataset(d.path());
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    write_two_node(d);
    d.write("features.csv", "1,0\n0\n");
    EXPECT_THROW(load_dataset(d.path()), ParseError);
}

TEST(Loader, InconsistentNodeCounts) {
    TempDir d("counts");
    write_two_node(d);
    d.write("edges.tsv", "0\t2\n");
    try {
        load_dataset(d.path());
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("inconsistent node counts"), std::string::npos);
    }
    write_two_node(d);
    d.write("labels.txt", "0\n1\n1\n");
    EXPECT_THROW(load_dataset(d.path()), IoError);
}

TEST(Loader, RejectsBaseSelfLoopsAndBadSplits) {
    TempDir d("bad");
    write_two_node(d);
    d.write("edges.tsv", "1\t1\n");
    EXPECT_THROW(load_dataset(d.path()), ParseError);
    write_two_node(d);
    d.write("splits.json", R"({"train":[0],"val":[0],"test":[]})");
    EXPECT_THROW(load_dataset(d.path()), IoError);
    write_two_node(d);
    d.write("splits.json", R"({"train":[0],"val":[5],"test":[]})");
    EXPECT_THROW(load_dataset(d.path()), IoError);
    write_two_node(d);
    d.write("splits.json", R"({"train":[0]})");
    EXPECT_THROW(load_dataset(d.path()), IoError);
}

TEST(Loader, MissingDirectoryIsIoError) {
    EXPECT_THROW(load_dataset("/nonexistent/grand/data"), IoError);
}

TEST(Saver, RoundTripIsByteIdentical) {
    SbmConfig c;
    c.nodes = 60;
    c.seed = 3;
    c.val_size = 10;
    c.train_per_class = 5;
    const Dataset ds = synth_sbm(c);
    TempDir a("rt_a"), b("rt_b");
    save_dataset(a.path(), ds);
    const Dataset back = load_dataset(a.path(), LoadOptions{.row_normalize = false});
    save_dataset(b.path(), back);
    for (const char* f : {"edges.tsv", "features.csv", "labels.txt", "splits.json"}) {
        EXPECT_EQ(slurp(a.path() / f), slurp(b.path() / f)) << f;
    }
    EXPECT_EQ(back.features, ds.features);
    EXPECT_EQ(back.labels, ds.labels);
}

TEST(Saver, EdgesAreCanonicallyOrdered) {
    TempDir a("canon"), b("canon_out");
    write_two_node(a);
    a.write("features.csv", "1\n1\n1\n1\n");
    a.write("labels.txt", "0\n0\n1\n1\n");
    a.write("edges.tsv", "3\t2\n1\t0\n2\t0\n");
    a.write("splits.json", R"({"train":[0,2],"val":[1],"test":[3]})");
    save_dataset(b.path(), load_dataset(a.path()));
    EXPECT_EQ(slurp(b.path() / "edges.tsv"), "0\t1\n0\t2\n2\t3\n");
}

TEST(Components, LargestComponentKeepsSplitRoles) {
    // {0,1,2} and {3,4}: the three-node component wins.
    Dataset ds;
    ds.graph = Graph::from_edges(5, std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 2}, {3, 4}});
    ds.features = Matrix::Identity(5, 5);
    ds.labels = {0, 1, 0, 1, 0};
    ds.classes = 2;
    ds.splits = {{0, 3}, {2, 4}, {1}};
    std::vector<std::size_t> kept;
    const Dataset lcc = largest_connected_component(ds, &kept);
    EXPECT_EQ(kept, (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_EQ(lcc.num_nodes(), 3u);
    EXPECT_EQ(lcc.splits.train, std::vector<std::size_t>{0});
    EXPECT_EQ(lcc.splits.val, std::vector<std::size_t>{2});
    EXPECT_EQ(lcc.splits.test, std::vector<std::size_t>{1});
    EXPECT_EQ(lcc.features(2, 2), 1.0);
}

TEST(Components, TieGoesToLowestIndex) {
    // Every way of splitting six nodes into two components of three.
    std::size_t checked = 0;
    for (unsigned mask = 0; mask < 64; ++mask) {
        if (__builtin_popcount(mask) != 3) continue;
        std::vector<std::size_t> a, b;
        for (std::size_t i = 0; i < 6; ++i) ((mask >> i) & 1u ? a : b).push_back(i);
        std::vector<std::pair<std::size_t, std::size_t>> pairs{{a[0], a[1]}, {a[1], a[2]}, {b[0], b[1]}, {b[1], b[2]}};
        Dataset ds;
        ds.graph = Graph::from_edges(6, pairs);
        ds.features = Matrix::Zero(6, 1);
        ds.labels.assign(6, 0);
        ds.classes = 1;
        std::vector<std::size_t> kept;
        largest_connected_component(ds, &kept);
        EXPECT_EQ(kept, a[0] == 0 ? a : b);
        ++checked;
    }
    EXPECT_EQ(checked, 20u);
}

TEST(Splits, RandomSplitIsDisjointAndBalanced) {
    std::vector<int> labels;
    for (int i = 0; i < 90; ++i) labels.push_back(i % 3);
    const Splits s = random_split(labels, 3, 5, 500, 4);
    EXPECT_EQ(s.train.size(), 15u);
    EXPECT_EQ(s.val.size(), 37u);
    EXPECT_EQ(s.test.size(), 38u);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    all.insert(s.test.begin(), s.test.end());
    EXPECT_EQ(all.size(), 90u);
    int per_class[3] = {0, 0, 0};
    for (auto i : s.train) ++per_class[labels[i]];
    for (int k : per_class) EXPECT_EQ(k, 5);
}

TEST(Sbm, ZeroCrossProbabilityAlignsComponentsWithBlocks) {
    SbmConfig c;
    c.p_out = 0.0;
    c.p_in = 0.2;
    c.seed = 5;
    const Dataset ds = synth_sbm(c);
    std::size_t count = 0;
    const auto comp = connected_components(ds.graph, &count);
    EXPECT_EQ(count, 2u);
    for (std::size_t i = 0; i < ds.num_nodes(); ++i) EXPECT_EQ(static_cast<int>(comp[i]), ds.labels[i]);
}

TEST(Sbm, DeterministicPerSeed) {
    SbmConfig c;
    c.seed = 6;
    const Dataset a = synth_sbm(c), b = synth_sbm(c);
    EXPECT_EQ(a.graph.edges(), b.graph.edges());
    EXPECT_EQ(a.features, b.features);
    EXPECT_EQ(a.splits.test, b.splits.test);
    c.seed = 7;
    EXPECT_NE(synth_sbm(c).graph.edges(), a.graph.edges());
}

TEST(Sbm, PlantedPartitionIsModular) {
    SbmConfig c;
    c.seed = 8;
    const Dataset ds = synth_sbm(c);
    EXPECT_GT(oracle::modularity(ds.graph, ds.labels), 0.3);
}

TEST(Sbm, RejectsBadProbabilitiesAndGivesUp) {
    SbmConfig c;
    c.p_in = 0.01;
    c.p_out = 0.1;
    EXPECT_THROW(synth_sbm(c), ConfigError);
    c.p_in = 0.001;
    c.p_out = 0.0001;
    EXPECT_THROW(synth_sbm(c), NumericError);
    c.require_connected = false;
    EXPECT_NO_THROW(synth_sbm(c));
}

TEST(GridImage, TwoByTwo) {
    GridImageConfig c;
    c.width = 2;
    c.height = 2;
    const Dataset ds = synth_grid_image(c);
    EXPECT_EQ(ds.num_nodes(), 4u);
    EXPECT_EQ(ds.graph.num_edges(), 4u);
    EXPECT_EQ(ds.splits.train.size(), 2u);
}

TEST(GridImage, AllBackgroundStillValid) {
    GridImageConfig c;
    c.shape = ImageShape::background;
    const Dataset ds = synth_grid_image(c);
    for (int y : ds.labels) EXPECT_EQ(y, 0);
    EXPECT_NO_THROW(ds.validate());
    TempDir d("bg");
    save_dataset(d.path(), ds);
    EXPECT_NO_THROW(load_dataset(d.path()));
}

TEST(GridImage, DiskMaskHasBothClassesAndGridDegrees) {
    GridImageConfig c;
    const Dataset ds = synth_grid_image(c);
    EXPECT_EQ(ds.graph.num_edges(), 2u * 8 * 7);
    int figure = 0;
    for (int y : ds.labels) figure += y;
    EXPECT_GT(figure, 0);
    EXPECT_LT(figure, 64);
    EXPECT_EQ(ds.graph.degree(0), 2u);
    EXPECT_EQ(ds.graph.degree(9), 4u);
    EXPECT_THROW(synth_grid_image(GridImageConfig{.width = 1}), ConfigError);
}
