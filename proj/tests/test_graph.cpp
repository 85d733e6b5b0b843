#include <algorithm>
#include <fstream>
#include <limits>
#include <set>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace fedpg;
using testing_support::random_graph;

namespace {

Graph path_graph(std::size_t n, std::vector<int> labels = {}, std::size_t classes = 2) {
    EdgeList edges;
    for (std::size_t i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
    if (labels.empty()) labels.assign(n, 0);
    return Graph(n, classes, edges, Matrix::Zero(static_cast<Eigen::Index>(n), 1), labels,
                 std::vector<Split>(n, Split::Train));
}

void write(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
}

std::filesystem::path tiny_dataset(const std::string& name) {
    auto dir = testing_support::scratch_dir(name);
    write(dir / "meta.json", R"({"num_nodes": 3, "num_features": 2, "num_classes": 2})");
    write(dir / "edges.tsv", "0\t1\n1\t2\n");
    write(dir / "features.csv", "1,0\n0,1\n1,1\n");
    write(dir / "labels.csv", "0\n1\n0\n");
    write(dir / "splits.csv", "train\nval\ntest\n");
    return dir;
}

std::string load_error(const std::filesystem::path& dir) {
    try {
        load_graph(dir);
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DataFormat);
        return e.what();
    }
    ADD_FAILURE() << "expected a load error";
    return {};
}

// All-pairs shortest paths by Floyd-Warshall on the plain edge list.
std::vector<std::vector<std::size_t>> floyd_warshall(const Graph& g) {
    constexpr auto inf = std::numeric_limits<std::size_t>::max() / 4;
    const std::size_t n = g.num_nodes();
    std::vector<std::vector<std::size_t>> d(n, std::vector<std::size_t>(n, inf));
    for (std::size_t i = 0; i < n; ++i) d[i][i] = 0;
    for (const auto& [u, v] : g.edges()) d[u][v] = d[v][u] = 1;
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
    return d;
}

}  // namespace

TEST(Graph, PathGraphHasSelfLoopPerRow) {
    const Graph g = path_graph(3);
    EXPECT_EQ(g.num_edges(), 2u);
    EXPECT_EQ(g.degree_with_self_loop(0), 2u);
    EXPECT_EQ(g.degree_with_self_loop(1), 3u);
    EXPECT_EQ(g.degree_with_self_loop(2), 2u);
}

TEST(Graph, DuplicateReversedAndSelfEdgesCollapse) {
    const Graph g(3, 1, {{0, 0}, {1, 0}, {0, 1}, {2, 1}, {1, 2}}, Matrix::Zero(3, 1), {0, 0, 0},
                  {Split::Train, Split::Train, Split::Train});
    EXPECT_EQ(g.num_edges(), 2u);
    const auto n0 = g.neighbors(0);
    EXPECT_EQ(std::count(n0.begin(), n0.end(), 0u), 1);
    EXPECT_EQ(n0.size(), 2u);
}

TEST(Graph, RandomGraphInvariants) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Graph g = random_graph(40, 3, 2, 0.1, seed);
        std::set<std::pair<std::size_t, std::size_t>> seen;
        for (const auto& [u, v] : g.edges()) {
            EXPECT_LT(u, v);
            EXPECT_LT(v, g.num_nodes());
            EXPECT_TRUE(seen.emplace(u, v).second);
        }
        for (std::size_t v = 0; v < g.num_nodes(); ++v) {
            const auto nb = g.neighbors(v);
            EXPECT_EQ(std::count(nb.begin(), nb.end(), v), 1);
        }
        EXPECT_EQ(g.count_split(Split::Train) + g.count_split(Split::Val) + g.count_split(Split::Test), g.num_nodes());
    }
}

TEST(Graph, NormalizedAdjacencyMatchesDenseOracle) {
    const Graph g = random_graph(15, 2, 1, 0.3, 3);
    Matrix a = Matrix::Identity(15, 15);
    for (const auto& [u, v] : g.edges()) {
        a(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) = 1.0;
        a(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(u)) = 1.0;
    }
    const Eigen::VectorXd d = a.rowwise().sum();
    const Matrix oracle = d.cwiseSqrt().cwiseInverse().asDiagonal() * a * d.cwiseSqrt().cwiseInverse().asDiagonal();
    const Matrix got = Matrix(normalized_adjacency(g));
    EXPECT_LT((got - oracle).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Graph, IsolatedNodeNormalizesToOne) {
    const Graph g(1, 1, {}, Matrix::Ones(1, 3), {0}, {Split::Train});
    EXPECT_EQ(Matrix(normalized_adjacency(g))(0, 0), 1.0);
}

TEST(Load, PathGraphFromFiles) {
    const Graph g = load_graph(tiny_dataset("load_ok"));
    EXPECT_EQ(g.num_nodes(), 3u);
    EXPECT_EQ(g.num_edges(), 2u);
    EXPECT_EQ(g.num_features(), 2u);
    EXPECT_EQ(g.labels(), (std::vector<int>{0, 1, 0}));
    EXPECT_EQ(g.splits()[1], Split::Val);
    for (std::size_t v = 0; v < 3; ++v) EXPECT_EQ(g.degree_with_self_loop(v), v == 1 ? 3u : 2u);
}

TEST(Load, ExplicitSelfLoopKeptOnce) {
    const auto dir = tiny_dataset("load_self");
    write(dir / "edges.tsv", "0\t0\n0\t1\n1\t2\n");
    const Graph g = load_graph(dir);
    EXPECT_EQ(g.num_edges(), 2u);
    const auto nb = g.neighbors(0);
    EXPECT_EQ(std::count(nb.begin(), nb.end(), 0u), 1);
}

TEST(Load, ErrorsCarryFileAndLine) {
    auto dir = tiny_dataset("load_ragged");
    write(dir / "features.csv", "1,0\n0\n1,1\n");
    EXPECT_NE(load_error(dir).find("features.csv:2"), std::string::npos);

    dir = tiny_dataset("load_label");
    write(dir / "labels.csv", "0\n1\n2\n");
    EXPECT_NE(load_error(dir).find("labels.csv:3"), std::string::npos);

    dir = tiny_dataset("load_edge");
    write(dir / "edges.tsv", "0\t1\n1\t7\n");
    EXPECT_NE(load_error(dir).find("edges.tsv:2"), std::string::npos);

    dir = tiny_dataset("load_missing");
    std::filesystem::remove(dir / "splits.csv");
    EXPECT_NE(load_error(dir).find("splits.csv"), std::string::npos);
}

TEST(Load, SaveRoundTrip) {
    const Graph g = random_graph(25, 3, 4, 0.2, 9);
    const auto dir = testing_support::scratch_dir("roundtrip");
    save_graph(g, dir);
    EXPECT_TRUE(load_graph(dir) == g);
}

TEST(Neighborhood, HopZeroIsSelf) {
    const Graph g = random_graph(20, 3, 1, 0.2, 1);
    for (std::size_t v = 0; v < g.num_nodes(); ++v) {
        EXPECT_EQ(khop_class_neighborhood(g, v, 0, 0, g.labels()), std::vector<std::size_t>{v});
    }
}

TEST(Neighborhood, PathByHand) {
    const Graph g = path_graph(3, {0, 0, 1});
    EXPECT_EQ(khop_class_neighborhood(g, 0, 2, 0, g.labels()), (std::vector<std::size_t>{0, 1}));
}

TEST(Neighborhood, MatchesFloydWarshallAndIsMonotone) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Graph g = random_graph(20, 3, 1, 0.12, seed);
        const auto dist = floyd_warshall(g);
        for (std::size_t v = 0; v < g.num_nodes(); ++v) {
            for (int c = 0; c < 3; ++c) {
                std::vector<std::size_t> prev;
                for (std::size_t h = 0; h <= 3; ++h) {
                    std::vector<std::size_t> expect;
                    for (std::size_t u = 0; u < g.num_nodes(); ++u)
                        if (u == v || (dist[v][u] <= h && g.labels()[u] == c)) expect.push_back(u);
                    const auto got = khop_class_neighborhood(g, v, h, c, g.labels());
                    EXPECT_EQ(got, expect);
                    EXPECT_TRUE(std::includes(got.begin(), got.end(), prev.begin(), prev.end()));
                    prev = got;
                }
            }
        }
    }
}

namespace {

void expect_valid_partition(const Graph& g, const Partition& p, std::size_t target) {
    ASSERT_EQ(p.clients.size(), target);
    std::vector<int> hits(g.num_nodes(), 0);
    std::set<std::pair<std::size_t, std::size_t>> original(g.edges().begin(), g.edges().end());
    for (std::size_t c = 0; c < p.clients.size(); ++c) {
        const auto& sub = p.clients[c];
        ASSERT_EQ(sub.local_to_global.size(), sub.graph.num_nodes());
        for (std::size_t i = 0; i < sub.local_to_global.size(); ++i) {
            const std::size_t global = sub.local_to_global[i];
            ++hits[global];
            EXPECT_EQ(p.assignment[global], c);
            EXPECT_EQ(sub.to_local(global), i);
            EXPECT_EQ(sub.graph.labels()[i], g.labels()[global]);
        }
        for (const auto& [u, v] : sub.graph.edges()) {
            EXPECT_TRUE(original.count({sub.local_to_global[u], sub.local_to_global[v]}));
        }
        // Induced: every original edge inside the part survives.
        std::size_t inside = 0;
        for (const auto& [u, v] : g.edges()) inside += p.assignment[u] == c && p.assignment[v] == c ? 1 : 0;
        EXPECT_EQ(inside, sub.graph.num_edges());
    }
    for (int h : hits) EXPECT_EQ(h, 1);
}

Graph two_triangles() {
    return Graph(6, 1, {{0, 1}, {1, 2}, {0, 2}, {3, 4}, {4, 5}, {3, 5}}, Matrix::Zero(6, 1), std::vector<int>(6, 0),
                 std::vector<Split>(6, Split::Train));
}

}  // namespace

TEST(Partition, LouvainTwoTriangles) {
    const Graph g = two_triangles();
    const Partition p = louvain_partition(g, 2, 1);
    expect_valid_partition(g, p, 2);
    EXPECT_EQ(p.assignment[0], p.assignment[1]);
    EXPECT_EQ(p.assignment[0], p.assignment[2]);
    EXPECT_EQ(p.assignment[3], p.assignment[5]);
    EXPECT_NE(p.assignment[0], p.assignment[3]);
}

TEST(Partition, TargetOneIsIdentity) {
    const Graph g = random_graph(30, 2, 1, 0.1, 2);
    for (auto method : {PartitionMethod::Louvain, PartitionMethod::Balanced}) {
        const Partition p = partition_graph(g, method, 1, 5);
        expect_valid_partition(g, p, 1);
        EXPECT_EQ(p.clients[0].graph.num_edges(), g.num_edges());
    }
}

TEST(Partition, TooManyClientsRejected) {
    const Graph g = random_graph(5, 2, 1, 0.5, 2);
    EXPECT_THROW(louvain_partition(g, 6, 1), Error);
    EXPECT_THROW(balanced_partition(g, 6, 1), Error);
    EXPECT_THROW(balanced_partition(g, 0, 1), Error);
}

TEST(Partition, LouvainRecoversPlantedBlocks) {
    SbmParams prm;
    prm.num_nodes = 100;
    prm.num_blocks = 4;
    prm.p_in = 0.3;
    prm.p_out = 0.01;
    prm.features.num_features = 2;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const Graph g = generate_sbm(prm, seed);
        const Partition p = louvain_partition(g, 4, seed);
        expect_valid_partition(g, p, 4);
        // Majority block per part.
        std::size_t agree = 0;
        for (std::size_t c = 0; c < 4; ++c) {
            std::vector<std::size_t> count(4, 0);
            for (std::size_t v : p.clients[c].local_to_global) ++count[static_cast<std::size_t>(g.labels()[v])];
            agree += *std::max_element(count.begin(), count.end());
        }
        EXPECT_GE(static_cast<double>(agree) / 100.0, 0.9);
    }
}

TEST(Partition, LouvainModularityNeverDecreases) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Graph g = random_graph(80, 2, 1, 0.06, seed);
        LouvainTrace trace;
        louvain_communities(g, seed, &trace);
        ASSERT_GE(trace.phase_modularity.size(), 1u);
        for (std::size_t i = 1; i < trace.phase_modularity.size(); ++i) {
            EXPECT_GE(trace.phase_modularity[i] - trace.phase_modularity[i - 1], -1e-12);
        }
    }
}

TEST(Partition, BalancedCycleSplitsEvenly) {
    EdgeList edges;
    for (std::size_t i = 0; i < 10; ++i) edges.emplace_back(i, (i + 1) % 10);
    const Graph g(10, 1, edges, Matrix::Zero(10, 1), std::vector<int>(10, 0), std::vector<Split>(10, Split::Train));
    const Partition p = balanced_partition(g, 2, 3);
    expect_valid_partition(g, p, 2);
    EXPECT_EQ(p.clients[0].graph.num_nodes(), 5u);
    EXPECT_EQ(p.clients[1].graph.num_nodes(), 5u);
}

TEST(Partition, BalancedSingletons) {
    const Graph g = random_graph(12, 2, 1, 0.3, 4);
    const Partition p = balanced_partition(g, 12, 4);
    expect_valid_partition(g, p, 12);
    for (const auto& c : p.clients) EXPECT_EQ(c.graph.num_nodes(), 1u);
}

TEST(Partition, BalancedSizesWithinOne) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Graph g = random_graph(200, 3, 1, 0.03, seed);
        const Partition p = balanced_partition(g, 10, seed);
        expect_valid_partition(g, p, 10);
        std::size_t lo = g.num_nodes(), hi = 0;
        for (const auto& c : p.clients) {
            lo = std::min(lo, c.graph.num_nodes());
            hi = std::max(hi, c.graph.num_nodes());
        }
        EXPECT_LE(hi - lo, 1u);
        EXPECT_LE(static_cast<double>(hi) / static_cast<double>(lo), 1.1);
    }
}

TEST(Partition, Deterministic) {
    const Graph g = random_graph(120, 3, 1, 0.05, 8);
    for (auto method : {PartitionMethod::Louvain, PartitionMethod::Balanced}) {
        EXPECT_EQ(partition_graph(g, method, 6, 11).assignment, partition_graph(g, method, 6, 11).assignment);
    }
}

TEST(Sparsify, KeepAllIsIdentity) {
    const Graph g = random_graph(50, 3, 4, 0.1, 1);
    for (auto mode : {SparsityMode::Edge, SparsityMode::Feature, SparsityMode::Label}) {
        EXPECT_TRUE(sparsify(g, mode, 1.0, 3) == g);
    }
}

TEST(Sparsify, KeepNothingLeavesSelfLoops) {
    const Graph g = random_graph(30, 3, 2, 0.2, 1);
    const Graph s = sparsify(g, SparsityMode::Edge, 0.0, 5);
    EXPECT_EQ(s.num_edges(), 0u);
    for (std::size_t v = 0; v < s.num_nodes(); ++v) EXPECT_EQ(s.degree_with_self_loop(v), 1u);
}

TEST(Sparsify, EdgeRetentionNearHalf) {
    // 1000 edges on a path-like chain plus chords.
    EdgeList edges;
    for (std::size_t i = 0; i < 1000; ++i) edges.emplace_back(i, i + 1);
    const Graph g(1001, 1, edges, Matrix::Zero(1001, 1), std::vector<int>(1001, 0),
                  std::vector<Split>(1001, Split::Train));
    double mean = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto kept = sparsify(g, SparsityMode::Edge, 0.5, seed).num_edges();
        EXPECT_NEAR(static_cast<double>(kept), 500.0, 50.0);
        mean += static_cast<double>(kept) / 10.0;
    }
    EXPECT_NEAR(mean, 500.0, 50.0);
}

TEST(Sparsify, FeatureModeTouchesOnlyNonTrainRows) {
    const Graph g = random_graph(100, 3, 4, 0.05, 2);
    const Graph s = sparsify(g, SparsityMode::Feature, 0.3, 7);
    std::size_t zeroed = 0, non_train = 0;
    for (std::size_t v = 0; v < g.num_nodes(); ++v) {
        const auto r = static_cast<Eigen::Index>(v);
        if (g.splits()[v] == Split::Train) {
            EXPECT_EQ(s.features().row(r), g.features().row(r));
        } else {
            ++non_train;
            if (s.features().row(r).isZero(0.0)) ++zeroed;
        }
    }
    EXPECT_EQ(zeroed, static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(non_train))));
    EXPECT_EQ(s.edges(), g.edges());
}

TEST(Sparsify, LabelModeHidesSupervision) {
    const Graph g = random_graph(100, 3, 2, 0.05, 3);
    const Graph s = sparsify(g, SparsityMode::Label, 0.25, 1);
    std::size_t supervised = 0;
    for (std::size_t v = 0; v < g.num_nodes(); ++v) {
        EXPECT_EQ(s.splits()[v], g.splits()[v]);
        supervised += s.is_supervised(v) ? 1 : 0;
    }
    const std::size_t train = g.count_split(Split::Train);
    EXPECT_EQ(supervised, train - static_cast<std::size_t>(std::llround(0.75 * static_cast<double>(train))));
}

TEST(Sparsify, InvalidRatioRejected) {
    const Graph g = random_graph(10, 2, 1, 0.2, 3);
    EXPECT_THROW(sparsify(g, SparsityMode::Edge, 1.5, 1), Error);
    EXPECT_THROW(sparsify(g, SparsityMode::Edge, -0.1, 1), Error);
}

TEST(Sparsify, Deterministic) {
    const Graph g = random_graph(60, 3, 2, 0.1, 3);
    for (auto mode : {SparsityMode::Edge, SparsityMode::Feature, SparsityMode::Label}) {
        EXPECT_TRUE(sparsify(g, mode, 0.4, 9) == sparsify(g, mode, 0.4, 9));
    }
}

TEST(Generators, SbmWithoutCrossEdgesHasSeparateBlocks) {
    SbmParams prm;
    prm.num_nodes = 200;
    prm.num_blocks = 4;
    prm.p_out = 0.0;
    prm.features.num_features = 3;
    const Graph g = generate_sbm(prm, 5);
    EXPECT_GE(connected_components(g), 4u);
    for (const auto& [u, v] : g.edges()) EXPECT_EQ(g.labels()[u], g.labels()[v]);
}

TEST(Generators, PerfectHomophily) {
    HomophilyParams prm;
    prm.num_nodes = 500;
    prm.homophily = 1.0;
    prm.features.num_features = 3;
    const Graph g = generate_homophily(prm, 2);
    for (const auto& [u, v] : g.edges()) EXPECT_EQ(g.labels()[u], g.labels()[v]);
}

TEST(Generators, HomophilyLevelIsHit) {
    HomophilyParams prm;
    prm.num_nodes = 2000;
    prm.homophily = 0.7;
    prm.features.num_features = 3;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        EXPECT_NEAR(edge_homophily(generate_homophily(prm, seed)), 0.7, 0.05);
    }
}

TEST(Generators, Deterministic) {
    HomophilyParams prm;
    prm.num_nodes = 300;
    prm.features.num_features = 5;
    EXPECT_TRUE(generate_homophily(prm, 4) == generate_homophily(prm, 4));
    SbmParams sp;
    sp.num_nodes = 120;
    sp.features.num_features = 5;
    EXPECT_TRUE(generate_sbm(sp, 4) == generate_sbm(sp, 4));
}
