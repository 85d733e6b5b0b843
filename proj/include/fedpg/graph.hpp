#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Sparse>
#include <nlohmann/json.hpp>

#include "fedpg/common.hpp"

namespace fedpg {

enum class Split : std::uint8_t { Train, Val, Test };

inline std::string_view split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using EdgeList = std::vector<std::pair<std::size_t, std::size_t>>;

/// Undirected attributed graph. Edges are stored once as (u, v) with u < v,
/// sorted, without self-loops; the CSR view adds exactly one self-loop per node.
/// Immutable after construction.
class Graph {
public:
    Graph() = default;

    Graph(std::size_t num_nodes, std::size_t num_classes, EdgeList edges, Matrix features,
          std::vector<int> labels, std::vector<Split> splits,
          std::vector<std::uint8_t> label_observed = {})
        : num_nodes_(num_nodes),
          num_classes_(num_classes),
          features_(std::move(features)),
          labels_(std::move(labels)),
          splits_(std::move(splits)),
          observed_(std::move(label_observed)) {
        if (static_cast<std::size_t>(features_.rows()) != num_nodes_) {
            throw Error(ErrorCode::DataFormat, "feature matrix has " + std::to_string(features_.rows()) +
                                                   " rows, expected " + std::to_string(num_nodes_));
        }
        if (labels_.size() != num_nodes_ || splits_.size() != num_nodes_) {
            throw Error(ErrorCode::DataFormat, "labels/splits length does not match num_nodes");
        }
        if (observed_.empty()) observed_.assign(num_nodes_, 1);
        if (observed_.size() != num_nodes_) {
            throw Error(ErrorCode::DataFormat, "label_observed length does not match num_nodes");
        }
        for (std::size_t i = 0; i < num_nodes_; ++i) {
            if (labels_[i] < 0 || static_cast<std::size_t>(labels_[i]) >= num_classes_) {
                throw Error(ErrorCode::DataFormat, "label of node " + std::to_string(i) + " out of range");
            }
        }
        normalize_edges(std::move(edges));
        build_csr();
    }

    std::size_t num_nodes() const noexcept { return num_nodes_; }
    std::size_t num_edges() const noexcept { return edges_.size(); }
    std::size_t num_features() const noexcept { return static_cast<std::size_t>(features_.cols()); }
    std::size_t num_classes() const noexcept { return num_classes_; }

    const EdgeList& edges() const noexcept { return edges_; }
    const Matrix& features() const noexcept { return features_; }
    const std::vector<int>& labels() const noexcept { return labels_; }
    const std::vector<Split>& splits() const noexcept { return splits_; }
    const std::vector<std::uint8_t>& label_observed() const noexcept { return observed_; }

    /// Neighbors of v in the CSR view, including v itself.
    std::span<const std::size_t> neighbors(std::size_t v) const {
        return {columns_.data() + offsets_[v], offsets_[v + 1] - offsets_[v]};
    }
    std::size_t degree_with_self_loop(std::size_t v) const { return offsets_[v + 1] - offsets_[v]; }
    const std::vector<std::size_t>& row_offsets() const noexcept { return offsets_; }
    const std::vector<std::size_t>& columns() const noexcept { return columns_; }

    /// Nodes usable for supervised loss: train split with an observed label.
    bool is_supervised(std::size_t v) const { return splits_[v] == Split::Train && observed_[v] != 0; }

    std::size_t count_split(Split s) const {
        return static_cast<std::size_t>(std::count(splits_.begin(), splits_.end(), s));
    }

    friend bool operator==(const Graph& a, const Graph& b) {
        return a.num_nodes_ == b.num_nodes_ && a.num_classes_ == b.num_classes_ && a.edges_ == b.edges_ &&
               a.features_.rows() == b.features_.rows() && a.features_.cols() == b.features_.cols() &&
               a.features_ == b.features_ && a.labels_ == b.labels_ && a.splits_ == b.splits_ &&
               a.observed_ == b.observed_;
    }

private:
    void normalize_edges(EdgeList edges) {
        for (auto& [u, v] : edges) {
            if (u >= num_nodes_ || v >= num_nodes_) {
                throw Error(ErrorCode::DataFormat, "edge (" + std::to_string(u) + "," + std::to_string(v) +
                                                       ") references a node id out of range");
            }
            if (u > v) std::swap(u, v);
        }
        std::erase_if(edges, [](const auto& e) { return e.first == e.second; });
        std::sort(edges.begin(), edges.end());
        edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
        edges_ = std::move(edges);
    }

    void build_csr() {
        std::vector<std::size_t> deg(num_nodes_, 1);
        for (const auto& [u, v] : edges_) {
            ++deg[u];
            ++deg[v];
        }
        offsets_.assign(num_nodes_ + 1, 0);
        for (std::size_t i = 0; i < num_nodes_; ++i) offsets_[i + 1] = offsets_[i] + deg[i];
        columns_.assign(offsets_.back(), 0);
        std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
        for (std::size_t i = 0; i < num_nodes_; ++i) columns_[fill[i]++] = i;
        for (const auto& [u, v] : edges_) {
            columns_[fill[u]++] = v;
            columns_[fill[v]++] = u;
        }
        for (std::size_t i = 0; i < num_nodes_; ++i) {
            std::sort(columns_.begin() + static_cast<std::ptrdiff_t>(offsets_[i]),
                      columns_.begin() + static_cast<std::ptrdiff_t>(offsets_[i + 1]));
        }
    }

    std::size_t num_nodes_ = 0;
    std::size_t num_classes_ = 0;
    EdgeList edges_;
    Matrix features_;
    std::vector<int> labels_;
    std::vector<Split> splits_;
    std::vector<std::uint8_t> observed_;
    std::vector<std::size_t> offsets_{0};
    std::vector<std::size_t> columns_;
};

/// D^{-1/2} (A + I) D^{-1/2}
inline SparseMatrix normalized_adjacency(const Graph& g) {
    const auto n = static_cast<Eigen::Index>(g.num_nodes());
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(g.columns().size());
    for (std::size_t u = 0; u < g.num_nodes(); ++u) {
        const double du = static_cast<double>(g.degree_with_self_loop(u));
        for (std::size_t v : g.neighbors(u)) {
            const double dv = static_cast<double>(g.degree_with_self_loop(v));
            triplets.emplace_back(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v),
                                  1.0 / std::sqrt(du * dv));
        }
    }
    SparseMatrix a(n, n);
    a.setFromTriplets(triplets.begin(), triplets.end());
    return a;
}

/// Breadth-first distances from `source`, truncated at `max_hops`.
/// Returns (node, distance) pairs sorted by node id.
inline std::vector<std::pair<std::size_t, std::size_t>> bfs_within(const Graph& g, std::size_t source,
                                                                   std::size_t max_hops) {
    std::vector<std::pair<std::size_t, std::size_t>> out{{source, 0}};
    std::vector<std::size_t> frontier{source};
    std::vector<std::uint8_t> seen(g.num_nodes(), 0);
    seen[source] = 1;
    for (std::size_t d = 1; d <= max_hops && !frontier.empty(); ++d) {
        std::vector<std::size_t> next;
        for (std::size_t u : frontier) {
            for (std::size_t w : g.neighbors(u)) {
                if (!seen[w]) {
                    seen[w] = 1;
                    next.push_back(w);
                    out.emplace_back(w, d);
                }
            }
        }
        frontier = std::move(next);
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Class-restricted h-hop neighborhood: {v} together with every node within
/// `hops` of v whose effective label is `cls`. Labels < 0 mean "unusable".
inline std::vector<std::size_t> khop_class_neighborhood(const Graph& g, std::size_t v, std::size_t hops, int cls,
                                                        std::span<const int> labels) {
    std::vector<std::size_t> out;
    for (const auto& [u, d] : bfs_within(g, v, hops)) {
        (void)d;
        if (u == v || labels[u] == cls) out.push_back(u);
    }
    return out;
}

/// Subgraph induced by `nodes` (sorted, unique global ids); node i of the
/// result is nodes[i].
inline Graph induced_subgraph(const Graph& g, std::span<const std::size_t> nodes) {
    std::vector<std::size_t> local(g.num_nodes(), std::numeric_limits<std::size_t>::max());
    for (std::size_t i = 0; i < nodes.size(); ++i) local[nodes[i]] = i;
    EdgeList edges;
    for (const auto& [u, v] : g.edges()) {
        if (local[u] != std::numeric_limits<std::size_t>::max() &&
            local[v] != std::numeric_limits<std::size_t>::max()) {
            edges.emplace_back(local[u], local[v]);
        }
    }
    Matrix x(static_cast<Eigen::Index>(nodes.size()), g.features().cols());
    std::vector<int> labels(nodes.size());
    std::vector<Split> splits(nodes.size());
    std::vector<std::uint8_t> observed(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        x.row(static_cast<Eigen::Index>(i)) = g.features().row(static_cast<Eigen::Index>(nodes[i]));
        labels[i] = g.labels()[nodes[i]];
        splits[i] = g.splits()[nodes[i]];
        observed[i] = g.label_observed()[nodes[i]];
    }
    return Graph(nodes.size(), g.num_classes(), std::move(edges), std::move(x), std::move(labels),
                 std::move(splits), std::move(observed));
}

/// Fraction of edges whose endpoints share a label.
inline double edge_homophily(const Graph& g) {
    if (g.num_edges() == 0) return 1.0;
    std::size_t same = 0;
    for (const auto& [u, v] : g.edges()) same += g.labels()[u] == g.labels()[v] ? 1 : 0;
    return static_cast<double>(same) / static_cast<double>(g.num_edges());
}

inline std::size_t connected_components(const Graph& g) {
    std::vector<std::uint8_t> seen(g.num_nodes(), 0);
    std::size_t count = 0;
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < g.num_nodes(); ++s) {
        if (seen[s]) continue;
        ++count;
        seen[s] = 1;
        stack.push_back(s);
        while (!stack.empty()) {
            const std::size_t u = stack.back();
            stack.pop_back();
            for (std::size_t w : g.neighbors(u)) {
                if (!seen[w]) {
                    seen[w] = 1;
                    stack.push_back(w);
                }
            }
        }
    }
    return count;
}

// ---------------------------------------------------------------------------
// Dataset directory I/O

namespace detail {

inline std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::DataFormat, path.string() + ": missing file");
    return in;
}

[[noreturn]] inline void format_error(const std::filesystem::path& path, std::size_t line, const std::string& what) {
    throw Error(ErrorCode::DataFormat, path.filename().string() + ":" + std::to_string(line) + ": " + what);
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
    s = trim(s);
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace detail

/// Reads edges.tsv, features.csv, labels.csv, splits.csv and meta.json.
inline Graph load_graph(const std::filesystem::path& dir) {
    using detail::format_error;
    namespace fs = std::filesystem;

    const fs::path meta_path = dir / "meta.json";
    auto meta_in = detail::open_input(meta_path);
    nlohmann::json meta;
    try {
        meta_in >> meta;
    } catch (const nlohmann::json::exception& e) {
        format_error(meta_path, 1, std::string("invalid JSON: ") + e.what());
    }
    std::size_t n = 0, f = 0, k = 0;
    try {
        n = meta.at("num_nodes").get<std::size_t>();
        f = meta.at("num_features").get<std::size_t>();
        k = meta.at("num_classes").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        format_error(meta_path, 1, std::string("missing or invalid field: ") + e.what());
    }

    std::string line;
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
    {
        const fs::path path = dir / "features.csv";
        auto in = detail::open_input(path);
        std::size_t row = 0;
        while (std::getline(in, line)) {
            if (detail::trim(line).empty()) continue;
            if (row >= n) format_error(path, row + 1, "more rows than num_nodes=" + std::to_string(n));
            std::string_view rest(line);
            std::size_t col = 0;
            while (true) {
                const auto comma = rest.find(',');
                const auto cell = rest.substr(0, comma);
                double v = 0.0;
                if (col >= f) format_error(path, row + 1, "ragged row: more than " + std::to_string(f) + " values");
                if (!detail::parse_number(cell, v)) format_error(path, row + 1, "not a number: '" + std::string(cell) + "'");
                x(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col++)) = v;
                if (comma == std::string_view::npos) break;
                rest.remove_prefix(comma + 1);
            }
            if (col != f) {
                format_error(path, row + 1, "ragged row: expected " + std::to_string(f) + " values, got " +
                                                std::to_string(col));
            }
            ++row;
        }
        if (row != n) format_error(path, row, "expected " + std::to_string(n) + " rows, got " + std::to_string(row));
    }

    std::vector<int> labels;
    labels.reserve(n);
    {
        const fs::path path = dir / "labels.csv";
        auto in = detail::open_input(path);
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (detail::trim(line).empty()) continue;
            long long v = 0;
            if (!detail::parse_number(line, v) || v < 0) format_error(path, lineno, "invalid class id '" + line + "'");
            if (static_cast<std::size_t>(v) >= k) {
                format_error(path, lineno, "class id " + std::to_string(v) + " >= num_classes=" + std::to_string(k));
            }
            labels.push_back(static_cast<int>(v));
        }
        if (labels.size() != n) format_error(path, lineno, "expected " + std::to_string(n) + " labels");
    }

    std::vector<Split> splits;
    splits.reserve(n);
    {
        const fs::path path = dir / "splits.csv";
        auto in = detail::open_input(path);
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto tag = detail::trim(line);
            if (tag.empty()) continue;
            if (tag == "train") splits.push_back(Split::Train);
            else if (tag == "val") splits.push_back(Split::Val);
            else if (tag == "test") splits.push_back(Split::Test);
            else format_error(path, lineno, "unknown split tag '" + std::string(tag) + "'");
        }
        if (splits.size() != n) format_error(path, lineno, "expected " + std::to_string(n) + " split tags");
    }

    EdgeList edges;
    {
        const fs::path path = dir / "edges.tsv";
        auto in = detail::open_input(path);
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (detail::trim(line).empty()) continue;
            std::istringstream row(line);
            std::string a, b, extra;
            row >> a >> b;
            std::size_t u = 0, v = 0;
            if (!detail::parse_number(a, u) || !detail::parse_number(b, v) || (row >> extra)) {
                format_error(path, lineno, "expected 'src<TAB>dst'");
            }
            if (u >= n || v >= n) {
                format_error(path, lineno, "node id out of range (num_nodes=" + std::to_string(n) + ")");
            }
            edges.emplace_back(u, v);
        }
    }
    return Graph(n, k, std::move(edges), std::move(x), std::move(labels), std::move(splits));
}

/// Writes the dataset directory format. Labels hidden by label sparsity are
/// not representable in this format and are written as observed.
inline void save_graph(const Graph& g, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw Error(ErrorCode::Io, (dir / name).string() + ": cannot write");
        return out;
    };
    {
        auto out = open("edges.tsv");
        for (const auto& [u, v] : g.edges()) out << u << '\t' << v << '\n';
    }
    {
        auto out = open("features.csv");
        for (Eigen::Index i = 0; i < g.features().rows(); ++i) {
            for (Eigen::Index j = 0; j < g.features().cols(); ++j) {
                if (j) out << ',';
                out << detail::format_double(g.features()(i, j));
            }
            out << '\n';
        }
    }
    {
        auto out = open("labels.csv");
        for (int y : g.labels()) out << y << '\n';
    }
    {
        auto out = open("splits.csv");
        for (Split s : g.splits()) out << split_name(s) << '\n';
    }
    {
        auto out = open("meta.json");
        nlohmann::json meta{{"num_nodes", g.num_nodes()},
                            {"num_features", g.num_features()},
                            {"num_classes", g.num_classes()}};
        out << meta.dump() << '\n';
    }
}

}  // namespace fedpg
