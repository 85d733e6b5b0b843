#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "fedpg/common.hpp"
#include "fedpg/graph.hpp"

namespace fedpg {

enum class SparsityMode { Feature, Edge, Label };

inline SparsityMode parse_sparsity_mode(std::string_view name) {
    if (name == "feature") return SparsityMode::Feature;
    if (name == "edge") return SparsityMode::Edge;
    if (name == "label") return SparsityMode::Label;
    throw Error(ErrorCode::InvalidArgument, "unknown sparsity mode '" + std::string(name) + "'");
}

/// Simulates missing data.
///  - edge: each undirected edge survives independently with prob keep_ratio
///    (self-loops live in the CSR view and are never dropped);
///  - feature: zeroes the features of a (1 - keep_ratio) share of non-train nodes;
///  - label: hides the labels of a (1 - keep_ratio) share of train nodes.
inline Graph sparsify(const Graph& g, SparsityMode mode, double keep_ratio, std::uint64_t seed) {
    if (!(keep_ratio >= 0.0 && keep_ratio <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "keep_ratio must lie in [0,1], got " + std::to_string(keep_ratio));
    }
    Rng rng = make_rng(seed, 0x5a);
    EdgeList edges = g.edges();
    Matrix features = g.features();
    std::vector<std::uint8_t> observed = g.label_observed();

    switch (mode) {
        case SparsityMode::Edge: {
            EdgeList kept;
            kept.reserve(edges.size());
            for (const auto& e : edges)
                if (uniform01(rng) < keep_ratio) kept.push_back(e);
            edges = std::move(kept);
            break;
        }
        case SparsityMode::Feature: {
            std::vector<std::size_t> pool;
            for (std::size_t v = 0; v < g.num_nodes(); ++v)
                if (g.splits()[v] != Split::Train) pool.push_back(v);
            const auto drop = static_cast<std::size_t>(std::llround((1.0 - keep_ratio) * static_cast<double>(pool.size())));
            for (std::size_t i : sample_without_replacement(pool.size(), drop, rng))
                features.row(static_cast<Eigen::Index>(pool[i])).setZero();
            break;
        }
        case SparsityMode::Label: {
            std::vector<std::size_t> pool;
            for (std::size_t v = 0; v < g.num_nodes(); ++v)
                if (g.is_supervised(v)) pool.push_back(v);
            const auto drop = static_cast<std::size_t>(std::llround((1.0 - keep_ratio) * static_cast<double>(pool.size())));
            for (std::size_t i : sample_without_replacement(pool.size(), drop, rng)) observed[pool[i]] = 0;
            break;
        }
    }
    return Graph(g.num_nodes(), g.num_classes(), std::move(edges), std::move(features), g.labels(), g.splits(),
                 std::move(observed));
}

}  // namespace fedpg
