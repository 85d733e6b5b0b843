#pragma once

#include <cmath>
#include <set>
#include <vector>

#include "fedpg/common.hpp"
#include "fedpg/graph.hpp"

namespace fedpg {

/// Node features are drawn as  signal * centroid[label] + shift[community] + noise.
struct FeatureModel {
    std::size_t num_features = 500;
    double signal = 1.0;
    double noise = 1.0;
    double community_shift = 0.0;
};

struct SplitFractions {
    double train = 0.2;
    double val = 0.4;
};

struct SbmParams {
    std::size_t num_nodes = 1000;
    std::size_t num_blocks = 4;
    double p_in = 0.05;
    double p_out = 0.005;
    FeatureModel features;
    SplitFractions splits;
};

/// Label-homophily generator. Nodes live in `num_communities` spatial
/// communities with Dirichlet-skewed label mixes; each edge joins a
/// same-label pair with probability `homophily`, and stays inside the source
/// node's community with probability `locality`.
struct HomophilyParams {
    std::size_t num_nodes = 2000;
    std::size_t num_classes = 5;
    std::size_t num_communities = 10;
    double avg_degree = 8.0;
    double homophily = 0.7;
    double locality = 0.9;
    double label_concentration = 1.0;
    FeatureModel features;
    SplitFractions splits;
};

namespace detail {

inline std::vector<Split> random_splits(std::size_t n, const SplitFractions& fr, Rng& rng) {
    if (fr.train < 0.0 || fr.val < 0.0 || fr.train + fr.val > 1.0) {
        throw Error(ErrorCode::InvalidArgument, "split fractions must be non-negative and sum to <= 1");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle(order, rng);
    const auto n_train = static_cast<std::size_t>(std::llround(fr.train * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::llround(fr.val * static_cast<double>(n)));
    std::vector<Split> splits(n, Split::Test);
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_train) splits[order[i]] = Split::Train;
        else if (i < n_train + n_val) splits[order[i]] = Split::Val;
    }
    return splits;
}

inline Matrix draw_features(const std::vector<int>& labels, const std::vector<std::size_t>& community,
                            std::size_t num_classes, std::size_t num_communities, const FeatureModel& fm, Rng& rng) {
    const auto f = static_cast<Eigen::Index>(fm.num_features);
    Matrix centroids(static_cast<Eigen::Index>(num_classes), f);
    for (Eigen::Index i = 0; i < centroids.size(); ++i) centroids.data()[i] = standard_normal(rng);
    Matrix shifts(static_cast<Eigen::Index>(num_communities), f);
    for (Eigen::Index i = 0; i < shifts.size(); ++i) shifts.data()[i] = fm.community_shift * standard_normal(rng);
    Matrix x(static_cast<Eigen::Index>(labels.size()), f);
    for (std::size_t v = 0; v < labels.size(); ++v) {
        const auto r = static_cast<Eigen::Index>(v);
        for (Eigen::Index j = 0; j < f; ++j) {
            x(r, j) = fm.signal * centroids(labels[v], j) + shifts(static_cast<Eigen::Index>(community[v]), j) +
                      fm.noise * standard_normal(rng);
        }
    }
    return x;
}

inline std::vector<double> dirichlet(std::size_t k, double concentration, Rng& rng) {
    // Marsaglia-Tsang gamma sampling
    auto gamma = [&](double shape) {
        double boost = 1.0;
        if (shape < 1.0) {
            boost = std::pow(uniform01(rng), 1.0 / shape);
            shape += 1.0;
        }
        const double d = shape - 1.0 / 3.0, c = 1.0 / std::sqrt(9.0 * d);
        while (true) {
            double z = standard_normal(rng), v = 1.0 + c * z;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = uniform01(rng);
            if (u < 1.0 - 0.0331 * z * z * z * z || std::log(u) < 0.5 * z * z + d * (1.0 - v + std::log(v))) {
                return boost * d * v;
            }
        }
    };
    std::vector<double> p(k);
    double total = 0.0;
    for (auto& x : p) total += (x = gamma(concentration));
    for (auto& x : p) x /= total;
    return p;
}

}  // namespace detail

/// Planted-partition SBM; block id is the class label.
inline Graph generate_sbm(const SbmParams& prm, std::uint64_t seed) {
    if (prm.num_blocks == 0 || prm.num_nodes < prm.num_blocks || prm.p_in < 0.0 || prm.p_in > 1.0 ||
        prm.p_out < 0.0 || prm.p_out > 1.0) {
        throw Error(ErrorCode::InvalidArgument, "invalid SBM parameters");
    }
    Rng rng = make_rng(seed, 0x5b);
    const std::size_t n = prm.num_nodes;
    std::vector<int> labels(n);
    std::vector<std::size_t> block(n);
    for (std::size_t i = 0; i < n; ++i) {
        block[i] = i * prm.num_blocks / n;
        labels[i] = static_cast<int>(block[i]);
    }
    EdgeList edges;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double p = block[i] == block[j] ? prm.p_in : prm.p_out;
            if (uniform01(rng) < p) edges.emplace_back(i, j);
        }
    }
    Matrix x = detail::draw_features(labels, block, prm.num_blocks, prm.num_blocks, prm.features, rng);
    auto splits = detail::random_splits(n, prm.splits, rng);
    return Graph(n, prm.num_blocks, std::move(edges), std::move(x), std::move(labels), std::move(splits));
}

inline Graph generate_homophily(const HomophilyParams& prm, std::uint64_t seed) {
    if (prm.num_classes < 2 || prm.num_communities == 0 || prm.num_nodes < prm.num_classes ||
        prm.homophily < 0.0 || prm.homophily > 1.0 || prm.locality < 0.0 || prm.locality > 1.0 ||
        prm.avg_degree < 0.0 || prm.label_concentration <= 0.0) {
        throw Error(ErrorCode::InvalidArgument, "invalid homophily generator parameters");
    }
    Rng rng = make_rng(seed, 0x5c);
    const std::size_t n = prm.num_nodes, k = prm.num_classes, b = prm.num_communities;

    std::vector<std::size_t> community(n);
    std::vector<int> labels(n);
    std::vector<std::vector<double>> mix(b);
    for (auto& m : mix) m = detail::dirichlet(k, prm.label_concentration, rng);
    for (std::size_t v = 0; v < n; ++v) {
        community[v] = v * b / n;
        double u = uniform01(rng), acc = 0.0;
        std::size_t y = k - 1;
        for (std::size_t c = 0; c < k; ++c) {
            acc += mix[community[v]][c];
            if (u < acc) {
                y = c;
                break;
            }
        }
        labels[v] = static_cast<int>(y);
    }
    // Pools: [community][label] and [label] over all nodes.
    std::vector<std::vector<std::vector<std::size_t>>> local_pool(b, std::vector<std::vector<std::size_t>>(k));
    std::vector<std::vector<std::size_t>> global_pool(k);
    for (std::size_t v = 0; v < n; ++v) {
        local_pool[community[v]][static_cast<std::size_t>(labels[v])].push_back(v);
        global_pool[static_cast<std::size_t>(labels[v])].push_back(v);
    }

    const auto target = static_cast<std::size_t>(std::llround(prm.avg_degree * static_cast<double>(n) / 2.0));
    std::set<std::pair<std::size_t, std::size_t>> edge_set;
    std::size_t attempts = 0;
    while (edge_set.size() < target && attempts < 50 * target + 1000) {
        ++attempts;
        const std::size_t u = uniform_index(rng, n);
        const bool same = uniform01(rng) < prm.homophily;
        const bool local = uniform01(rng) < prm.locality;
        const auto yu = static_cast<std::size_t>(labels[u]);
        // Candidate label: same, or uniform among the other labels.
        std::size_t y = yu;
        if (!same) {
            y = uniform_index(rng, k - 1);
            if (y >= yu) ++y;
        }
        const auto& pool = local && !local_pool[community[u]][y].empty() ? local_pool[community[u]][y] : global_pool[y];
        if (pool.empty()) continue;
        const std::size_t v = pool[uniform_index(rng, pool.size())];
        if (v == u) continue;
        edge_set.emplace(std::min(u, v), std::max(u, v));
    }
    EdgeList edges(edge_set.begin(), edge_set.end());
    Matrix x = detail::draw_features(labels, community, k, b, prm.features, rng);
    auto splits = detail::random_splits(n, prm.splits, rng);
    return Graph(n, k, std::move(edges), std::move(x), std::move(labels), std::move(splits));
}

}  // namespace fedpg
