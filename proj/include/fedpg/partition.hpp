#pragma once

#include <algorithm>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fedpg/common.hpp"
#include "fedpg/graph.hpp"

namespace fedpg {

/// One client's view: an induced subgraph plus the id maps back to the
/// global graph. local_to_global is sorted, so the inverse is a binary search.
struct ClientSubgraph {
    Graph graph;
    std::vector<std::size_t> local_to_global;

    std::optional<std::size_t> to_local(std::size_t global) const {
        const auto it = std::lower_bound(local_to_global.begin(), local_to_global.end(), global);
        if (it == local_to_global.end() || *it != global) return std::nullopt;
        return static_cast<std::size_t>(it - local_to_global.begin());
    }
};

struct Partition {
    std::size_t num_clients = 0;
    std::vector<std::size_t> assignment;  // global node -> client id
    std::vector<ClientSubgraph> clients;
};

enum class PartitionMethod { Louvain, Balanced };

inline Partition make_partition(const Graph& g, std::vector<std::size_t> assignment, std::size_t num_clients) {
    std::vector<std::vector<std::size_t>> members(num_clients);
    for (std::size_t v = 0; v < g.num_nodes(); ++v) {
        if (assignment[v] >= num_clients) {
            throw Error(ErrorCode::InvalidArgument, "assignment references client " + std::to_string(assignment[v]));
        }
        members[assignment[v]].push_back(v);
    }
    Partition p;
    p.num_clients = num_clients;
    p.assignment = std::move(assignment);
    p.clients.reserve(num_clients);
    for (auto& nodes : members) {
        Graph sub = induced_subgraph(g, nodes);
        p.clients.push_back(ClientSubgraph{std::move(sub), std::move(nodes)});
    }
    return p;
}

/// Newman modularity of a node->community assignment (unweighted graph).
inline double modularity(const Graph& g, const std::vector<std::size_t>& community) {
    const double m = static_cast<double>(g.num_edges());
    if (m == 0.0) return 0.0;
    std::map<std::size_t, double> internal, degree;
    for (const auto& [u, v] : g.edges()) {
        if (community[u] == community[v]) internal[community[u]] += 1.0;
        degree[community[u]] += 1.0;
        degree[community[v]] += 1.0;
    }
    double q = 0.0;
    for (const auto& [c, d] : degree) {
        const double share = d / (2.0 * m);
        q += internal[c] / m - share * share;
    }
    return q;
}

namespace detail {

inline void check_target(const Graph& g, std::size_t target) {
    if (target == 0) throw Error(ErrorCode::InvalidArgument, "target_clients must be >= 1");
    if (target > g.num_nodes()) {
        throw Error(ErrorCode::InvalidArgument, "target_clients=" + std::to_string(target) +
                                                    " exceeds num_nodes=" + std::to_string(g.num_nodes()));
    }
}

/// Renumbers labels to 0..k-1 in order of first appearance by node id.
inline std::size_t compact_labels(std::vector<std::size_t>& labels) {
    std::map<std::size_t, std::size_t> remap;
    for (auto& l : labels) {
        const auto [it, inserted] = remap.emplace(l, remap.size());
        l = it->second;
    }
    return remap.size();
}

/// Seeded region growing over the subset `nodes` of g (all nodes when empty).
/// Part sizes are floor/ceil of |nodes|/parts regardless of connectivity.
inline std::vector<std::size_t> grow_regions(const Graph& g, std::size_t parts, Rng& rng,
                                             const std::vector<std::size_t>& subset = {}) {
    constexpr auto kNone = std::numeric_limits<std::size_t>::max();
    std::vector<std::uint8_t> in_scope(g.num_nodes(), subset.empty() ? 1 : 0);
    for (std::size_t v : subset) in_scope[v] = 1;
    std::vector<std::size_t> scope;
    for (std::size_t v = 0; v < g.num_nodes(); ++v)
        if (in_scope[v]) scope.push_back(v);
    const std::size_t n = scope.size();

    // Farthest-point seeds: first seed random, then the node with the largest
    // hop distance to all chosen seeds (unreachable counts as infinite).
    std::vector<std::size_t> dist(g.num_nodes(), kNone);
    std::vector<std::size_t> seeds;
    auto relax_from = [&](std::size_t s) {
        std::deque<std::size_t> queue{s};
        std::vector<std::size_t> local(g.num_nodes(), kNone);
        local[s] = 0;
        while (!queue.empty()) {
            const std::size_t u = queue.front();
            queue.pop_front();
            dist[u] = std::min(dist[u], local[u]);
            for (std::size_t w : g.neighbors(u)) {
                if (in_scope[w] && local[w] == kNone) {
                    local[w] = local[u] + 1;
                    queue.push_back(w);
                }
            }
        }
    };
    seeds.push_back(scope[uniform_index(rng, n)]);
    relax_from(seeds.back());
    while (seeds.size() < parts) {
        std::size_t best = kNone;
        for (std::size_t v : scope) {
            if (std::find(seeds.begin(), seeds.end(), v) != seeds.end()) continue;
            if (best == kNone || dist[v] > dist[best]) best = v;
        }
        seeds.push_back(best);
        relax_from(best);
    }

    std::vector<std::size_t> owner(g.num_nodes(), kNone);
    std::vector<std::size_t> size(parts, 0), capacity(parts, n / parts);
    for (std::size_t p = 0; p < n % parts; ++p) ++capacity[p];
    std::vector<std::deque<std::size_t>> frontier(parts);
    std::size_t next_free = 0;  // cursor into scope for disconnected leftovers
    std::size_t assigned = 0;
    auto take = [&](std::size_t p, std::size_t v) {
        owner[v] = p;
        ++size[p];
        ++assigned;
        for (std::size_t w : g.neighbors(v))
            if (in_scope[w] && owner[w] == kNone) frontier[p].push_back(w);
    };
    for (std::size_t p = 0; p < parts; ++p) take(p, seeds[p]);
    while (assigned < n) {
        std::size_t p = kNone;
        for (std::size_t q = 0; q < parts; ++q) {
            if (size[q] < capacity[q] && (p == kNone || size[q] < size[p])) p = q;
        }
        std::size_t v = kNone;
        while (!frontier[p].empty()) {
            const std::size_t cand = frontier[p].front();
            frontier[p].pop_front();
            if (owner[cand] == kNone) {
                v = cand;
                break;
            }
        }
        if (v == kNone) {
            while (owner[scope[next_free]] != kNone) ++next_free;
            v = scope[next_free];
        }
        take(p, v);
    }
    std::vector<std::size_t> out;
    out.reserve(n);
    for (std::size_t v : scope) out.push_back(owner[v]);
    return out;
}

}  // namespace detail

/// Modularity after each Louvain phase (local moving, then aggregation level).
struct LouvainTrace {
    std::vector<double> phase_modularity;
};

/// Multi-level Louvain. Node visiting order is shuffled per pass with `seed`.
/// Returns compact community ids per node.
inline std::vector<std::size_t> louvain_communities(const Graph& g, std::uint64_t seed, LouvainTrace* trace = nullptr) {
    const std::size_t n = g.num_nodes();
    Rng rng = make_rng(seed, 0x10);
    std::vector<std::size_t> node_comm(n);
    std::iota(node_comm.begin(), node_comm.end(), 0);
    if (trace) trace->phase_modularity.push_back(modularity(g, node_comm));
    const double m2 = 2.0 * static_cast<double>(g.num_edges());
    if (m2 == 0.0) return node_comm;

    // Weighted adjacency of the current level; self-loop weight stored separately.
    std::vector<std::map<std::size_t, double>> adj(n);
    std::vector<double> self_loop(n, 0.0);
    for (const auto& [u, v] : g.edges()) {
        adj[u][v] += 1.0;
        adj[v][u] += 1.0;
    }

    while (true) {
        const std::size_t level_n = adj.size();
        std::vector<double> k(level_n, 0.0);
        for (std::size_t i = 0; i < level_n; ++i) {
            k[i] = 2.0 * self_loop[i];
            for (const auto& [j, w] : adj[i]) k[i] += w;
        }
        std::vector<std::size_t> comm(level_n);
        std::iota(comm.begin(), comm.end(), 0);
        std::vector<double> tot = k;

        bool moved_any = false;
        bool improved = true;
        while (improved) {
            improved = false;
            std::vector<std::size_t> order(level_n);
            std::iota(order.begin(), order.end(), 0);
            shuffle(order, rng);
            for (std::size_t i : order) {
                std::map<std::size_t, double> links;
                for (const auto& [j, w] : adj[i]) links[comm[j]] += w;
                const std::size_t old = comm[i];
                tot[old] -= k[i];
                auto gain = [&](std::size_t c) {
                    const auto it = links.find(c);
                    const double kin = it == links.end() ? 0.0 : it->second;
                    return kin - tot[c] * k[i] / m2;
                };
                std::size_t best = old;
                double best_gain = gain(old);
                for (const auto& [c, w] : links) {
                    (void)w;
                    const double gc = gain(c);
                    if (gc > best_gain + 1e-12) {
                        best = c;
                        best_gain = gc;
                    }
                }
                tot[best] += k[i];
                if (best != old) {
                    comm[i] = best;
                    improved = true;
                    moved_any = true;
                }
            }
        }
        if (!moved_any) break;

        const std::size_t num_comm = detail::compact_labels(comm);
        for (auto& c : node_comm) c = comm[c];
        if (trace) trace->phase_modularity.push_back(modularity(g, node_comm));

        std::vector<std::map<std::size_t, double>> next_adj(num_comm);
        std::vector<double> next_self(num_comm, 0.0);
        for (std::size_t i = 0; i < level_n; ++i) {
            next_self[comm[i]] += self_loop[i];
            for (const auto& [j, w] : adj[i]) {
                if (comm[i] == comm[j]) next_self[comm[i]] += 0.5 * w;
                else next_adj[comm[i]][comm[j]] += w;
            }
        }
        adj = std::move(next_adj);
        self_loop = std::move(next_self);
        if (num_comm == level_n) break;
    }
    detail::compact_labels(node_comm);
    return node_comm;
}

/// Louvain communities, then merged smallest-first into their most connected
/// neighbor (or split largest-first by region growing) until exactly
/// `target_clients` parts remain.
inline Partition louvain_partition(const Graph& g, std::size_t target_clients, std::uint64_t seed,
                                   LouvainTrace* trace = nullptr) {
    detail::check_target(g, target_clients);
    std::vector<std::size_t> comm = louvain_communities(g, seed, trace);
    std::size_t count = detail::compact_labels(comm);
    Rng rng = make_rng(seed, 0x11);

    auto sizes = [&] {
        std::vector<std::size_t> s(count, 0);
        for (std::size_t c : comm) ++s[c];
        return s;
    };
    while (count > target_clients) {
        const auto s = sizes();
        const std::size_t smallest = static_cast<std::size_t>(std::min_element(s.begin(), s.end()) - s.begin());
        std::vector<double> links(count, 0.0);
        for (const auto& [u, v] : g.edges()) {
            if (comm[u] == smallest && comm[v] != smallest) links[comm[v]] += 1.0;
            if (comm[v] == smallest && comm[u] != smallest) links[comm[u]] += 1.0;
        }
        std::size_t into = std::numeric_limits<std::size_t>::max();
        for (std::size_t c = 0; c < count; ++c) {
            if (c == smallest) continue;
            if (into == std::numeric_limits<std::size_t>::max() || links[c] > links[into] ||
                (links[c] == links[into] && s[c] < s[into])) {
                into = c;
            }
        }
        for (auto& c : comm)
            if (c == smallest) c = into;
        count = detail::compact_labels(comm);
    }
    while (count < target_clients) {
        const auto s = sizes();
        const std::size_t largest = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
        std::vector<std::size_t> members;
        for (std::size_t v = 0; v < g.num_nodes(); ++v)
            if (comm[v] == largest) members.push_back(v);
        const auto halves = detail::grow_regions(g, 2, rng, members);
        for (std::size_t i = 0; i < members.size(); ++i)
            if (halves[i] == 1) comm[members[i]] = count;
        count = detail::compact_labels(comm);
    }
    return make_partition(g, std::move(comm), target_clients);
}

/// Balanced stand-in for Metis: seeded BFS region growing, part sizes differ by
/// at most one node.
inline Partition balanced_partition(const Graph& g, std::size_t target_clients, std::uint64_t seed) {
    detail::check_target(g, target_clients);
    Rng rng = make_rng(seed, 0x20);
    return make_partition(g, detail::grow_regions(g, target_clients, rng), target_clients);
}

inline Partition partition_graph(const Graph& g, PartitionMethod method, std::size_t target_clients,
                                 std::uint64_t seed) {
    return method == PartitionMethod::Louvain ? louvain_partition(g, target_clients, seed)
                                              : balanced_partition(g, target_clients, seed);
}

}  // namespace fedpg
