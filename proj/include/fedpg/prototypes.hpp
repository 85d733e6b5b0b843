#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "fedpg/common.hpp"
#include "fedpg/graph.hpp"

namespace fedpg {

/// Sentinel effective label for nodes that may not anchor or join prototypes.
inline constexpr int kUnlabeled = -1;

struct Prototype {
    int class_id = 0;
    int hop = 0;
    Vector vector;
    std::uint32_t support = 0;
};

using ProtoKey = std::pair<int, int>;  // (class, hop)

/// Prototypes kept sorted by (class, hop), at most one per key.
class PrototypeSet {
public:
    PrototypeSet() = default;

    void insert(Prototype p) {
        const ProtoKey key{p.class_id, p.hop};
        auto it = std::lower_bound(items_.begin(), items_.end(), key, [](const Prototype& a, const ProtoKey& k) {
            return ProtoKey{a.class_id, a.hop} < k;
        });
        if (it != items_.end() && it->class_id == p.class_id && it->hop == p.hop) *it = std::move(p);
        else items_.insert(it, std::move(p));
    }

    const Prototype* find(int cls, int hop) const {
        const ProtoKey key{cls, hop};
        auto it = std::lower_bound(items_.begin(), items_.end(), key, [](const Prototype& a, const ProtoKey& k) {
            return ProtoKey{a.class_id, a.hop} < k;
        });
        if (it != items_.end() && it->class_id == cls && it->hop == hop) return &*it;
        return nullptr;
    }

    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }
    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    const std::vector<Prototype>& items() const noexcept { return items_; }

private:
    std::vector<Prototype> items_;
};

// ---------------------------------------------------------------------------
// Attention scorer: score(e) = tanh(tanh(e A1 + c1) a2 + c2), applied to each
// neighbor's projected embedding independently.

struct ScorerWeights {
    Matrix a1, c1, a2, c2;

    std::array<Matrix*, 4> tensors() { return {&a1, &c1, &a2, &c2}; }
    std::array<const Matrix*, 4> tensors() const { return {&a1, &c1, &a2, &c2}; }

    ScorerWeights zeros_like() const {
        return {Matrix::Zero(a1.rows(), a1.cols()), Matrix::Zero(c1.rows(), c1.cols()),
                Matrix::Zero(a2.rows(), a2.cols()), Matrix::Zero(c2.rows(), c2.cols())};
    }
};

class AttentionScorer {
public:
    AttentionScorer() = default;

    /// Zero weights: every neighbor scores 0, i.e. uniform attention.
    AttentionScorer(std::size_t proto_dim, std::size_t hidden)
        : w_{Matrix::Zero(static_cast<Eigen::Index>(proto_dim), static_cast<Eigen::Index>(hidden)),
             Matrix::Zero(1, static_cast<Eigen::Index>(hidden)), Matrix::Zero(static_cast<Eigen::Index>(hidden), 1),
             Matrix::Zero(1, 1)} {}

    AttentionScorer(std::size_t proto_dim, std::size_t hidden, Rng& rng) : AttentionScorer(proto_dim, hidden) {
        const double bound = std::sqrt(6.0 / static_cast<double>(proto_dim + hidden));
        for (Eigen::Index i = 0; i < w_.a1.size(); ++i) w_.a1.data()[i] = (2.0 * uniform01(rng) - 1.0) * bound;
        const double bound2 = std::sqrt(6.0 / static_cast<double>(hidden + 1));
        for (Eigen::Index i = 0; i < w_.a2.size(); ++i) w_.a2.data()[i] = (2.0 * uniform01(rng) - 1.0) * bound2;
    }

    const ScorerWeights& weights() const noexcept { return w_; }
    ScorerWeights& weights() noexcept { return w_; }

    struct Trace {
        Matrix hidden;  // n x q, after tanh
        Vector score;   // n, after the outer tanh
    };

    Trace score_all(const Matrix& projected) const {
        Trace t;
        t.hidden = ((projected * w_.a1).rowwise() + w_.c1.row(0)).array().tanh().matrix();
        t.score = ((t.hidden * w_.a2).array() + w_.c2(0, 0)).tanh().matrix();
        return t;
    }

    /// Back-propagates d_score into d_projected and the scorer weights.
    void backward(const Matrix& projected, const Trace& t, const Vector& d_score, Matrix& d_projected,
                  ScorerWeights& grad) const {
        const Vector dz = d_score.cwiseProduct((1.0 - t.score.array().square()).matrix());
        grad.a2 += t.hidden.transpose() * dz;
        grad.c2(0, 0) += dz.sum();
        const Matrix d_pre = (dz * w_.a2.transpose()).cwiseProduct((1.0 - t.hidden.array().square()).matrix());
        grad.a1 += projected.transpose() * d_pre;
        grad.c1 += d_pre.colwise().sum();
        d_projected += d_pre * w_.a1.transpose();
    }

private:
    ScorerWeights w_;
};

// ---------------------------------------------------------------------------

/// Truncated BFS balls for every node, reused across prototype rebuilds.
class HopIndex {
public:
    HopIndex() = default;
    HopIndex(const Graph& g, std::size_t max_hop) : max_hop_(max_hop), balls_(g.num_nodes()) {
        for (std::size_t v = 0; v < g.num_nodes(); ++v) balls_[v] = bfs_within(g, v, max_hop);
    }
    std::size_t max_hop() const noexcept { return max_hop_; }
    std::span<const std::pair<std::size_t, std::size_t>> ball(std::size_t v) const { return balls_[v]; }

    /// Same contract as khop_class_neighborhood, served from the cached balls.
    void neighborhood(std::size_t v, std::size_t hops, int cls, std::span<const int> labels,
                      std::vector<std::size_t>& out) const {
        out.clear();
        for (const auto& [u, d] : balls_[v])
            if (d <= hops && (u == v || labels[u] == cls)) out.push_back(u);
    }

private:
    std::size_t max_hop_ = 0;
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> balls_;
};

/// Train nodes with an observed label keep it; any other node receives its
/// argmax pseudo-label when the top soft-label reaches `threshold`, else kUnlabeled.
inline std::vector<int> pseudo_annotate(const Matrix& soft, std::span<const int> true_labels,
                                        std::span<const std::uint8_t> supervised, double threshold) {
    std::vector<int> out(true_labels.size(), kUnlabeled);
    for (std::size_t v = 0; v < out.size(); ++v) {
        if (supervised[v]) {
            out[v] = true_labels[v];
            continue;
        }
        Eigen::Index best = 0;
        const auto r = static_cast<Eigen::Index>(v);
        for (Eigen::Index j = 1; j < soft.cols(); ++j)
            if (soft(r, j) > soft(r, best)) best = j;
        if (soft(r, best) >= threshold) out[v] = static_cast<int>(best);
    }
    return out;
}

inline std::vector<std::vector<std::size_t>> anchors_by_class(std::span<const int> labels, std::size_t num_classes) {
    std::vector<std::vector<std::size_t>> anchors(num_classes);
    for (std::size_t v = 0; v < labels.size(); ++v)
        if (labels[v] >= 0) anchors[static_cast<std::size_t>(labels[v])].push_back(v);
    return anchors;
}

/// Class means of projected embeddings over usable nodes (hop 0 only).
/// Classes without usable nodes are omitted.
inline PrototypeSet naive_local_prototypes(const Matrix& projected, std::span<const int> labels,
                                           std::size_t num_classes) {
    PrototypeSet out;
    const auto anchors = anchors_by_class(labels, num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (anchors[c].empty()) continue;
        Vector acc = Vector::Zero(projected.cols());
        for (std::size_t v : anchors[c]) acc += projected.row(static_cast<Eigen::Index>(v)).transpose();
        acc /= static_cast<double>(anchors[c].size());
        out.insert({static_cast<int>(c), 0, std::move(acc), static_cast<std::uint32_t>(anchors[c].size())});
    }
    return out;
}

struct PrototypeOptions {
    std::size_t max_hop = 0;
    bool literal_normalization = false;
};

/// Upstream partial dL/dP for one prototype.
struct PrototypeCotangent {
    int class_id;
    int hop;
    Vector grad;
};

namespace detail {

/// Shared walk over (class, hop, anchor) for both directions, so the forward
/// value and its vector-Jacobian product see the same neighborhoods.
template <typename Visit>
void for_each_neighborhood(const HopIndex& index, std::span<const int> labels, std::size_t num_classes,
                           std::size_t max_hop, Visit&& visit) {
    const auto anchors = anchors_by_class(labels, num_classes);
    std::vector<std::size_t> members;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (anchors[c].empty()) continue;
        for (std::size_t h = 0; h <= max_hop; ++h) {
            for (std::size_t i = 0; i < anchors[c].size(); ++i) {
                index.neighborhood(anchors[c][i], h, static_cast<int>(c), labels, members);
                visit(c, h, anchors[c].size(), i, std::span<const std::size_t>(members));
            }
        }
    }
}

inline void softmax_over(const Vector& score, std::span<const std::size_t> members, std::vector<double>& w) {
    w.resize(members.size());
    double mx = score(static_cast<Eigen::Index>(members[0]));
    for (std::size_t j : members) mx = std::max(mx, score(static_cast<Eigen::Index>(j)));
    double total = 0.0;
    for (std::size_t k = 0; k < members.size(); ++k)
        total += (w[k] = std::exp(score(static_cast<Eigen::Index>(members[k])) - mx));
    for (double& x : w) x /= total;
}

}  // namespace detail

/// Multi-hop attention prototypes. For class c and hop h, each anchor i
/// (usable node labeled c) aggregates its class-c h-hop neighborhood with
/// softmax attention weights; the prototype is the mean over anchors. With
/// literal_normalization the inner sum is also divided by the neighborhood
/// size. Hop 0 reduces exactly to naive_local_prototypes.
inline PrototypeSet topology_aware_prototypes(const HopIndex& index, const Matrix& projected,
                                              std::span<const int> labels, std::size_t num_classes,
                                              const AttentionScorer& scorer, const PrototypeOptions& opt) {
    if (opt.max_hop > index.max_hop()) {
        throw Error(ErrorCode::InvalidArgument, "max_hop exceeds the hop index depth");
    }
    const auto trace = scorer.score_all(projected);
    std::vector<Vector> acc(num_classes * (opt.max_hop + 1));
    std::vector<std::uint32_t> support(num_classes, 0);
    std::vector<double> w;
    detail::for_each_neighborhood(index, labels, num_classes, opt.max_hop,
        [&](std::size_t c, std::size_t h, std::size_t n_anchor, std::size_t, std::span<const std::size_t> members) {
            Vector& slot = acc[c * (opt.max_hop + 1) + h];
            if (slot.size() == 0) slot = Vector::Zero(projected.cols());
            support[c] = static_cast<std::uint32_t>(n_anchor);
            detail::softmax_over(trace.score, members, w);
            Vector inner = Vector::Zero(projected.cols());
            for (std::size_t k = 0; k < members.size(); ++k)
                inner += w[k] * projected.row(static_cast<Eigen::Index>(members[k])).transpose();
            if (opt.literal_normalization) inner /= static_cast<double>(members.size());
            slot += inner;
        });
    PrototypeSet out;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (support[c] == 0) continue;
        for (std::size_t h = 0; h <= opt.max_hop; ++h) {
            Vector v = std::move(acc[c * (opt.max_hop + 1) + h]);
            v /= static_cast<double>(support[c]);
            out.insert({static_cast<int>(c), static_cast<int>(h), std::move(v), support[c]});
        }
    }
    return out;
}

/// Vector-Jacobian product of topology_aware_prototypes: accumulates
/// dL/d(projected) and dL/d(scorer weights) given dL/dP for some prototypes.
inline void topology_aware_backward(const HopIndex& index, const Matrix& projected, std::span<const int> labels,
                                    std::size_t num_classes, const AttentionScorer& scorer,
                                    const PrototypeOptions& opt, std::span<const PrototypeCotangent> upstream,
                                    Matrix& d_projected, ScorerWeights& d_scorer) {
    std::vector<const Vector*> grad(num_classes * (opt.max_hop + 1), nullptr);
    for (const auto& u : upstream) {
        if (u.class_id >= 0 && static_cast<std::size_t>(u.class_id) < num_classes && u.hop >= 0 &&
            static_cast<std::size_t>(u.hop) <= opt.max_hop) {
            grad[static_cast<std::size_t>(u.class_id) * (opt.max_hop + 1) + static_cast<std::size_t>(u.hop)] = &u.grad;
        }
    }
    const auto trace = scorer.score_all(projected);
    Vector d_score = Vector::Zero(projected.rows());
    std::vector<double> w;
    detail::for_each_neighborhood(index, labels, num_classes, opt.max_hop,
        [&](std::size_t c, std::size_t h, std::size_t n_anchor, std::size_t, std::span<const std::size_t> members) {
            const Vector* g = grad[c * (opt.max_hop + 1) + h];
            if (!g) return;
            Vector gi = *g / static_cast<double>(n_anchor);
            if (opt.literal_normalization) gi /= static_cast<double>(members.size());
            detail::softmax_over(trace.score, members, w);
            Vector inner = Vector::Zero(projected.cols());
            for (std::size_t k = 0; k < members.size(); ++k)
                inner += w[k] * projected.row(static_cast<Eigen::Index>(members[k])).transpose();
            const double inner_dot = inner.dot(gi);
            for (std::size_t k = 0; k < members.size(); ++k) {
                const auto r = static_cast<Eigen::Index>(members[k]);
                d_projected.row(r) += w[k] * gi.transpose();
                d_score(r) += w[k] * (projected.row(r).dot(gi) - inner_dot);
            }
        });
    scorer.backward(projected, trace, d_score, d_projected, d_scorer);
}

/// Gaussian perturbation of ceil(dim_fraction * p) uniformly chosen coordinates
/// per prototype, std = sigma_rel * ||v|| / sqrt(p).
inline PrototypeSet add_prototype_noise(const PrototypeSet& protos, double dim_fraction, double sigma_rel,
                                        std::uint64_t seed) {
    if (!(dim_fraction >= 0.0 && dim_fraction <= 1.0) || !(sigma_rel >= 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "noise parameters out of range");
    }
    PrototypeSet out = protos;
    if (dim_fraction == 0.0 || sigma_rel == 0.0) return out;
    std::uint64_t stream = 0;
    for (auto& p : out) {
        Rng rng = make_rng(seed, stream++);
        const auto dim = static_cast<std::size_t>(p.vector.size());
        const auto k = static_cast<std::size_t>(std::ceil(dim_fraction * static_cast<double>(dim) - 1e-9));
        const double sd = sigma_rel * p.vector.norm() / std::sqrt(static_cast<double>(dim));
        for (std::size_t j : sample_without_replacement(dim, k, rng))
            p.vector(static_cast<Eigen::Index>(j)) += sd * standard_normal(rng);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Wire format: per prototype [u16 class][u16 hop][u32 support][p x f64], all LE.

inline std::size_t prototype_wire_bytes(std::size_t proto_dim) { return 8 + 8 * proto_dim; }

inline std::vector<std::uint8_t> encode_prototypes(const PrototypeSet& set) {
    std::vector<std::uint8_t> out;
    auto put = [&](std::uint64_t v, int bytes) {
        for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    for (const auto& p : set) {
        put(static_cast<std::uint16_t>(p.class_id), 2);
        put(static_cast<std::uint16_t>(p.hop), 2);
        put(p.support, 4);
        for (Eigen::Index j = 0; j < p.vector.size(); ++j) put(std::bit_cast<std::uint64_t>(p.vector(j)), 8);
    }
    return out;
}

inline PrototypeSet decode_prototypes(std::span<const std::uint8_t> bytes, std::size_t proto_dim) {
    const std::size_t record = prototype_wire_bytes(proto_dim);
    if (bytes.size() % record != 0) throw Error(ErrorCode::DataFormat, "prototype stream length is not a record multiple");
    auto get = [&](std::size_t pos, int n) {
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes[pos + static_cast<std::size_t>(i)]) << (8 * i);
        return v;
    };
    PrototypeSet out;
    for (std::size_t pos = 0; pos < bytes.size(); pos += record) {
        Prototype p;
        p.class_id = static_cast<int>(get(pos, 2));
        p.hop = static_cast<int>(get(pos + 2, 2));
        p.support = static_cast<std::uint32_t>(get(pos + 4, 4));
        p.vector.resize(static_cast<Eigen::Index>(proto_dim));
        for (std::size_t j = 0; j < proto_dim; ++j) p.vector(static_cast<Eigen::Index>(j)) = std::bit_cast<double>(get(pos + 8 + 8 * j, 8));
        out.insert(std::move(p));
    }
    return out;
}

}  // namespace fedpg
