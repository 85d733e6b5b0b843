#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fedpg/common.hpp"
#include "fedpg/prototypes.hpp"

namespace fedpg {

/// Prototypes received from one client in one round.
struct ClientUpload {
    std::size_t client_id = 0;
    PrototypeSet prototypes;
};

/// Support-weighted mean per (class, hop) over the clients that uploaded it.
/// Weights are normalized before mixing, so a single uploader is reproduced
/// exactly.
inline PrototypeSet naive_global_aggregate(std::span<const ClientUpload> uploads) {
    std::map<ProtoKey, double> total;
    for (const auto& u : uploads)
        for (const auto& p : u.prototypes) total[{p.class_id, p.hop}] += static_cast<double>(p.support);
    std::map<ProtoKey, Vector> acc;
    for (const auto& u : uploads) {
        for (const auto& p : u.prototypes) {
            const ProtoKey key{p.class_id, p.hop};
            const double coef = static_cast<double>(p.support) / total[key];
            auto it = acc.find(key);
            if (it == acc.end()) acc.emplace(key, coef * p.vector);
            else it->second += coef * p.vector;
        }
    }
    PrototypeSet out;
    for (auto& [key, v] : acc) out.insert({key.first, key.second, std::move(v), static_cast<std::uint32_t>(total[key])});
    return out;
}

inline double cosine_similarity(const Vector& a, const Vector& b) {
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        throw Error(ErrorCode::DegeneratePrototype, "cosine similarity of a zero-norm prototype");
    }
    return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

/// min(max over distinct center pairs of their cosine, epsilon); 0 when fewer
/// than two centers exist.
inline double adaptive_margin(std::span<const Vector> centers, double epsilon) {
    if (centers.size() < 2) return 0.0;
    double best = -1.0;
    for (std::size_t a = 0; a < centers.size(); ++a)
        for (std::size_t b = a + 1; b < centers.size(); ++b) best = std::max(best, cosine_similarity(centers[a], centers[b]));
    return std::min(best, epsilon);
}

/// Contrastive query set for one (class, hop) anchor.
struct QueryBatch {
    int class_id = 0;
    int hop = 0;
    std::vector<Vector> positives;
    std::vector<Vector> negatives;
    double margin = 0.0;
};

/// Unweighted mean of every uploaded prototype of each class, across clients
/// and hops. Indexed by class; classes nobody uploaded are empty vectors.
inline std::vector<Vector> query_centers(std::span<const ClientUpload> uploads, std::size_t num_classes) {
    std::vector<Vector> centers(num_classes);
    std::vector<double> count(num_classes, 0.0);
    for (const auto& u : uploads) {
        for (const auto& p : u.prototypes) {
            auto& c = centers[static_cast<std::size_t>(p.class_id)];
            if (c.size() == 0) c = Vector::Zero(p.vector.size());
            c += p.vector;
            count[static_cast<std::size_t>(p.class_id)] += 1.0;
        }
    }
    for (std::size_t c = 0; c < num_classes; ++c)
        if (count[c] > 0.0) centers[c] /= count[c];
    return centers;
}

inline double round_margin(std::span<const ClientUpload> uploads, std::size_t num_classes, double epsilon) {
    std::vector<Vector> present;
    for (auto& c : query_centers(uploads, num_classes))
        if (c.size() != 0) present.push_back(std::move(c));
    return adaptive_margin(present, epsilon);
}

/// Positives: every hop-h upload of class c, plus ceil(delta_s * |base|)
/// class-c uploads from other hops drawn without replacement. Negatives are
/// built the same way from classes other than c. Zero vectors carry no
/// direction and are left out. Returns an empty-positive batch when nobody
/// uploaded (c, h).
inline QueryBatch build_query_set(std::span<const ClientUpload> uploads, int cls, int hop, double delta_s,
                                  double margin, Rng& rng) {
    if (!(delta_s >= 0.0 && delta_s <= 1.0)) throw Error(ErrorCode::InvalidArgument, "delta_s must lie in [0,1]");
    std::vector<const Vector*> base_pos, pool_pos, base_neg, pool_neg;
    for (const auto& u : uploads) {
        for (const auto& p : u.prototypes) {
            if (p.vector.norm() == 0.0) continue;
            const bool same_class = p.class_id == cls, same_hop = p.hop == hop;
            (same_class ? (same_hop ? base_pos : pool_pos) : (same_hop ? base_neg : pool_neg)).push_back(&p.vector);
        }
    }
    QueryBatch q;
    q.class_id = cls;
    q.hop = hop;
    q.margin = margin;
    auto fill = [&](const std::vector<const Vector*>& base, const std::vector<const Vector*>& pool,
                    std::vector<Vector>& out) {
        for (const Vector* v : base) out.push_back(*v);
        const auto extra = static_cast<std::size_t>(std::ceil(delta_s * static_cast<double>(base.size()) - 1e-9));
        for (std::size_t i : sample_without_replacement(pool.size(), extra, rng)) out.push_back(*pool[i]);
    };
    fill(base_pos, pool_pos, q.positives);
    if (q.positives.empty() || base_pos.empty()) {
        q.positives.clear();
        return q;
    }
    fill(base_neg, pool_neg, q.negatives);
    return q;
}

/// All non-empty (class, hop) batches of a round in lexicographic order.
inline std::vector<QueryBatch> build_query_sets(std::span<const ClientUpload> uploads, std::size_t num_classes,
                                                std::size_t max_hop, double delta_s, double epsilon,
                                                std::uint64_t seed) {
    const double margin = round_margin(uploads, num_classes, epsilon);
    Rng rng = make_rng(seed, 0x9b);
    std::vector<QueryBatch> out;
    for (std::size_t c = 0; c < num_classes; ++c) {
        for (std::size_t h = 0; h <= max_hop; ++h) {
            QueryBatch q = build_query_set(uploads, static_cast<int>(c), static_cast<int>(h), delta_s, margin, rng);
            if (!q.positives.empty()) out.push_back(std::move(q));
        }
    }
    return out;
}

struct ContrastiveTerm {
    double loss = 0.0;
    Vector d_anchor;
};

/// -log( sum_pos e^{D+M} / (sum_pos e^{D+M} + sum_neg e^{D}) ) with D the
/// cosine to `anchor`, plus its gradient w.r.t. the anchor.
inline ContrastiveTerm contrastive_term(const Vector& anchor, const QueryBatch& q) {
    if (q.positives.empty()) throw Error(ErrorCode::InvalidArgument, "contrastive batch without positives");
    const double na = anchor.norm();
    if (na == 0.0) {
        throw Error(ErrorCode::DegeneratePrototype, "zero-norm anchor for class " + std::to_string(q.class_id) +
                                                        " hop " + std::to_string(q.hop));
    }
    ContrastiveTerm t;
    t.d_anchor = Vector::Zero(anchor.size());
    if (q.negatives.empty()) return t;

    const std::size_t np = q.positives.size(), nn = q.negatives.size();
    std::vector<double> logit(np + nn), inv_norm(np + nn), cosv(np + nn);
    for (std::size_t i = 0; i < np + nn; ++i) {
        const Vector& x = i < np ? q.positives[i] : q.negatives[i - np];
        inv_norm[i] = 1.0 / x.norm();
        cosv[i] = anchor.dot(x) * inv_norm[i] / na;
        logit[i] = cosv[i] + (i < np ? q.margin : 0.0);
    }
    const double mx = *std::max_element(logit.begin(), logit.end());
    double z_pos = 0.0, z_all = 0.0;
    for (std::size_t i = 0; i < np + nn; ++i) {
        const double e = std::exp(logit[i] - mx);
        z_all += e;
        if (i < np) z_pos += e;
    }
    t.loss = std::log(z_all) - std::log(z_pos);
    for (std::size_t i = 0; i < np + nn; ++i) {
        const double e = std::exp(logit[i] - mx);
        const double d_cos = e / z_all - (i < np ? e / z_pos : 0.0);
        const Vector& x = i < np ? q.positives[i] : q.negatives[i - np];
        // d cos(a, x) / d a = x / (|a||x|) - cos * a / |a|^2
        t.d_anchor += d_cos * (x * (inv_norm[i] / na) - cosv[i] * anchor / (na * na));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Global prototype generator: universal = relu(trainable W1 + b1) W2 + b2,
// one trainable row per (class, hop), generator weights shared by all rows.

struct GpgWeights {
    Matrix trainable, w1, b1, w2, b2;

    std::array<Matrix*, 5> tensors() { return {&trainable, &w1, &b1, &w2, &b2}; }
    std::array<const Matrix*, 5> tensors() const { return {&trainable, &w1, &b1, &w2, &b2}; }

    GpgWeights zeros_like() const {
        GpgWeights z;
        auto d = z.tensors();
        auto s = tensors();
        for (std::size_t i = 0; i < d.size(); ++i) *d[i] = Matrix::Zero(s[i]->rows(), s[i]->cols());
        return z;
    }
};

class GpgState {
public:
    GpgState() = default;

    GpgState(std::size_t num_classes, std::size_t max_hop, std::size_t proto_dim, std::uint64_t seed)
        : num_classes_(num_classes), max_hop_(max_hop) {
        Rng rng = make_rng(seed, 0x6a);
        const auto p = static_cast<Eigen::Index>(proto_dim);
        const auto rows = static_cast<Eigen::Index>(num_classes * (max_hop + 1));
        w_.trainable.resize(rows, p);
        for (Eigen::Index i = 0; i < w_.trainable.size(); ++i) w_.trainable.data()[i] = uniform01(rng) - 0.5;
        const double bound = std::sqrt(6.0 / static_cast<double>(2 * proto_dim));
        auto glorot = [&] {
            Matrix m(p, p);
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0 * uniform01(rng) - 1.0) * bound;
            return m;
        };
        w_.w1 = glorot();
        w_.b1 = Matrix::Zero(1, p);
        w_.w2 = glorot();
        w_.b2 = Matrix::Zero(1, p);
        refresh();
    }

    std::size_t num_classes() const noexcept { return num_classes_; }
    std::size_t max_hop() const noexcept { return max_hop_; }
    std::size_t row(int cls, int hop) const {
        return static_cast<std::size_t>(cls) * (max_hop_ + 1) + static_cast<std::size_t>(hop);
    }

    const GpgWeights& weights() const noexcept { return w_; }
    GpgWeights& weights() noexcept { return w_; }
    const Matrix& universal() const noexcept { return universal_; }
    Vector universal(int cls, int hop) const { return universal_.row(static_cast<Eigen::Index>(row(cls, hop))).transpose(); }

    /// Recomputes the universal prototypes from the current weights.
    void refresh() {
        hidden_pre_ = (w_.trainable * w_.w1).rowwise() + w_.b1.row(0);
        hidden_ = hidden_pre_.cwiseMax(0.0);
        universal_ = (hidden_ * w_.w2).rowwise() + w_.b2.row(0);
    }

    /// Back-propagates dL/d(universal) to all generator weights.
    GpgWeights backward(const Matrix& d_universal) const {
        GpgWeights g;
        g.w2 = hidden_.transpose() * d_universal;
        g.b2 = d_universal.colwise().sum();
        const Matrix d_hidden =
            (d_universal * w_.w2.transpose()).cwiseProduct((hidden_pre_.array() > 0.0).cast<double>().matrix());
        g.w1 = w_.trainable.transpose() * d_hidden;
        g.b1 = d_hidden.colwise().sum();
        g.trainable = d_hidden * w_.w1.transpose();
        return g;
    }

private:
    std::size_t num_classes_ = 0;
    std::size_t max_hop_ = 0;
    GpgWeights w_;
    Matrix hidden_pre_, hidden_, universal_;
};

struct GpgObjective {
    double loss = 0.0;
    GpgWeights grad;
};

/// Sum of contrastive terms over `batches`, reduced in batch order.
inline GpgObjective gpg_objective(const GpgState& gpg, std::span<const QueryBatch> batches) {
    Matrix d_universal = Matrix::Zero(gpg.universal().rows(), gpg.universal().cols());
    GpgObjective out;
    for (const auto& q : batches) {
        const auto r = static_cast<Eigen::Index>(gpg.row(q.class_id, q.hop));
        const ContrastiveTerm t = contrastive_term(gpg.universal().row(r).transpose(), q);
        out.loss += t.loss;
        d_universal.row(r) += t.d_anchor.transpose();
    }
    out.grad = gpg.backward(d_universal);
    return out;
}

struct GpgTrainOptions {
    std::size_t epochs = 100;
    double lr = 0.01;
    double delta_s = 0.5;
    double epsilon = 0.5;
};

/// Builds the round's query sets once, then takes `epochs` gradient steps.
/// Returns the loss before each step.
inline std::vector<double> train_gpg(GpgState& gpg, std::span<const ClientUpload> uploads,
                                     const GpgTrainOptions& opt, std::uint64_t seed) {
    const auto batches = build_query_sets(uploads, gpg.num_classes(), gpg.max_hop(), opt.delta_s, opt.epsilon, seed);
    std::vector<double> history;
    history.reserve(opt.epochs);
    for (std::size_t e = 0; e < opt.epochs; ++e) {
        GpgObjective obj = gpg_objective(gpg, batches);
        if (!std::isfinite(obj.loss)) throw Error(ErrorCode::Diverged, "server contrastive loss is not finite");
        history.push_back(obj.loss);
        auto dst = gpg.weights().tensors();
        auto src = obj.grad.tensors();
        for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] -= opt.lr * *src[i];
        gpg.refresh();
    }
    return history;
}

/// Universal prototypes for every (class, hop) some client uploaded; support
/// is the total uploaded support.
inline PrototypeSet universal_prototypes(const GpgState& gpg, std::span<const ClientUpload> uploads) {
    std::map<ProtoKey, std::uint64_t> support;
    for (const auto& u : uploads)
        for (const auto& p : u.prototypes) support[{p.class_id, p.hop}] += p.support;
    PrototypeSet out;
    for (const auto& [key, n] : support) {
        if (static_cast<std::size_t>(key.first) >= gpg.num_classes() || static_cast<std::size_t>(key.second) > gpg.max_hop()) continue;
        out.insert({key.first, key.second, gpg.universal(key.first, key.second), static_cast<std::uint32_t>(n)});
    }
    return out;
}

/// Signature = concatenation over the (class, hop) grid, zero blocks where a
/// client has no prototype.
inline Vector prototype_signature(const PrototypeSet& set, std::size_t num_classes, std::size_t max_hop,
                                  std::size_t proto_dim) {
    const auto p = static_cast<Eigen::Index>(proto_dim);
    Vector sig = Vector::Zero(static_cast<Eigen::Index>(num_classes * (max_hop + 1)) * p);
    for (const auto& proto : set) {
        if (static_cast<std::size_t>(proto.class_id) >= num_classes || static_cast<std::size_t>(proto.hop) > max_hop) continue;
        const auto slot = static_cast<Eigen::Index>(static_cast<std::size_t>(proto.class_id) * (max_hop + 1) +
                                                    static_cast<std::size_t>(proto.hop));
        sig.segment(slot * p, p) = proto.vector;
    }
    return sig;
}

/// Cosine between prototype signatures; 0 when either client uploaded nothing.
inline double client_similarity(const PrototypeSet& a, const PrototypeSet& b, std::size_t num_classes,
                                std::size_t max_hop) {
    std::size_t p = 0;
    for (const auto& x : a) p = static_cast<std::size_t>(x.vector.size());
    for (const auto& x : b) p = static_cast<std::size_t>(x.vector.size());
    if (p == 0) return 0.0;
    const Vector sa = prototype_signature(a, num_classes, max_hop, p);
    const Vector sb = prototype_signature(b, num_classes, max_hop, p);
    const double na = sa.norm(), nb = sb.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return sa.dot(sb) / (na * nb);
}

struct FusionOptions {
    double alpha = 0.5;
    double lambda = 0.5;
    std::size_t num_classes = 0;
    std::size_t max_hop = 0;
};

/// For each uploading client i: P_i(c,h) = alpha * universal(c,h)
///   + (1 - alpha) * support-weighted mean of uploads (c,h) from clients k
/// with sim(i, k) >= lambda. Keys without any similar upload fall back to the
/// universal prototype. Output order follows `uploads`.
inline std::vector<PrototypeSet> personalized_fusion(const PrototypeSet& universal, std::span<const ClientUpload> uploads,
                                                     const FusionOptions& opt) {
    const std::size_t n = uploads.size();
    std::vector<std::vector<double>> sim(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = i; k < n; ++k) {
            const double s = i == k ? 1.0
                                    : client_similarity(uploads[i].prototypes, uploads[k].prototypes, opt.num_classes,
                                                        opt.max_hop);
            sim[i][k] = sim[k][i] = s;
        }
    }
    std::vector<PrototypeSet> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& u : universal) {
            std::vector<const Prototype*> similar;
            double weight = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                if (k != i && sim[i][k] < opt.lambda) continue;
                if (const Prototype* p = uploads[k].prototypes.find(u.class_id, u.hop)) {
                    similar.push_back(p);
                    weight += static_cast<double>(p->support);
                }
            }
            Vector fused = u.vector;
            if (weight > 0.0 && opt.alpha != 1.0) {
                Vector mix = Vector::Zero(u.vector.size());
                for (const Prototype* p : similar) mix += (static_cast<double>(p->support) / weight) * p->vector;
                fused = opt.alpha * u.vector + (1.0 - opt.alpha) * mix;
            }
            out[i].insert({u.class_id, u.hop, std::move(fused),
                           weight > 0.0 ? static_cast<std::uint32_t>(weight) : u.support});
        }
    }
    return out;
}

}  // namespace fedpg
