#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "fedpg/backbone.hpp"
#include "fedpg/common.hpp"
#include "fedpg/graph.hpp"
#include "fedpg/prototypes.hpp"

namespace fedpg {

/// Local objective: L = L_ce + mu * L_proto, with
/// L_proto = sum over shared (class, hop) keys of ||P - P_target||_2.
struct LossBreakdown {
    double ce = 0.0;
    double proto = 0.0;
    double total = 0.0;
};

enum class PrototypeMode { Naive, TopologyAware };

/// Trainable state owned by one client.
struct ClientModel {
    Backbone backbone;
    AttentionScorer scorer;
    bool train_scorer = true;
};

struct LocalGradient {
    BackboneWeights backbone;
    ScorerWeights scorer;
};

/// Graph-side precomputation for one client subgraph.
struct LocalContext {
    const Graph* graph = nullptr;
    GraphOperator op;
    HopIndex hops;
    std::vector<std::size_t> supervised;

    LocalContext() = default;
    LocalContext(const Graph& g, const BackboneSpec& spec, std::size_t max_hop)
        : graph(&g), op(make_graph_operator(g, spec)), hops(g, max_hop) {
        for (std::size_t v = 0; v < g.num_nodes(); ++v)
            if (g.is_supervised(v)) supervised.push_back(v);
    }
};

struct LocalObjective {
    LossBreakdown loss;
    LocalGradient grad;
    PrototypeSet local_prototypes;
};

inline PrototypeSet build_prototypes(const ClientModel& m, const LocalContext& ctx, const Matrix& projected,
                                     std::span<const int> labels, PrototypeMode mode, const PrototypeOptions& opt) {
    const std::size_t k = ctx.graph->num_classes();
    return mode == PrototypeMode::Naive ? naive_local_prototypes(projected, labels, k)
                                        : topology_aware_prototypes(ctx.hops, projected, labels, k, m.scorer, opt);
}

/// Loss and exact gradients for all client weights (backbone, projection,
/// attention scorer). `personalized` may be null, which disables L_proto.
inline LocalObjective local_loss(const ClientModel& m, const LocalContext& ctx, std::span<const int> labels,
                                 const PrototypeSet* personalized, double mu, PrototypeMode mode,
                                 const PrototypeOptions& opt) {
    if (ctx.supervised.empty()) throw Error(ErrorCode::InvalidArgument, "empty train set");
    LocalObjective out;
    const Activations act = m.backbone.forward(ctx.op);

    Matrix d_logits;
    out.loss.ce = cross_entropy(act.logits, ctx.graph->labels(), ctx.supervised, &d_logits);

    Matrix d_projected;
    out.grad.scorer = m.scorer.weights().zeros_like();
    if (personalized) {
        out.local_prototypes = build_prototypes(m, ctx, act.projected, labels, mode, opt);
        std::vector<PrototypeCotangent> upstream;
        for (const auto& p : out.local_prototypes) {
            const Prototype* target = personalized->find(p.class_id, p.hop);
            if (!target) continue;
            const Vector diff = p.vector - target->vector;
            const double norm = diff.norm();
            out.loss.proto += norm;
            if (norm > 0.0 && mu != 0.0) upstream.push_back({p.class_id, p.hop, diff * (mu / norm)});
        }
        if (!upstream.empty()) {
            d_projected = Matrix::Zero(act.projected.rows(), act.projected.cols());
            if (mode == PrototypeMode::Naive) {
                const auto anchors = anchors_by_class(labels, ctx.graph->num_classes());
                for (const auto& u : upstream) {
                    const auto& members = anchors[static_cast<std::size_t>(u.class_id)];
                    const Vector g = u.grad / static_cast<double>(members.size());
                    for (std::size_t v : members) d_projected.row(static_cast<Eigen::Index>(v)) += g.transpose();
                }
            } else {
                topology_aware_backward(ctx.hops, act.projected, labels, ctx.graph->num_classes(), m.scorer, opt,
                                        upstream, d_projected, out.grad.scorer);
            }
        }
    }
    out.loss.total = out.loss.ce + mu * out.loss.proto;
    out.grad.backbone = m.backbone.backward(ctx.op, act, d_logits, d_projected);
    return out;
}

/// One full-batch gradient-descent step; returns the loss before the step.
inline LossBreakdown train_epoch(ClientModel& m, const LocalContext& ctx, std::span<const int> labels,
                                 const PrototypeSet* personalized, double lr, double mu, PrototypeMode mode,
                                 const PrototypeOptions& opt) {
    if (!(lr >= 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be non-negative");
    LocalObjective obj = local_loss(m, ctx, labels, personalized, mu, mode, opt);
    if (!std::isfinite(obj.loss.total)) {
        throw Error(ErrorCode::Diverged, "local loss is not finite (ce=" + std::to_string(obj.loss.ce) +
                                             ", proto=" + std::to_string(obj.loss.proto) + ")");
    }
    if (lr == 0.0) return obj.loss;
    auto dst = m.backbone.weights().tensors();
    auto src = obj.grad.backbone.tensors();
    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] -= lr * *src[i];
    if (m.train_scorer) {
        auto sdst = m.scorer.weights().tensors();
        auto ssrc = obj.grad.scorer.tensors();
        for (std::size_t i = 0; i < sdst.size(); ++i) *sdst[i] -= lr * *ssrc[i];
    }
    return obj.loss;
}

}  // namespace fedpg
