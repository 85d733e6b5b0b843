#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedpg/backbone.hpp"
#include "fedpg/common.hpp"
#include "fedpg/config.hpp"
#include "fedpg/graph.hpp"
#include "fedpg/local_training.hpp"
#include "fedpg/partition.hpp"
#include "fedpg/prototypes.hpp"
#include "fedpg/server.hpp"
#include "fedpg/sparsify.hpp"

namespace fedpg {

struct ClientMetrics {
    std::size_t client_id = 0;
    Split split = Split::Test;
    double accuracy = 0.0;
    double loss = 0.0;
    std::size_t support = 0;
};

struct LedgerEntry {
    std::size_t client_id = 0;
    std::uint64_t bytes_up = 0;
    std::uint64_t bytes_down = 0;
};

struct RoundMetrics {
    std::size_t round = 0;
    std::vector<std::size_t> participants;
    std::vector<ClientMetrics> clients;  // ordered by (client, split)
    std::vector<LedgerEntry> ledger;     // one entry per client
    std::uint64_t server_received = 0;
    std::uint64_t server_sent = 0;
    double global_test_accuracy = 0.0;
};

/// Support-weighted mean of per-client accuracies on `split`.
inline double global_accuracy(std::span<const ClientMetrics> rows, Split split = Split::Test) {
    double num = 0.0, den = 0.0;
    for (const auto& r : rows) {
        if (r.split != split) continue;
        num += r.accuracy * static_cast<double>(r.support);
        den += static_cast<double>(r.support);
    }
    return den > 0.0 ? num / den : 0.0;
}

/// Size-weighted average of the shared tensors (embedding and output layer).
/// The projection head is taken from the first model. Weights are normalized
/// up front so a single model is reproduced bit for bit.
inline BackboneWeights fedavg_aggregate(std::span<const BackboneWeights> models, std::span<const double> sizes) {
    if (models.empty() || models.size() != sizes.size()) {
        throw Error(ErrorCode::InvalidArgument, "fedavg needs one size per model");
    }
    double total = 0.0;
    for (double s : sizes) total += s;
    if (!(total > 0.0)) throw Error(ErrorCode::InvalidArgument, "fedavg weights sum to zero");
    BackboneWeights out = models[0];
    auto dst = out.tensors();
    for (std::size_t t = 0; t < 4; ++t) {
        *dst[t] = (sizes[0] / total) * *models[0].tensors()[t];
        for (std::size_t m = 1; m < models.size(); ++m) *dst[t] += (sizes[m] / total) * *models[m].tensors()[t];
    }
    return out;
}

struct ClientState {
    std::size_t id = 0;
    ClientModel model;
    LocalContext ctx;
    std::vector<std::uint8_t> supervised_mask;
    PrototypeSet received;  // last personalized/global prototypes, empty before the first broadcast
    bool has_received = false;
};

/// Round-robin over {propagated-linear L=2, propagated-linear L=3,
/// message-passing 2-layer} for mixed runs.
inline BackboneSpec client_backbone_spec(const FederationConfig& cfg, std::size_t client, std::size_t input_dim,
                                         std::size_t num_classes) {
    BackboneSpec s;
    s.input_dim = input_dim;
    s.num_classes = num_classes;
    s.hidden_dim = cfg.hidden_dim;
    s.proto_dim = cfg.proto_dim;
    s.layers = cfg.layers;
    switch (cfg.backbone) {
        case BackboneChoice::PropagatedLinear: s.kind = BackboneKind::PropagatedLinear; break;
        case BackboneChoice::MessagePassing2Layer: s.kind = BackboneKind::MessagePassing2Layer; s.layers = 2; break;
        case BackboneChoice::Mixed:
            s.kind = client % 3 == 2 ? BackboneKind::MessagePassing2Layer : BackboneKind::PropagatedLinear;
            s.layers = client % 3 == 1 ? 3 : 2;
            break;
    }
    return s;
}

/// Applies the configured sparsity simulation to the full graph.
inline Graph prepare_graph(const Graph& g, const FederationConfig& cfg) {
    if (cfg.sparsity_mode == "none") return g;
    return sparsify(g, parse_sparsity_mode(cfg.sparsity_mode), cfg.sparsity_keep_ratio, cfg.seed_sparsity);
}

/// Simulated federation: client states, server state and the round loop.
class Federation {
public:
    Federation(const FederationConfig& cfg, const Graph& graph)
        : Federation(cfg, partition_graph(graph, cfg.partition, cfg.num_clients, cfg.seed_partition),
                     graph.num_classes()) {}

    Federation(const FederationConfig& cfg, Partition partition, std::size_t num_classes)
        : cfg_(cfg), partition_(std::make_unique<Partition>(std::move(partition))), num_classes_(num_classes) {
        validate(cfg_);
        const std::size_t n = partition_->clients.size();
        std::vector<BackboneSpec> specs;
        std::size_t min_rf = std::numeric_limits<std::size_t>::max();
        for (std::size_t i = 0; i < n; ++i) {
            const Graph& g = partition_->clients[i].graph;
            specs.push_back(client_backbone_spec(cfg_, i, g.num_features(), num_classes_));
            min_rf = std::min(min_rf, specs.back().receptive_field());
        }
        max_hop_ = cfg_.method == Method::FedProtoNaive ? 0 : min_rf;
        if (cfg_.max_hop >= 0) max_hop_ = std::min(max_hop_, static_cast<std::size_t>(cfg_.max_hop));

        // Every client starts from the same broadcast initialization of its
        // architecture; the scorer is shared the same way.
        AttentionScorer scorer(cfg_.proto_dim, cfg_.scorer_hidden);
        if (!cfg_.uniform_attention) {
            Rng rng = make_rng(cfg_.seed_init, 0xa7);
            scorer = AttentionScorer(cfg_.proto_dim, cfg_.scorer_hidden, rng);
        }
        clients_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            ClientState& c = clients_[i];
            const Graph& g = partition_->clients[i].graph;
            c.id = i;
            Rng rng = make_rng(cfg_.seed_init, static_cast<std::uint64_t>(specs[i].kind) + 1);
            c.model.backbone = Backbone(specs[i], rng);
            c.model.scorer = scorer;
            c.model.train_scorer = !cfg_.uniform_attention;
            c.ctx = LocalContext(g, specs[i], max_hop_);
            c.supervised_mask.resize(g.num_nodes());
            for (std::size_t v = 0; v < g.num_nodes(); ++v) c.supervised_mask[v] = g.is_supervised(v) ? 1 : 0;
        }
        if (cfg_.method == Method::FedAvg) global_ = clients_.front().model.backbone;
        if (cfg_.method == Method::FedPG && !cfg_.gpg_bypass) {
            gpg_ = GpgState(num_classes_, max_hop_, cfg_.proto_dim, mix_seed(cfg_.seed_init, 0x69));
        }
    }

    const FederationConfig& config() const noexcept { return cfg_; }
    const Partition& partition() const noexcept { return *partition_; }
    const std::vector<ClientState>& clients() const noexcept { return clients_; }
    std::size_t max_hop() const noexcept { return max_hop_; }
    std::size_t rounds_done() const noexcept { return round_; }
    const GpgState& gpg() const noexcept { return gpg_; }
    const Backbone& global_model() const noexcept { return global_; }
    /// Uploads of the most recent round, in client-id order.
    const std::vector<ClientUpload>& last_uploads() const noexcept { return uploads_; }

    std::vector<std::size_t> sample_participants(std::size_t round) const {
        const std::size_t n = clients_.size();
        auto k = static_cast<std::size_t>(std::ceil(cfg_.participation_ratio * static_cast<double>(n) - 1e-9));
        k = std::clamp<std::size_t>(k, 1, n);
        Rng rng = make_rng(cfg_.seed_sampling, round);
        return sample_without_replacement(n, k, rng);
    }

    RoundMetrics run_round() {
        const std::size_t t = ++round_;
        RoundMetrics m;
        m.round = t;
        m.participants = sample_participants(t);
        m.ledger.resize(clients_.size());
        for (std::size_t i = 0; i < clients_.size(); ++i) m.ledger[i].client_id = i;

        if (cfg_.method == Method::FedAvg) fedavg_round(m);
        else prototype_round(m, t);

        for (const auto& e : m.ledger) {
            m.server_received += e.bytes_up;
            m.server_sent += e.bytes_down;
        }
        evaluate(m);
        return m;
    }

private:
    PrototypeMode mode() const {
        return cfg_.method == Method::FedProtoNaive ? PrototypeMode::Naive : PrototypeMode::TopologyAware;
    }
    PrototypeOptions proto_options() const { return {max_hop_, cfg_.literal_normalization}; }

    std::vector<int> effective_labels(const ClientState& c, const Matrix& logits) const {
        return pseudo_annotate(row_softmax(logits), c.ctx.graph->labels(), c.supervised_mask,
                               cfg_.confidence_threshold);
    }

    void train_local(ClientState& c, const PrototypeSet* target) {
        if (c.ctx.supervised.empty()) return;
        const std::vector<int> labels = effective_labels(c, c.model.backbone.forward(c.ctx.op).logits);
        for (std::size_t e = 0; e < cfg_.local_epochs; ++e) {
            train_epoch(c.model, c.ctx, labels, target, cfg_.lr_client, cfg_.mu, mode(), proto_options());
        }
    }

    PrototypeSet client_upload(const ClientState& c, std::size_t t) const {
        const Activations act = c.model.backbone.forward(c.ctx.op);
        const std::vector<int> labels = effective_labels(c, act.logits);
        PrototypeSet protos = build_prototypes(c.model, c.ctx, act.projected, labels, mode(), proto_options());
        if (cfg_.noise_dim_fraction > 0.0 && cfg_.noise_sigma_rel > 0.0) {
            protos = add_prototype_noise(protos, cfg_.noise_dim_fraction, cfg_.noise_sigma_rel,
                                         mix_seed(cfg_.seed_noise, mix_seed(t, c.id)));
        }
        return protos;
    }

    void prototype_round(RoundMetrics& m, std::size_t t) {
        uploads_.clear();
        const std::uint64_t proto_bytes = prototype_wire_bytes(cfg_.proto_dim);
        for (std::size_t i : m.participants) {
            ClientState& c = clients_[i];
            ClientUpload u{i, {}};
            try {
                train_local(c, c.has_received ? &c.received : nullptr);
                u.prototypes = client_upload(c, t);
            } catch (const Error& e) {
                throw Error(e.code(), "round " + std::to_string(t) + " client " + std::to_string(i) + ": " + e.what());
            }
            m.ledger[i].bytes_up = u.prototypes.size() * proto_bytes;
            uploads_.push_back(std::move(u));
        }
        std::vector<PrototypeSet> outgoing;
        if (cfg_.method == Method::FedProtoNaive) {
            outgoing.assign(uploads_.size(), naive_global_aggregate(uploads_));
        } else {
            PrototypeSet universal;
            if (cfg_.gpg_bypass) {
                universal = naive_global_aggregate(uploads_);
            } else {
                const GpgTrainOptions opt{cfg_.server_epochs, cfg_.lr_server, cfg_.delta_s, cfg_.epsilon};
                try {
                    train_gpg(gpg_, uploads_, opt, mix_seed(cfg_.seed_sampling, 0x5e7000 + t));
                } catch (const Error& e) {
                    throw Error(e.code(), "round " + std::to_string(t) + " server: " + e.what());
                }
                universal = universal_prototypes(gpg_, uploads_);
            }
            outgoing = personalized_fusion(universal, uploads_, {cfg_.alpha, cfg_.lambda, num_classes_, max_hop_});
        }
        for (std::size_t k = 0; k < uploads_.size(); ++k) {
            ClientState& c = clients_[uploads_[k].client_id];
            m.ledger[c.id].bytes_down = outgoing[k].size() * proto_bytes;
            c.received = std::move(outgoing[k]);
            c.has_received = true;
        }
    }

    void fedavg_round(RoundMetrics& m) {
        const std::uint64_t blob = serialize_model(global_).size();
        std::vector<BackboneWeights> models;
        std::vector<double> sizes;
        for (std::size_t i : m.participants) {
            ClientState& c = clients_[i];
            auto dst = c.model.backbone.weights().tensors();
            auto src = global_.weights().tensors();
            for (std::size_t k = 0; k < 4; ++k) *dst[k] = *src[k];
            m.ledger[i].bytes_down = blob;
            train_local(c, nullptr);
            m.ledger[i].bytes_up = serialize_model(c.model.backbone).size();
            models.push_back(c.model.backbone.weights());
            sizes.push_back(static_cast<double>(c.ctx.supervised.size()));
        }
        double total = 0.0;
        for (double s : sizes) total += s;
        if (total > 0.0) global_.weights() = fedavg_aggregate(models, sizes);
    }

    void evaluate(RoundMetrics& m) const {
        for (const auto& c : clients_) {
            const Backbone& model = cfg_.method == Method::FedAvg ? global_ : c.model.backbone;
            const Matrix logits = model.forward(c.ctx.op).logits;
            const Graph& g = *c.ctx.graph;
            for (Split s : {Split::Train, Split::Val, Split::Test}) {
                std::vector<std::size_t> nodes;
                for (std::size_t v = 0; v < g.num_nodes(); ++v)
                    if (g.splits()[v] == s) nodes.push_back(v);
                ClientMetrics row{c.id, s, 0.0, 0.0, nodes.size()};
                if (!nodes.empty()) {
                    row.loss = cross_entropy(logits, g.labels(), nodes);
                    const auto pred = row_argmax(logits);
                    std::size_t correct = 0;
                    for (std::size_t v : nodes) correct += pred[v] == g.labels()[v] ? 1 : 0;
                    row.accuracy = static_cast<double>(correct) / static_cast<double>(nodes.size());
                }
                m.clients.push_back(row);
            }
        }
        m.global_test_accuracy = global_accuracy(m.clients, Split::Test);
    }

    FederationConfig cfg_;
    std::unique_ptr<Partition> partition_;
    std::size_t num_classes_ = 0;
    std::size_t max_hop_ = 0;
    std::size_t round_ = 0;
    std::vector<ClientState> clients_;
    std::vector<ClientUpload> uploads_;
    GpgState gpg_;
    Backbone global_;
};

struct ExperimentResult {
    std::vector<RoundMetrics> rounds;
    double final_accuracy = 0.0;
    double best_accuracy = 0.0;
    std::size_t best_round = 0;
    std::uint64_t total_bytes_up = 0;
    std::uint64_t total_bytes_down = 0;
    double wall_seconds = 0.0;
};

inline std::string metrics_csv(std::span<const RoundMetrics> rounds) {
    std::string out = "round,client_id,split,accuracy,loss,support\n";
    for (const auto& r : rounds) {
        for (const auto& c : r.clients) {
            out += std::to_string(r.round) + "," + std::to_string(c.client_id) + "," + std::string(split_name(c.split)) +
                   "," + detail::format_double(c.accuracy) + "," + detail::format_double(c.loss) + "," +
                   std::to_string(c.support) + "\n";
        }
    }
    return out;
}

inline std::string ledger_csv(std::span<const RoundMetrics> rounds) {
    std::string out = "round,client_id,bytes_up,bytes_down\n";
    for (const auto& r : rounds) {
        for (const auto& e : r.ledger) {
            out += std::to_string(r.round) + "," + std::to_string(e.client_id) + "," + std::to_string(e.bytes_up) + "," +
                   std::to_string(e.bytes_down) + "\n";
        }
    }
    return out;
}

inline OrderedJson summary_json(const ExperimentResult& r, const FederationConfig& cfg) {
    OrderedJson j;
    j["method"] = std::string(detail::enum_name(cfg.method));
    j["rounds"] = r.rounds.size();
    j["final_global_accuracy"] = r.final_accuracy;
    j["best_global_accuracy"] = r.best_accuracy;
    j["best_round"] = r.best_round;
    OrderedJson curve = OrderedJson::array();
    for (const auto& m : r.rounds) curve.push_back(m.global_test_accuracy);
    j["global_accuracy_by_round"] = curve;
    j["total_bytes_up"] = r.total_bytes_up;
    j["total_bytes_down"] = r.total_bytes_down;
    j["total_bytes"] = r.total_bytes_up + r.total_bytes_down;
    j["wall_clock_seconds"] = r.wall_seconds;
    j["config"] = to_json(cfg);
    return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

/// Partitions, trains for cfg.rounds rounds and, when `out_dir` is non-empty,
/// writes metrics.csv, ledger.csv and summary.json there.
inline ExperimentResult run_experiment(const FederationConfig& cfg, const Graph& graph,
                                       const std::filesystem::path& out_dir = {}) {
    validate(cfg);
    const auto start = std::chrono::steady_clock::now();
    if (!out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (ec) throw Error(ErrorCode::Io, "cannot create " + out_dir.string() + ": " + ec.message());
    }
    Federation fed(cfg, prepare_graph(graph, cfg));
    ExperimentResult r;
    for (std::size_t t = 0; t < cfg.rounds; ++t) {
        r.rounds.push_back(fed.run_round());
        const auto& m = r.rounds.back();
        r.total_bytes_up += m.server_received;
        r.total_bytes_down += m.server_sent;
        if (r.best_round == 0 || m.global_test_accuracy > r.best_accuracy) {
            r.best_accuracy = m.global_test_accuracy;
            r.best_round = m.round;
        }
    }
    r.final_accuracy = r.rounds.back().global_test_accuracy;
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!out_dir.empty()) {
        write_text(out_dir / "metrics.csv", metrics_csv(r.rounds));
        write_text(out_dir / "ledger.csv", ledger_csv(r.rounds));
        write_text(out_dir / "summary.json", dump_json_exact(summary_json(r, cfg)));
    }
    return r;
}

inline ExperimentResult run_experiment(const FederationConfig& cfg, const std::filesystem::path& graph_dir,
                                       const std::filesystem::path& out_dir) {
    validate(cfg);
    return run_experiment(cfg, load_graph(graph_dir), out_dir);
}

}  // namespace fedpg
