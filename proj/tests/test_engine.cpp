#include <set>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace fedpg;
using testing_support::random_matrix;

namespace {

Graph small_graph(std::uint64_t seed = 3, std::size_t nodes = 240, std::size_t features = 16) {
    HomophilyParams prm;
    prm.num_nodes = nodes;
    prm.num_classes = 3;
    prm.num_communities = 4;
    prm.features.num_features = features;
    prm.features.signal = 1.5;
    prm.splits = {0.3, 0.2};
    return generate_homophily(prm, seed);
}

FederationConfig small_config(Method method = Method::FedPG) {
    FederationConfig cfg;
    cfg.method = method;
    cfg.num_clients = 4;
    cfg.rounds = 3;
    cfg.local_epochs = 2;
    cfg.server_epochs = 5;
    cfg.proto_dim = 8;
    cfg.hidden_dim = 12;
    cfg.scorer_hidden = 4;
    cfg.lr_client = 0.05;
    return cfg;
}

bool same_weights(const Backbone& a, const Backbone& b) {
    auto ta = a.weights().tensors();
    auto tb = b.weights().tensors();
    for (std::size_t i = 0; i < ta.size(); ++i)
        if (*ta[i] != *tb[i]) return false;
    return true;
}

bool same_sets(const PrototypeSet& a, const PrototypeSet& b) {
    if (a.size() != b.size()) return false;
    for (const auto& p : a) {
        const Prototype* q = b.find(p.class_id, p.hop);
        if (!q || q->support != p.support || q->vector != p.vector) return false;
    }
    return true;
}

}  // namespace

TEST(Ledger, PrototypeBytesFollowWireFormat) {
    FederationConfig cfg = small_config();
    cfg.num_clients = 2;
    const Graph g = small_graph();
    Federation fed(cfg, g);
    for (int t = 0; t < 3; ++t) {
        const RoundMetrics m = fed.run_round();
        std::uint64_t up = 0;
        for (const auto& u : fed.last_uploads()) {
            EXPECT_EQ(m.ledger[u.client_id].bytes_up, u.prototypes.size() * (8 + 8 * cfg.proto_dim));
            EXPECT_EQ(m.ledger[u.client_id].bytes_up, encode_prototypes(u.prototypes).size());
            EXPECT_EQ(m.ledger[u.client_id].bytes_down, encode_prototypes(fed.clients()[u.client_id].received).size());
            up += m.ledger[u.client_id].bytes_up;
        }
        EXPECT_EQ(m.server_received, up);
    }
}

TEST(Ledger, ConservationUnderPartialParticipation) {
    for (Method method : {Method::FedPG, Method::FedAvg, Method::FedProtoNaive}) {
        FederationConfig cfg = small_config(method);
        cfg.num_clients = 5;
        cfg.participation_ratio = 0.6;
        Federation fed(cfg, small_graph());
        for (int t = 0; t < 4; ++t) {
            const RoundMetrics m = fed.run_round();
            std::uint64_t up = 0, down = 0;
            const std::set<std::size_t> active(m.participants.begin(), m.participants.end());
            for (const auto& e : m.ledger) {
                up += e.bytes_up;
                down += e.bytes_down;
                if (!active.count(e.client_id)) {
                    EXPECT_EQ(e.bytes_up, 0u);
                    EXPECT_EQ(e.bytes_down, 0u);
                }
            }
            EXPECT_EQ(up, m.server_received);
            EXPECT_EQ(down, m.server_sent);
        }
    }
}

TEST(Sampling, WithoutReplacementAndCeilCount) {
    FederationConfig cfg = small_config();
    cfg.num_clients = 7;
    for (double ratio : {0.1, 0.3, 0.5, 0.99, 1.0}) {
        cfg.participation_ratio = ratio;
        Federation fed(cfg, small_graph());
        for (std::size_t t = 1; t <= 20; ++t) {
            const auto p = fed.sample_participants(t);
            EXPECT_EQ(p.size(), static_cast<std::size_t>(std::ceil(ratio * 7.0 - 1e-9)));
            EXPECT_EQ(std::set<std::size_t>(p.begin(), p.end()).size(), p.size());
            for (std::size_t id : p) EXPECT_LT(id, 7u);
        }
    }
}

TEST(Sampling, FullParticipationEvaluatesEveryone) {
    FederationConfig cfg = small_config();
    Federation fed(cfg, small_graph());
    for (int t = 0; t < 2; ++t) {
        const RoundMetrics m = fed.run_round();
        EXPECT_EQ(m.participants.size(), cfg.num_clients);
        std::set<std::size_t> seen;
        for (const auto& row : m.clients) {
            seen.insert(row.client_id);
            EXPECT_GE(row.accuracy, 0.0);
            EXPECT_LE(row.accuracy, 1.0);
        }
        EXPECT_EQ(seen.size(), cfg.num_clients);
    }
}

TEST(Sampling, IdleClientsKeepTheirWeights) {
    for (Method method : {Method::FedPG, Method::FedAvg, Method::FedProtoNaive}) {
        FederationConfig cfg = small_config(method);
        cfg.num_clients = 5;
        cfg.participation_ratio = 0.4;
        Federation fed(cfg, small_graph());
        for (int t = 0; t < 4; ++t) {
            std::vector<Backbone> before;
            std::vector<PrototypeSet> received;
            for (const auto& c : fed.clients()) {
                before.push_back(c.model.backbone);
                received.push_back(c.received);
            }
            const RoundMetrics m = fed.run_round();
            const std::set<std::size_t> active(m.participants.begin(), m.participants.end());
            for (const auto& c : fed.clients()) {
                if (active.count(c.id)) continue;
                EXPECT_TRUE(same_weights(c.model.backbone, before[c.id]));
                EXPECT_TRUE(same_sets(c.received, received[c.id]));
            }
        }
    }
}

TEST(Reduction, DegenerateFedPgUploadsEqualNaive) {
    FederationConfig naive = small_config(Method::FedProtoNaive);
    naive.rounds = 4;
    FederationConfig pg = naive;
    pg.method = Method::FedPG;
    pg.max_hop = 0;
    pg.alpha = 1.0;
    pg.server_epochs = 0;
    pg.uniform_attention = true;
    pg.gpg_bypass = true;
    const Graph g = small_graph();
    Federation a(naive, g), b(pg, g);
    for (int t = 0; t < 4; ++t) {
        const RoundMetrics ma = a.run_round();
        const RoundMetrics mb = b.run_round();
        ASSERT_EQ(a.last_uploads().size(), b.last_uploads().size());
        for (std::size_t i = 0; i < a.last_uploads().size(); ++i) {
            EXPECT_EQ(encode_prototypes(a.last_uploads()[i].prototypes),
                      encode_prototypes(b.last_uploads()[i].prototypes))
                << "round " << t + 1 << " client " << i;
        }
        EXPECT_EQ(metrics_csv(std::vector{ma}), metrics_csv(std::vector{mb}));
    }
}

TEST(Reduction, SingleClientSelfFusion) {
    FederationConfig cfg = small_config();
    cfg.num_clients = 1;
    cfg.alpha = 0.0;
    Federation fed(cfg, small_graph());
    for (int t = 0; t < 2; ++t) {
        fed.run_round();
        EXPECT_TRUE(same_sets(fed.clients()[0].received, fed.last_uploads()[0].prototypes));
    }
}

TEST(Reduction, NaiveSingleClientBroadcastsOwnPrototypes) {
    FederationConfig cfg = small_config(Method::FedProtoNaive);
    cfg.num_clients = 1;
    Federation fed(cfg, small_graph());
    fed.run_round();
    EXPECT_TRUE(same_sets(fed.clients()[0].received, fed.last_uploads()[0].prototypes));
}

TEST(Reduction, NaiveRoundComposesClientAndServerOracles) {
    FederationConfig cfg = small_config(Method::FedProtoNaive);
    Federation fed(cfg, small_graph());
    fed.run_round();
    fed.run_round();
    for (const auto& c : fed.clients()) {
        const Activations act = c.model.backbone.forward(c.ctx.op);
        const auto labels =
            pseudo_annotate(row_softmax(act.logits), c.ctx.graph->labels(), c.supervised_mask, cfg.confidence_threshold);
        const auto& upload = fed.last_uploads()[c.id];
        EXPECT_TRUE(same_sets(upload.prototypes, naive_local_prototypes(act.projected, labels, 3)));
    }
    const auto global = naive_global_aggregate(fed.last_uploads());
    for (const auto& c : fed.clients()) EXPECT_TRUE(same_sets(c.received, global));
}

TEST(Engine, HopRangeFollowsSmallestReceptiveField) {
    FederationConfig cfg = small_config();
    cfg.num_clients = 3;
    cfg.backbone = BackboneChoice::Mixed;
    EXPECT_EQ(Federation(cfg, small_graph()).max_hop(), 2u);
    cfg.backbone = BackboneChoice::PropagatedLinear;
    cfg.layers = 3;
    EXPECT_EQ(Federation(cfg, small_graph()).max_hop(), 3u);
    cfg.max_hop = 1;
    EXPECT_EQ(Federation(cfg, small_graph()).max_hop(), 1u);
    cfg.method = Method::FedProtoNaive;
    EXPECT_EQ(Federation(cfg, small_graph()).max_hop(), 0u);
}

TEST(Engine, MixedBackbonesRoundRobin) {
    FederationConfig cfg = small_config();
    cfg.num_clients = 6;
    cfg.backbone = BackboneChoice::Mixed;
    Federation fed(cfg, small_graph());
    for (const auto& c : fed.clients()) {
        const auto& s = c.model.backbone.spec();
        if (c.id % 3 == 2) {
            EXPECT_EQ(s.kind, BackboneKind::MessagePassing2Layer);
        } else {
            EXPECT_EQ(s.kind, BackboneKind::PropagatedLinear);
            EXPECT_EQ(s.layers, c.id % 3 == 1 ? 3u : 2u);
        }
    }
    fed.run_round();
    for (const auto& u : fed.last_uploads())
        for (const auto& p : u.prototypes) EXPECT_LE(p.hop, 2);
}

TEST(Engine, UploadsRespectGridAndSupport) {
    FederationConfig cfg = small_config();
    cfg.noise_dim_fraction = 0.2;
    Federation fed(cfg, small_graph());
    for (int t = 0; t < 2; ++t) {
        fed.run_round();
        for (const auto& u : fed.last_uploads()) {
            EXPECT_LE(u.prototypes.size(), 3 * (fed.max_hop() + 1));
            for (const auto& p : u.prototypes) {
                EXPECT_GE(p.support, 1u);
                EXPECT_TRUE(p.vector.allFinite());
            }
        }
    }
}

TEST(Engine, GlobalAccuracyIsSupportWeighted) {
    FederationConfig cfg = small_config();
    const auto r = run_experiment(cfg, small_graph());
    for (const auto& m : r.rounds) {
        double num = 0.0, den = 0.0;
        for (const auto& row : m.clients) {
            if (row.split != Split::Test) continue;
            num += row.accuracy * static_cast<double>(row.support);
            den += static_cast<double>(row.support);
        }
        EXPECT_NEAR(m.global_test_accuracy, num / den, 1e-15);
    }
}

TEST(FedAvg, AggregateOracles) {
    Rng rng = make_rng(1, 0);
    auto random_weights = [&] {
        BackboneWeights w;
        w.w_embed = random_matrix(5, 4, rng);
        w.b_embed = random_matrix(1, 4, rng);
        w.w_out = random_matrix(4, 3, rng);
        w.b_out = random_matrix(1, 3, rng);
        w.w_proj = random_matrix(4, 2, rng);
        return w;
    };
    const BackboneWeights one = random_weights();
    const auto single = fedavg_aggregate(std::vector{one}, std::vector{7.0});
    for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(*single.tensors()[t], *one.tensors()[t]);

    BackboneWeights neg = one;
    for (auto* t : neg.tensors()) *t = -*t;
    const auto cancel = fedavg_aggregate(std::vector{one, neg}, std::vector{2.0, 2.0});
    for (std::size_t t = 0; t < 4; ++t) EXPECT_TRUE(cancel.tensors()[t]->isZero(0.0));

    for (int trial = 0; trial < 20; ++trial) {
        std::vector<BackboneWeights> models;
        std::vector<double> sizes;
        for (int i = 0; i < 5; ++i) {
            models.push_back(random_weights());
            sizes.push_back(1.0 + static_cast<double>(uniform_index(rng, 50)));
        }
        const auto agg = fedavg_aggregate(models, sizes);
        double total = 0.0;
        for (double s : sizes) total += s;
        for (std::size_t t = 0; t < 4; ++t) {
            Matrix sum = Matrix::Zero(models[0].tensors()[t]->rows(), models[0].tensors()[t]->cols());
            for (int i = 0; i < 5; ++i) sum += sizes[static_cast<std::size_t>(i)] * *models[static_cast<std::size_t>(i)].tensors()[t];
            EXPECT_LT((*agg.tensors()[t] - sum / total).cwiseAbs().maxCoeff(), 1e-12);
        }
    }
}

TEST(FedAvg, MismatchedInputsRejected) {
    EXPECT_THROW(fedavg_aggregate(std::vector<BackboneWeights>{}, std::vector<double>{}), Error);
    FederationConfig cfg = small_config(Method::FedAvg);
    cfg.backbone = BackboneChoice::Mixed;
    EXPECT_THROW(Federation(cfg, small_graph()), Error);
}

TEST(FedAvg, SingleClientRoundReturnsItsWeights) {
    FederationConfig cfg = small_config(Method::FedAvg);
    cfg.num_clients = 1;
    Federation fed(cfg, small_graph());
    fed.run_round();
    EXPECT_TRUE(same_weights(fed.global_model(), fed.clients()[0].model.backbone));
}

TEST(FedAvg, LedgerCountsSerializedWeights) {
    FederationConfig cfg = small_config(Method::FedAvg);
    Federation fed(cfg, small_graph());
    const RoundMetrics m = fed.run_round();
    const auto blob = serialize_model(fed.global_model()).size();
    for (const auto& e : m.ledger) {
        EXPECT_EQ(e.bytes_up, blob);
        EXPECT_EQ(e.bytes_down, blob);
    }
}

TEST(FedAvg, CommunicationFarAbovePrototypes) {
    // Default dims: 500 features, p = 64, hidden 64.
    HomophilyParams prm;
    prm.num_nodes = 400;
    prm.num_classes = 5;
    prm.features.num_features = 500;
    const Graph g = generate_homophily(prm, 2);
    FederationConfig cfg;
    cfg.num_clients = 4;
    cfg.rounds = 2;
    cfg.local_epochs = 1;
    cfg.server_epochs = 1;
    const auto pg = run_experiment(cfg, g);
    cfg.method = Method::FedAvg;
    const auto avg = run_experiment(cfg, g);
    const double up_ratio = static_cast<double>(avg.total_bytes_up) / static_cast<double>(pg.total_bytes_up);
    EXPECT_GE(up_ratio, 10.0);
}

TEST(Determinism, RepeatRunsAreByteIdentical) {
    FederationConfig cfg = small_config();
    cfg.participation_ratio = 0.5;
    cfg.noise_dim_fraction = 0.1;
    const Graph g = small_graph();
    const auto a = run_experiment(cfg, g), b = run_experiment(cfg, g);
    EXPECT_EQ(metrics_csv(a.rounds), metrics_csv(b.rounds));
    EXPECT_EQ(ledger_csv(a.rounds), ledger_csv(b.rounds));
}

TEST(Determinism, PrefixRoundsAgree) {
    for (Method method : {Method::FedPG, Method::FedAvg, Method::FedProtoNaive}) {
        FederationConfig cfg = small_config(method);
        cfg.rounds = 1;
        const auto one = run_experiment(cfg, small_graph());
        cfg.rounds = 2;
        const auto two = run_experiment(cfg, small_graph());
        EXPECT_EQ(metrics_csv(std::span(one.rounds)), metrics_csv(std::span(two.rounds).first(1)));
        EXPECT_EQ(ledger_csv(std::span(one.rounds)), ledger_csv(std::span(two.rounds).first(1)));
    }
}

TEST(Experiment, WritesThreeArtifacts) {
    FederationConfig cfg = small_config();
    const auto dir = testing_support::scratch_dir("engine_artifacts");
    const auto r = run_experiment(cfg, small_graph(), dir);
    for (const char* name : {"metrics.csv", "ledger.csv", "summary.json"})
        EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
    const auto summary = nlohmann::json::parse(testing_support::read_file(dir / "summary.json"));
    EXPECT_EQ(summary["method"], "fedpg");
    EXPECT_EQ(summary["final_global_accuracy"].get<double>(), r.final_accuracy);
    EXPECT_EQ(summary["total_bytes_up"].get<std::uint64_t>(), r.total_bytes_up);
    EXPECT_EQ(summary["config"]["num_clients"], 4);
    EXPECT_EQ(testing_support::read_file(dir / "metrics.csv"), metrics_csv(r.rounds));
}

TEST(Experiment, ErrorsCarryRoundAndClient) {
    FederationConfig cfg = small_config();
    cfg.lr_client = 1e200;
    try {
        run_experiment(cfg, small_graph());
        FAIL() << "expected divergence";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Diverged);
        EXPECT_NE(std::string(e.what()).find("round 1 client"), std::string::npos) << e.what();
    }
}
