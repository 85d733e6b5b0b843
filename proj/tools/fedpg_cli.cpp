// fedpg command-line front end: dataset generation, partition preview,
// experiment runs and reports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedpg/fedpg.hpp"

namespace fs = std::filesystem;

namespace {

int exit_code(fedpg::ErrorCode code) {
    switch (code) {
        case fedpg::ErrorCode::ConfigNotFound:
        case fedpg::ErrorCode::ConfigRange:
        case fedpg::ErrorCode::ConfigInvalid: return 2;
        case fedpg::ErrorCode::DataFormat:
        case fedpg::ErrorCode::Io: return 3;
        case fedpg::ErrorCode::Diverged:
        case fedpg::ErrorCode::DegeneratePrototype: return 4;
        case fedpg::ErrorCode::InvalidArgument: return 5;
    }
    return 1;
}

struct GenOptions {
    std::string kind = "homophily";
    std::string out;
    std::uint64_t seed = 1;
    std::size_t nodes = 2000;
    std::size_t classes = 5;
    std::size_t features = 500;
    std::size_t communities = 10;
    double avg_degree = 8.0;
    double homophily = 0.7;
    double locality = 0.9;
    double concentration = 1.0;
    double p_in = 0.05;
    double p_out = 0.005;
    double signal = 1.0;
    double noise = 1.0;
    double community_shift = 0.0;
};

int gen_data(const GenOptions& o) {
    fedpg::FeatureModel fm{o.features, o.signal, o.noise, o.community_shift};
    fedpg::Graph g = [&] {
        if (o.kind == "sbm") {
            fedpg::SbmParams p;
            p.num_nodes = o.nodes;
            p.num_blocks = o.classes;
            p.p_in = o.p_in;
            p.p_out = o.p_out;
            p.features = fm;
            return fedpg::generate_sbm(p, o.seed);
        }
        if (o.kind != "homophily") throw fedpg::Error(fedpg::ErrorCode::InvalidArgument, "unknown kind " + o.kind);
        fedpg::HomophilyParams p;
        p.num_nodes = o.nodes;
        p.num_classes = o.classes;
        p.num_communities = o.communities;
        p.avg_degree = o.avg_degree;
        p.homophily = o.homophily;
        p.locality = o.locality;
        p.label_concentration = o.concentration;
        p.features = fm;
        return fedpg::generate_homophily(p, o.seed);
    }();
    fedpg::save_graph(g, o.out);
    std::printf("wrote %s: %zu nodes, %zu edges, %zu classes, edge homophily %.4f\n", o.out.c_str(), g.num_nodes(),
                g.num_edges(), g.num_classes(), fedpg::edge_homophily(g));
    return 0;
}

struct RunOptions {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
    std::string data;
    std::optional<std::uint64_t> seed;
};

fedpg::FederationConfig resolve(const RunOptions& o) {
    auto overrides = o.overrides;
    if (!o.data.empty()) overrides.push_back("data_dir=\"" + o.data + "\"");
    fedpg::FederationConfig cfg = fedpg::resolve_config(o.config, overrides, o.seed);
    if (cfg.data_dir.empty()) throw fedpg::Error(fedpg::ErrorCode::ConfigInvalid, "data_dir is not set (use --data)");
    return cfg;
}

int partition(const RunOptions& o) {
    const fedpg::FederationConfig cfg = resolve(o);
    const fedpg::Graph g = fedpg::prepare_graph(fedpg::load_graph(cfg.data_dir), cfg);
    const fedpg::Partition p = fedpg::partition_graph(g, cfg.partition, cfg.num_clients, cfg.seed_partition);
    std::printf("%-8s %8s %8s %8s %8s\n", "client", "nodes", "edges", "train", "classes");
    std::size_t kept_edges = 0;
    for (std::size_t i = 0; i < p.clients.size(); ++i) {
        const auto& sub = p.clients[i].graph;
        std::vector<bool> present(sub.num_classes(), false);
        for (int y : sub.labels()) present[static_cast<std::size_t>(y)] = true;
        kept_edges += sub.num_edges();
        std::printf("%-8zu %8zu %8zu %8zu %8zu\n", i, sub.num_nodes(), sub.num_edges(),
                    sub.count_split(fedpg::Split::Train),
                    static_cast<std::size_t>(std::count(present.begin(), present.end(), true)));
    }
    std::printf("modularity %.4f, edges kept %zu of %zu\n", fedpg::modularity(g, p.assignment), kept_edges,
                g.num_edges());
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        std::string text = "node,client\n";
        for (std::size_t v = 0; v < p.assignment.size(); ++v)
            text += std::to_string(v) + "," + std::to_string(p.assignment[v]) + "\n";
        fedpg::write_text(fs::path(o.out) / "assignment.csv", text);
    }
    return 0;
}

int run(const RunOptions& o) {
    const fedpg::FederationConfig cfg = resolve(o);
    std::cout << fedpg::dump_json_exact(fedpg::to_json(cfg));
    if (o.out.empty()) throw fedpg::Error(fedpg::ErrorCode::ConfigInvalid, "--out is required");
    const auto result = fedpg::run_experiment(cfg, cfg.data_dir, o.out);
    std::printf("final %.4f best %.4f (round %zu) bytes up %llu down %llu, %.1fs\n", result.final_accuracy,
                result.best_accuracy, result.best_round, static_cast<unsigned long long>(result.total_bytes_up),
                static_cast<unsigned long long>(result.total_bytes_down), result.wall_seconds);
    return 0;
}

int report(const std::vector<std::string>& dirs, const std::string& out) {
    std::vector<fedpg::RunReport> runs;
    for (const auto& d : dirs) runs.push_back(fedpg::read_run(d));
    const auto methods = fedpg::summarize_methods(runs);
    std::cout << fedpg::report_table(runs, methods);
    const fs::path dest = out.empty() ? fs::path(".") : fs::path(out);
    fs::create_directories(dest);
    fedpg::write_text(dest / "curves.csv", fedpg::curves_csv(methods));
    return 0;
}

void add_run_flags(CLI::App* cmd, RunOptions& o) {
    cmd->add_option("--config", o.config, "Config file (key = value per line)");
    cmd->add_option("--set", o.overrides, "Override KEY=VALUE (repeatable)")->take_all();
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--data", o.data, "Dataset directory (sets data_dir)");
    cmd->add_option("--seed", o.seed, "Derive every seed from this value");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedpg: prototype-guided federated graph learning simulator"};
    app.require_subcommand(1);

    GenOptions gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen_cmd->add_option("--kind", gen.kind, "sbm or homophily")->check(CLI::IsMember({"sbm", "homophily"}));
    gen_cmd->add_option("--out", gen.out, "Output dataset directory")->required();
    gen_cmd->add_option("--seed", gen.seed);
    gen_cmd->add_option("--nodes", gen.nodes);
    gen_cmd->add_option("--classes", gen.classes, "Classes (blocks for sbm)");
    gen_cmd->add_option("--features", gen.features);
    gen_cmd->add_option("--communities", gen.communities);
    gen_cmd->add_option("--avg-degree", gen.avg_degree);
    gen_cmd->add_option("--homophily", gen.homophily);
    gen_cmd->add_option("--locality", gen.locality);
    gen_cmd->add_option("--concentration", gen.concentration, "Dirichlet concentration of community label mixes");
    gen_cmd->add_option("--p-in", gen.p_in);
    gen_cmd->add_option("--p-out", gen.p_out);
    gen_cmd->add_option("--signal", gen.signal);
    gen_cmd->add_option("--noise", gen.noise);
    gen_cmd->add_option("--community-shift", gen.community_shift);

    RunOptions part_opts, run_opts;
    auto* part_cmd = app.add_subcommand("partition", "Preview the client partition of a dataset");
    add_run_flags(part_cmd, part_opts);
    auto* run_cmd = app.add_subcommand("run", "Run one federated experiment");
    add_run_flags(run_cmd, run_opts);

    std::vector<std::string> report_dirs;
    std::string report_out;
    auto* report_cmd = app.add_subcommand("report", "Summarize run directories and write curves.csv");
    report_cmd->add_option("runs", report_dirs, "Run directories")->required();
    report_cmd->add_option("--out", report_out, "Where to write curves.csv");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen_cmd) return gen_data(gen);
        if (*part_cmd) return partition(part_opts);
        if (*run_cmd) return run(run_opts);
        if (*report_cmd) return report(report_dirs, report_out);
    } catch (const fedpg::Error& e) {
        std::fprintf(stderr, "error[%s]: %s\n", std::string(fedpg::code_name(e.code())).c_str(), e.what());
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error[INTERNAL]: %s\n", e.what());
        return 1;
    }
    return 0;
}
