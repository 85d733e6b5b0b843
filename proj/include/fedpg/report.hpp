#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedpg/common.hpp"
#include "fedpg/graph.hpp"

namespace fedpg {

/// Everything the report needs from one run directory. All numbers are
/// folded from metrics.csv and ledger.csv; summary.json only supplies the
/// method name.
struct RunReport {
    std::string dir;
    std::string method;
    std::vector<double> curve;  // global test accuracy per round, round 1 first
    double final_accuracy = 0.0;
    double best_accuracy = 0.0;
    std::size_t best_round = 0;
    std::uint64_t bytes_up = 0;
    std::uint64_t bytes_down = 0;
};

namespace detail {

struct CsvRow {
    std::size_t line = 0;
    std::vector<std::string> cells;
};

template <typename T>
T csv_cell(const CsvRow& row, std::size_t col, const std::filesystem::path& path) {
    T value{};
    if (!parse_number(row.cells[col], value)) format_error(path, row.line, "bad number '" + row.cells[col] + "'");
    return value;
}

inline std::vector<CsvRow> read_csv(const std::filesystem::path& path, std::string_view header) {
    std::ifstream in = open_input(path);
    std::string line;
    if (!std::getline(in, line) || trim(line) != header) {
        format_error(path, 1, "expected header '" + std::string(header) + "'");
    }
    std::vector<CsvRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss{std::string(trim(line))};
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != static_cast<std::size_t>(std::count(header.begin(), header.end(), ',') + 1)) {
            format_error(path, lineno, "wrong number of columns");
        }
        rows.push_back({lineno, std::move(cells)});
    }
    return rows;
}

}  // namespace detail

inline RunReport read_run(const std::filesystem::path& dir) {
    RunReport r;
    r.dir = dir.string();
    {
        std::ifstream in = detail::open_input(dir / "summary.json");
        const auto summary = nlohmann::json::parse(in, nullptr, false);
        if (summary.is_discarded() || !summary.contains("method")) {
            throw Error(ErrorCode::DataFormat, (dir / "summary.json").string() + ": missing method");
        }
        r.method = summary["method"].get<std::string>();
    }
    // Fold test rows in file order, which is client order within a round.
    std::map<std::size_t, std::pair<double, double>> per_round;
    const auto metrics_path = dir / "metrics.csv";
    for (const auto& row : detail::read_csv(metrics_path, "round,client_id,split,accuracy,loss,support")) {
        if (row.cells[2] != "test") continue;
        const auto round = detail::csv_cell<std::size_t>(row, 0, metrics_path);
        const double acc = detail::csv_cell<double>(row, 3, metrics_path);
        const auto support = static_cast<double>(detail::csv_cell<std::size_t>(row, 5, metrics_path));
        auto& [num, den] = per_round[round];
        num += acc * support;
        den += support;
    }
    for (const auto& [round, acc] : per_round) {
        const double value = acc.second > 0.0 ? acc.first / acc.second : 0.0;
        r.curve.push_back(value);
        if (r.best_round == 0 || value > r.best_accuracy) {
            r.best_accuracy = value;
            r.best_round = round;
        }
    }
    if (!r.curve.empty()) r.final_accuracy = r.curve.back();
    const auto ledger_path = dir / "ledger.csv";
    for (const auto& row : detail::read_csv(ledger_path, "round,client_id,bytes_up,bytes_down")) {
        r.bytes_up += detail::csv_cell<std::uint64_t>(row, 2, ledger_path);
        r.bytes_down += detail::csv_cell<std::uint64_t>(row, 3, ledger_path);
    }
    return r;
}

struct MethodSummary {
    std::string method;
    std::size_t runs = 0;
    double final_accuracy = 0.0;  // mean over runs
    double best_accuracy = 0.0;
    double total_bytes = 0.0;
    std::vector<double> curve;  // mean over runs that reached each round
};

inline std::vector<MethodSummary> summarize_methods(const std::vector<RunReport>& runs) {
    std::map<std::string, MethodSummary> by_method;
    std::map<std::string, std::vector<std::size_t>> counts;
    for (const auto& r : runs) {
        auto& m = by_method[r.method];
        auto& cnt = counts[r.method];
        m.method = r.method;
        ++m.runs;
        m.final_accuracy += r.final_accuracy;
        m.best_accuracy += r.best_accuracy;
        m.total_bytes += static_cast<double>(r.bytes_up + r.bytes_down);
        if (m.curve.size() < r.curve.size()) {
            m.curve.resize(r.curve.size(), 0.0);
            cnt.resize(r.curve.size(), 0);
        }
        for (std::size_t i = 0; i < r.curve.size(); ++i) {
            m.curve[i] += r.curve[i];
            ++cnt[i];
        }
    }
    std::vector<MethodSummary> out;
    for (auto& [name, m] : by_method) {
        const auto n = static_cast<double>(m.runs);
        m.final_accuracy /= n;
        m.best_accuracy /= n;
        m.total_bytes /= n;
        for (std::size_t i = 0; i < m.curve.size(); ++i) m.curve[i] /= static_cast<double>(counts[name][i]);
        out.push_back(std::move(m));
    }
    return out;
}

inline std::string curves_csv(const std::vector<MethodSummary>& methods) {
    std::string out = "method,round,accuracy\n";
    for (const auto& m : methods)
        for (std::size_t i = 0; i < m.curve.size(); ++i)
            out += m.method + "," + std::to_string(i + 1) + "," + detail::format_double(m.curve[i]) + "\n";
    return out;
}

inline std::string report_table(const std::vector<RunReport>& runs, const std::vector<MethodSummary>& methods) {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-16s %-40s %10s %10s %6s %14s\n", "method", "run", "final", "best", "round",
                  "bytes");
    os << buf;
    for (const auto& r : runs) {
        std::snprintf(buf, sizeof buf, "%-16s %-40s %10.4f %10.4f %6zu %14llu\n", r.method.c_str(), r.dir.c_str(),
                      r.final_accuracy, r.best_accuracy, r.best_round,
                      static_cast<unsigned long long>(r.bytes_up + r.bytes_down));
        os << buf;
    }
    os << "\n";
    std::snprintf(buf, sizeof buf, "%-16s %6s %10s %10s %16s\n", "method", "runs", "final", "best", "mean bytes");
    os << buf;
    for (const auto& m : methods) {
        std::snprintf(buf, sizeof buf, "%-16s %6zu %10.4f %10.4f %16.0f\n", m.method.c_str(), m.runs,
                      m.final_accuracy, m.best_accuracy, m.total_bytes);
        os << buf;
    }
    return os.str();
}

}  // namespace fedpg
