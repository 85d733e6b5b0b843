#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include "fedpg/fedpg.hpp"

namespace testing_support {

using fedpg::Matrix;
using fedpg::Rng;

/// Erdos-Renyi style graph with random features, labels and splits.
inline fedpg::Graph random_graph(std::size_t n, std::size_t classes, std::size_t features, double edge_prob,
                                 std::uint64_t seed) {
    Rng rng = fedpg::make_rng(seed, 0x7e57);
    fedpg::EdgeList edges;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (fedpg::uniform01(rng) < edge_prob) edges.emplace_back(i, j);
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(features));
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = fedpg::standard_normal(rng);
    std::vector<int> labels(n);
    std::vector<fedpg::Split> splits(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(fedpg::uniform_index(rng, classes));
        const double u = fedpg::uniform01(rng);
        splits[i] = u < 0.5 ? fedpg::Split::Train : (u < 0.75 ? fedpg::Split::Val : fedpg::Split::Test);
    }
    return fedpg::Graph(n, classes, std::move(edges), std::move(x), std::move(labels), std::move(splits));
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * fedpg::standard_normal(rng);
    return m;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-6); }

/// Largest entrywise relative error between an analytic gradient and central
/// differences of `loss` with respect to `param` (perturbed in place).
inline double max_fd_error(Matrix& param, const Matrix& analytic, const std::function<double()>& loss,
                           double step = 1e-5) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < param.size(); ++i) {
        const double saved = param.data()[i];
        param.data()[i] = saved + step;
        const double up = loss();
        param.data()[i] = saved - step;
        const double down = loss();
        param.data()[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        worst = std::max(worst, rel_err(analytic.data()[i], numeric));
    }
    return worst;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("fedpg_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testing_support
