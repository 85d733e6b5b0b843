#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace fedpg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Rng = std::mt19937_64;

/// Stable error codes. The CLI prints these verbatim.
enum class ErrorCode {
    ConfigNotFound,
    ConfigRange,
    ConfigInvalid,
    DataFormat,
    Diverged,
    DegeneratePrototype,
    InvalidArgument,
    Io,
};

inline std::string_view code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::ConfigNotFound: return "CONFIG_NOT_FOUND";
        case ErrorCode::ConfigRange: return "CONFIG_RANGE";
        case ErrorCode::ConfigInvalid: return "CONFIG_INVALID";
        case ErrorCode::DataFormat: return "DATA_FORMAT";
        case ErrorCode::Diverged: return "DIVERGED";
        case ErrorCode::DegeneratePrototype: return "DEGENERATE_PROTOTYPE";
        case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
        case ErrorCode::Io: return "IO";
    }
    return "UNKNOWN";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// splitmix64 finalizer; used to derive independent per-client / per-round
/// streams from the user-facing seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    return Rng(mix_seed(seed, stream));
}

inline double uniform01(Rng& rng) {
    // 53 random bits; avoids implementation-defined distribution objects
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t uniform_index(Rng& rng, std::size_t bound) {
    return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(bound));
}

/// Box-Muller standard normal draw.
inline double standard_normal(Rng& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Fisher-Yates with our own uniform_index so shuffles are identical across
/// standard library implementations.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::swap(items[i - 1], items[uniform_index(rng, i)]);
    }
}

/// Uniform sample of `k` distinct indices in [0, n), returned sorted.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    k = std::min(k, n);
    for (std::size_t i = 0; i < k; ++i) {
        std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace fedpg
