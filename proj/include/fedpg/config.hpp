#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedpg/common.hpp"
#include "fedpg/graph.hpp"
#include "fedpg/partition.hpp"

namespace fedpg {

using OrderedJson = nlohmann::ordered_json;

enum class Method { FedPG, FedAvg, FedProtoNaive };
enum class BackboneChoice { PropagatedLinear, MessagePassing2Layer, Mixed };

struct FederationConfig {
    Method method = Method::FedPG;
    PartitionMethod partition = PartitionMethod::Balanced;
    std::size_t num_clients = 10;
    std::size_t rounds = 30;
    std::size_t local_epochs = 5;
    std::size_t server_epochs = 100;
    double participation_ratio = 1.0;

    double epsilon = 0.5;
    double delta_s = 0.5;
    double alpha = 0.5;
    double lambda = 0.5;
    double mu = 0.5;

    std::size_t proto_dim = 64;
    std::size_t hidden_dim = 64;
    std::size_t scorer_hidden = 16;
    double lr_client = 0.01;
    double lr_server = 0.01;

    double noise_dim_fraction = 0.0;
    double noise_sigma_rel = 0.1;
    double confidence_threshold = 0.8;

    BackboneChoice backbone = BackboneChoice::PropagatedLinear;
    std::size_t layers = 2;
    std::int64_t max_hop = -1;  // -1: smallest receptive field among clients
    bool literal_normalization = false;
    bool uniform_attention = false;
    bool gpg_bypass = false;  // replace the generator with plain weighted averaging

    std::string sparsity_mode = "none";
    double sparsity_keep_ratio = 1.0;
    std::string data_dir;

    std::uint64_t seed_partition = 1;
    std::uint64_t seed_init = 2;
    std::uint64_t seed_sampling = 3;
    std::uint64_t seed_noise = 4;
    std::uint64_t seed_sparsity = 5;

    void set_all_seeds(std::uint64_t seed) {
        seed_partition = mix_seed(seed, 1);
        seed_init = mix_seed(seed, 2);
        seed_sampling = mix_seed(seed, 3);
        seed_noise = mix_seed(seed, 4);
        seed_sparsity = mix_seed(seed, 5);
    }
};

namespace detail {

template <typename E>
struct EnumNames;

template <>
struct EnumNames<Method> {
    static constexpr std::pair<Method, std::string_view> table[] = {
        {Method::FedPG, "fedpg"}, {Method::FedAvg, "fedavg"}, {Method::FedProtoNaive, "fedproto-naive"}};
};
template <>
struct EnumNames<PartitionMethod> {
    static constexpr std::pair<PartitionMethod, std::string_view> table[] = {
        {PartitionMethod::Louvain, "louvain"}, {PartitionMethod::Balanced, "balanced"}};
};
template <>
struct EnumNames<BackboneChoice> {
    static constexpr std::pair<BackboneChoice, std::string_view> table[] = {
        {BackboneChoice::PropagatedLinear, "propagated-linear"},
        {BackboneChoice::MessagePassing2Layer, "message-passing-2layer"},
        {BackboneChoice::Mixed, "mixed"}};
};

template <typename E>
std::string_view enum_name(E value) {
    for (const auto& [v, name] : EnumNames<E>::table)
        if (v == value) return name;
    return "?";
}

template <typename E>
E parse_enum(std::string_view key, std::string_view text) {
    for (const auto& [v, name] : EnumNames<E>::table)
        if (name == text) return v;
    std::string allowed;
    for (const auto& [v, name] : EnumNames<E>::table) allowed += (allowed.empty() ? "" : "|") + std::string(name);
    throw Error(ErrorCode::ConfigRange, std::string(key) + "=" + std::string(text) + " is not one of " + allowed);
}

[[noreturn]] inline void type_error(std::string_view key, std::string_view expected, const OrderedJson& v) {
    throw Error(ErrorCode::ConfigInvalid, std::string(key) + ": expected " + std::string(expected) + ", got " + v.dump());
}

template <typename T>
T convert(std::string_view key, const OrderedJson& v) {
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) type_error(key, "true or false", v);
        return v.get<bool>();
    } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) type_error(key, "a number", v);
        return v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) type_error(key, "a string", v);
        return v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
        if (v.is_number_float()) {
            const double d = v.get<double>();
            if (std::trunc(d) != d) type_error(key, "an integer", v);
        } else if (!v.is_number_integer()) {
            type_error(key, "an integer", v);
        }
        if constexpr (std::is_unsigned_v<T>) {
            if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
                throw Error(ErrorCode::ConfigRange, std::string(key) + "=" + v.dump() + " must be non-negative");
            }
            if (v.is_number_float() && v.get<double>() < 0.0) {
                throw Error(ErrorCode::ConfigRange, std::string(key) + "=" + v.dump() + " must be non-negative");
            }
        }
        return v.is_number_float() ? static_cast<T>(v.get<double>()) : v.get<T>();
    } else {
        if (!v.is_string()) type_error(key, "a string", v);
        return parse_enum<T>(key, v.get<std::string>());
    }
}

template <typename T>
OrderedJson to_value(const T& v) {
    if constexpr (std::is_enum_v<T>) return std::string(enum_name(v));
    else return v;
}

struct Field {
    std::string_view name;
    std::function<void(FederationConfig&, const OrderedJson&)> set;
    std::function<OrderedJson(const FederationConfig&)> get;
};

template <typename T>
Field field(std::string_view name, T FederationConfig::*member) {
    return {name, [name, member](FederationConfig& c, const OrderedJson& v) { c.*member = convert<T>(name, v); },
            [member](const FederationConfig& c) { return to_value(c.*member); }};
}

inline const std::vector<Field>& schema() {
    using C = FederationConfig;
    static const std::vector<Field> fields = {
        field("method", &C::method),
        field("partition", &C::partition),
        field("num_clients", &C::num_clients),
        field("rounds", &C::rounds),
        field("local_epochs", &C::local_epochs),
        field("server_epochs", &C::server_epochs),
        field("participation_ratio", &C::participation_ratio),
        field("epsilon", &C::epsilon),
        field("delta_s", &C::delta_s),
        field("alpha", &C::alpha),
        field("lambda", &C::lambda),
        field("mu", &C::mu),
        field("proto_dim", &C::proto_dim),
        field("hidden_dim", &C::hidden_dim),
        field("scorer_hidden", &C::scorer_hidden),
        field("lr_client", &C::lr_client),
        field("lr_server", &C::lr_server),
        field("noise_dim_fraction", &C::noise_dim_fraction),
        field("noise_sigma_rel", &C::noise_sigma_rel),
        field("confidence_threshold", &C::confidence_threshold),
        field("backbone", &C::backbone),
        field("layers", &C::layers),
        field("max_hop", &C::max_hop),
        field("literal_normalization", &C::literal_normalization),
        field("uniform_attention", &C::uniform_attention),
        field("gpg_bypass", &C::gpg_bypass),
        field("sparsity_mode", &C::sparsity_mode),
        field("sparsity_keep_ratio", &C::sparsity_keep_ratio),
        field("data_dir", &C::data_dir),
        field("seed_partition", &C::seed_partition),
        field("seed_init", &C::seed_init),
        field("seed_sampling", &C::seed_sampling),
        field("seed_noise", &C::seed_noise),
        field("seed_sparsity", &C::seed_sparsity),
    };
    return fields;
}

/// JSON literal if it parses, otherwise the raw text as a string.
inline OrderedJson parse_value(std::string_view text) {
    const std::string s(trim(text));
    if (s.empty()) return std::string();
    auto parsed = OrderedJson::parse(s, nullptr, false);
    if (parsed.is_discarded()) return s;
    return parsed;
}

}  // namespace detail

inline std::vector<std::string_view> config_keys() {
    std::vector<std::string_view> keys;
    for (const auto& f : detail::schema()) keys.push_back(f.name);
    return keys;
}

/// Applies one key to `cfg`. Unknown keys and type mismatches are
/// CONFIG_INVALID; values outside an enumerated domain are CONFIG_RANGE.
inline void set_config_value(FederationConfig& cfg, std::string_view key, const OrderedJson& value) {
    for (const auto& f : detail::schema()) {
        if (f.name == key) {
            f.set(cfg, value);
            return;
        }
    }
    throw Error(ErrorCode::ConfigInvalid, "unknown config key '" + std::string(key) + "'");
}

/// Parses "key=value"; the value is read as JSON when possible.
inline void apply_override(FederationConfig& cfg, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
        throw Error(ErrorCode::ConfigInvalid, "override '" + std::string(assignment) + "' is not KEY=VALUE");
    }
    set_config_value(cfg, detail::trim(assignment.substr(0, eq)), detail::parse_value(assignment.substr(eq + 1)));
}

inline void validate(const FederationConfig& c) {
    auto range = [](std::string_view key, double v, double lo, double hi, bool open_lo = false) {
        if (!(v <= hi && (open_lo ? v > lo : v >= lo))) {
            std::ostringstream os;
            os << key << "=" << v << " outside " << (open_lo ? "(" : "[") << lo << "," << hi << "]";
            throw Error(ErrorCode::ConfigRange, os.str());
        }
    };
    auto at_least = [](std::string_view key, double v, double lo) {
        if (!(v >= lo)) {
            std::ostringstream os;
            os << key << "=" << v << " must be >= " << lo;
            throw Error(ErrorCode::ConfigRange, os.str());
        }
    };
    range("participation_ratio", c.participation_ratio, 0.0, 1.0, true);
    range("epsilon", c.epsilon, 0.0, 1.0);
    range("delta_s", c.delta_s, 0.0, 1.0);
    range("alpha", c.alpha, 0.0, 1.0);
    range("lambda", c.lambda, 0.0, 1.0);
    range("mu", c.mu, 0.0, 1.0);
    range("noise_dim_fraction", c.noise_dim_fraction, 0.0, 1.0);
    range("confidence_threshold", c.confidence_threshold, 0.0, 1.0);
    range("sparsity_keep_ratio", c.sparsity_keep_ratio, 0.0, 1.0);
    at_least("num_clients", static_cast<double>(c.num_clients), 1);
    at_least("rounds", static_cast<double>(c.rounds), 1);
    at_least("local_epochs", static_cast<double>(c.local_epochs), 1);
    at_least("proto_dim", static_cast<double>(c.proto_dim), 1);
    at_least("hidden_dim", static_cast<double>(c.hidden_dim), 1);
    at_least("scorer_hidden", static_cast<double>(c.scorer_hidden), 1);
    at_least("max_hop", static_cast<double>(c.max_hop), -1);
    at_least("lr_client", c.lr_client, 0.0);
    at_least("lr_server", c.lr_server, 0.0);
    at_least("noise_sigma_rel", c.noise_sigma_rel, 0.0);
    if (c.sparsity_mode != "none" && c.sparsity_mode != "feature" && c.sparsity_mode != "edge" &&
        c.sparsity_mode != "label") {
        throw Error(ErrorCode::ConfigRange, "sparsity_mode=" + c.sparsity_mode + " is not one of none|feature|edge|label");
    }
    if (c.method == Method::FedAvg && c.backbone == BackboneChoice::Mixed) {
        throw Error(ErrorCode::ConfigRange, "fedavg needs one shared architecture; backbone=mixed is not allowed");
    }
}

/// Reads a flat `key = value` file. Blank lines and lines starting with '#'
/// are skipped.
inline FederationConfig load_config(const std::filesystem::path& path, FederationConfig cfg = {}) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigNotFound, "cannot open config file " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto body = detail::trim(line);
        if (body.empty() || body.front() == '#') continue;
        try {
            apply_override(cfg, body);
        } catch (const Error& e) {
            throw Error(e.code(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

/// Defaults, then the file (if any), then overrides in order, then the seed
/// shorthand. Validation runs last.
inline FederationConfig resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides,
                                       std::optional<std::uint64_t> seed = std::nullopt) {
    FederationConfig cfg = file.empty() ? FederationConfig{} : load_config(file);
    for (const auto& o : overrides) apply_override(cfg, o);
    if (seed) cfg.set_all_seeds(*seed);
    validate(cfg);
    return cfg;
}

inline OrderedJson to_json(const FederationConfig& cfg) {
    OrderedJson j = OrderedJson::object();
    for (const auto& f : detail::schema()) j[std::string(f.name)] = f.get(cfg);
    return j;
}

/// Serializes JSON with every floating-point value printed to 17
/// significant digits.
inline void write_json_exact(std::ostream& os, const OrderedJson& j, int indent = 2, int depth = 0) {
    const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
    const std::string close_pad(static_cast<std::size_t>(indent * depth), ' ');
    if (j.is_number_float()) {
        const double v = j.get<double>();
        if (!std::isfinite(v)) {
            os << "null";
            return;
        }
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << buf;
    } else if (j.is_object()) {
        if (j.empty()) {
            os << "{}";
            return;
        }
        os << "{\n";
        bool first = true;
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!first) os << ",\n";
            first = false;
            os << pad << OrderedJson(it.key()).dump() << ": ";
            write_json_exact(os, it.value(), indent, depth + 1);
        }
        os << "\n" << close_pad << "}";
    } else if (j.is_array()) {
        if (j.empty()) {
            os << "[]";
            return;
        }
        os << "[";
        bool first = true;
        for (const auto& v : j) {
            if (!first) os << ", ";
            first = false;
            write_json_exact(os, v, indent, depth + 1);
        }
        os << "]";
    } else {
        os << j.dump();
    }
}

inline std::string dump_json_exact(const OrderedJson& j) {
    std::ostringstream os;
    write_json_exact(os, j);
    os << "\n";
    return os.str();
}

}  // namespace fedpg
