#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedpg/common.hpp"
#include "fedpg/graph.hpp"

namespace fedpg {

enum class BackboneKind { PropagatedLinear, MessagePassing2Layer };

inline std::string_view backbone_name(BackboneKind kind) {
    return kind == BackboneKind::PropagatedLinear ? "propagated-linear" : "message-passing-2layer";
}

struct BackboneSpec {
    BackboneKind kind = BackboneKind::PropagatedLinear;
    std::size_t layers = 2;  // propagation steps; message-passing is always 2
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 64;
    std::size_t num_classes = 0;
    std::size_t proto_dim = 64;

    /// Receptive-field depth in hops.
    std::size_t receptive_field() const { return kind == BackboneKind::PropagatedLinear ? layers : 2; }

    friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

/// f = (w_embed, b_embed), g = (w_out, b_out); w_proj maps f's output into
/// the shared prototype space. Biases are 1 x d matrices.
struct BackboneWeights {
    Matrix w_embed, b_embed, w_out, b_out, w_proj;

    static constexpr std::array<std::string_view, 5> kNames{"w_embed", "b_embed", "w_out", "b_out", "w_proj"};

    std::array<Matrix*, 5> tensors() { return {&w_embed, &b_embed, &w_out, &b_out, &w_proj}; }
    std::array<const Matrix*, 5> tensors() const { return {&w_embed, &b_embed, &w_out, &b_out, &w_proj}; }

    BackboneWeights zeros_like() const {
        BackboneWeights z;
        auto dst = z.tensors();
        auto src = tensors();
        for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = Matrix::Zero(src[i]->rows(), src[i]->cols());
        return z;
    }
};

/// Per-graph precomputation shared by forward and backward.
struct GraphOperator {
    SparseMatrix a_hat;
    Matrix propagated;  // A^L X (propagated-linear) or A X (message-passing)
};

inline GraphOperator make_graph_operator(const Graph& g, const BackboneSpec& spec) {
    GraphOperator op{normalized_adjacency(g), g.features()};
    const std::size_t steps = spec.kind == BackboneKind::PropagatedLinear ? spec.layers : 1;
    for (std::size_t s = 0; s < steps; ++s) op.propagated = op.a_hat * op.propagated;
    return op;
}

struct Activations {
    Matrix pre_embed;   // before the nonlinearity (message-passing only)
    Matrix embedding;   // f(x): n x hidden
    Matrix smoothed;    // A f(x) (message-passing only)
    Matrix logits;      // n x C
    Matrix projected;   // n x proto_dim
};

class Backbone {
public:
    Backbone() = default;

    Backbone(const BackboneSpec& spec, Rng& rng) : spec_(spec) {
        auto glorot = [&](std::size_t rows, std::size_t cols) {
            const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
            Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0 * uniform01(rng) - 1.0) * bound;
            return m;
        };
        w_.w_embed = glorot(spec.input_dim, spec.hidden_dim);
        w_.b_embed = Matrix::Zero(1, static_cast<Eigen::Index>(spec.hidden_dim));
        w_.w_out = glorot(spec.hidden_dim, spec.num_classes);
        w_.b_out = Matrix::Zero(1, static_cast<Eigen::Index>(spec.num_classes));
        w_.w_proj = glorot(spec.hidden_dim, spec.proto_dim);
    }

    Backbone(const BackboneSpec& spec, BackboneWeights weights) : spec_(spec), w_(std::move(weights)) {
        check_shapes();
    }

    const BackboneSpec& spec() const noexcept { return spec_; }
    const BackboneWeights& weights() const noexcept { return w_; }
    BackboneWeights& weights() noexcept { return w_; }

    void check_shapes() const {
        const auto h = static_cast<Eigen::Index>(spec_.hidden_dim);
        const auto c = static_cast<Eigen::Index>(spec_.num_classes);
        const auto p = static_cast<Eigen::Index>(spec_.proto_dim);
        const auto f = static_cast<Eigen::Index>(spec_.input_dim);
        const bool ok = w_.w_embed.rows() == f && w_.w_embed.cols() == h && w_.b_embed.rows() == 1 &&
                        w_.b_embed.cols() == h && w_.w_out.rows() == h && w_.w_out.cols() == c &&
                        w_.b_out.rows() == 1 && w_.b_out.cols() == c && w_.w_proj.rows() == h &&
                        w_.w_proj.cols() == p;
        if (!ok) throw Error(ErrorCode::InvalidArgument, "backbone weight shapes do not match the declared dims");
    }

    Activations forward(const GraphOperator& op) const {
        if (static_cast<std::size_t>(op.propagated.cols()) != spec_.input_dim) {
            throw Error(ErrorCode::InvalidArgument, "graph feature dim " + std::to_string(op.propagated.cols()) +
                                                        " does not match backbone input dim " +
                                                        std::to_string(spec_.input_dim));
        }
        Activations a;
        a.pre_embed = (op.propagated * w_.w_embed).rowwise() + w_.b_embed.row(0);
        if (spec_.kind == BackboneKind::PropagatedLinear) {
            a.embedding = a.pre_embed;
            a.logits = (a.embedding * w_.w_out).rowwise() + w_.b_out.row(0);
        } else {
            a.embedding = a.pre_embed.cwiseMax(0.0);
            a.smoothed = op.a_hat * a.embedding;
            a.logits = (a.smoothed * w_.w_out).rowwise() + w_.b_out.row(0);
        }
        a.projected = a.embedding * w_.w_proj;
        return a;
    }

    /// Gradients of a scalar loss given its partials w.r.t. logits and the
    /// projected embeddings. Either partial may be empty (treated as zero).
    BackboneWeights backward(const GraphOperator& op, const Activations& a, const Matrix& d_logits,
                             const Matrix& d_projected) const {
        BackboneWeights g = w_.zeros_like();
        Matrix d_embed = Matrix::Zero(a.embedding.rows(), a.embedding.cols());
        if (d_logits.size() != 0) {
            g.b_out = d_logits.colwise().sum();
            if (spec_.kind == BackboneKind::PropagatedLinear) {
                g.w_out = a.embedding.transpose() * d_logits;
                d_embed.noalias() += d_logits * w_.w_out.transpose();
            } else {
                g.w_out = a.smoothed.transpose() * d_logits;
                const Matrix d_smoothed = d_logits * w_.w_out.transpose();
                d_embed.noalias() += op.a_hat.transpose() * d_smoothed;
            }
        }
        if (d_projected.size() != 0) {
            g.w_proj = a.embedding.transpose() * d_projected;
            d_embed.noalias() += d_projected * w_.w_proj.transpose();
        }
        if (spec_.kind == BackboneKind::MessagePassing2Layer) {
            d_embed = d_embed.cwiseProduct((a.pre_embed.array() > 0.0).cast<double>().matrix());
        }
        g.w_embed = op.propagated.transpose() * d_embed;
        g.b_embed = d_embed.colwise().sum();
        return g;
    }

private:
    BackboneSpec spec_;
    BackboneWeights w_;
};

inline Matrix row_softmax(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        out.row(i) = (logits.row(i).array() - mx).exp().matrix();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

/// Argmax per row; ties resolve to the lowest class id.
inline std::vector<int> row_argmax(const Matrix& m) {
    std::vector<int> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < m.cols(); ++j)
            if (m(i, j) > m(i, best)) best = j;
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

struct Prediction {
    std::vector<int> hard;
    Matrix soft;
};

inline Prediction predict(const Backbone& b, const GraphOperator& op) {
    const Matrix soft = row_softmax(b.forward(op).logits);
    return {row_argmax(soft), soft};
}

/// Mean softmax cross-entropy over `nodes`; fills d_logits (same shape as
/// logits, zero outside `nodes`) when requested.
inline double cross_entropy(const Matrix& logits, std::span<const int> labels, std::span<const std::size_t> nodes,
                            Matrix* d_logits = nullptr) {
    if (d_logits) *d_logits = Matrix::Zero(logits.rows(), logits.cols());
    if (nodes.empty()) return 0.0;
    const double scale = 1.0 / static_cast<double>(nodes.size());
    double loss = 0.0;
    for (std::size_t v : nodes) {
        const auto r = static_cast<Eigen::Index>(v);
        const double mx = logits.row(r).maxCoeff();
        const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
        loss += lse - logits(r, labels[v]);
        if (d_logits) {
            d_logits->row(r) = (logits.row(r).array() - lse).exp().matrix() * scale;
            (*d_logits)(r, labels[v]) -= scale;
        }
    }
    return loss * scale;
}

// ---------------------------------------------------------------------------
// Weight snapshots: [u32 LE header length][JSON header][f64 LE payload, row-major]

inline std::vector<std::uint8_t> serialize_model(const Backbone& b) {
    const auto& w = b.weights();
    const std::array<const Matrix*, 4> parts{&w.w_embed, &w.b_embed, &w.w_out, &w.b_out};
    nlohmann::json header;
    header["kind"] = std::string(backbone_name(b.spec().kind));
    header["layers"] = b.spec().layers;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        header["tensors"].push_back({{"name", BackboneWeights::kNames[i]}, {"shape", {parts[i]->rows(), parts[i]->cols()}}});
    }
    const std::string text = header.dump();
    std::vector<std::uint8_t> blob;
    auto put_u32 = [&](std::uint32_t v) {
        for (int s = 0; s < 32; s += 8) blob.push_back(static_cast<std::uint8_t>(v >> s));
    };
    put_u32(static_cast<std::uint32_t>(text.size()));
    blob.insert(blob.end(), text.begin(), text.end());
    for (const Matrix* m : parts) {
        for (Eigen::Index r = 0; r < m->rows(); ++r) {
            for (Eigen::Index c = 0; c < m->cols(); ++c) {
                const auto bits = std::bit_cast<std::uint64_t>((*m)(r, c));
                for (int s = 0; s < 64; s += 8) blob.push_back(static_cast<std::uint8_t>(bits >> s));
            }
        }
    }
    return blob;
}

/// Inverse of serialize_model: overwrites f and g of `b` (projection kept).
inline void deserialize_model(std::span<const std::uint8_t> blob, Backbone& b) {
    auto fail = [] { throw Error(ErrorCode::DataFormat, "malformed weight snapshot"); };
    if (blob.size() < 4) fail();
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(blob[static_cast<std::size_t>(i)]) << (8 * i);
    if (blob.size() < 4 + len) fail();
    const auto header = nlohmann::json::parse(blob.begin() + 4, blob.begin() + 4 + len);
    auto& w = b.weights();
    const std::array<Matrix*, 4> parts{&w.w_embed, &w.b_embed, &w.w_out, &w.b_out};
    std::size_t pos = 4 + len;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& shape = header.at("tensors").at(i).at("shape");
        const auto rows = shape.at(0).get<Eigen::Index>(), cols = shape.at(1).get<Eigen::Index>();
        if (rows != parts[i]->rows() || cols != parts[i]->cols()) fail();
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) {
                if (pos + 8 > blob.size()) fail();
                std::uint64_t bits = 0;
                for (int s = 0; s < 8; ++s) bits |= static_cast<std::uint64_t>(blob[pos + static_cast<std::size_t>(s)]) << (8 * s);
                (*parts[i])(r, c) = std::bit_cast<double>(bits);
                pos += 8;
            }
        }
    }
    if (pos != blob.size()) fail();
}

}  // namespace fedpg
