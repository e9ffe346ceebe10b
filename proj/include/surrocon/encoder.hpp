#pragma once

// Encoder f, projection head G and linear probe of the two-stage pipeline.
//
// The encoder is an MLP (ReLU between layers, linear output). The projection
// head has exactly one hidden layer and always ends in row normalization. The
// probe is a single affine map evaluated on frozen representations.

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "surrocon/autodiff.hpp"
#include "surrocon/errors.hpp"
#include "surrocon/rng.hpp"
#include "surrocon/tensor.hpp"

namespace surrocon {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

/// Fully connected layer y = x·W + b with W[in×out].
struct Linear {
    Node weight;
    Node bias;

    Linear() = default;

    /// Glorot-uniform weights in ±sqrt(6/(in+out)), zero bias.
    Linear(std::size_t in, std::size_t out, std::uint64_t seed) {
        Rng rng(seed);
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        std::vector<double> w(in * out);
        for (auto& v : w) v = rng.uniform(-bound, bound);
        weight = Node::parameter(Tensor::matrix(in, out, std::move(w)));
        bias = Node::parameter(Tensor::zeros({out}));
    }

    // Copies own fresh parameter nodes; a copied network never aliases the original.
    Linear(const Linear& o)
        : weight(o.weight.valid() ? Node::parameter(o.weight.value()) : Node{}),
          bias(o.bias.valid() ? Node::parameter(o.bias.value()) : Node{}) {}
    Linear& operator=(const Linear& o) {
        if (this != &o) *this = Linear(o);
        return *this;
    }
    Linear(Linear&&) noexcept = default;
    Linear& operator=(Linear&&) noexcept = default;
    ~Linear() = default;

    [[nodiscard]] std::size_t in_dim() const { return weight.value().rows(); }
    [[nodiscard]] std::size_t out_dim() const { return weight.value().cols(); }

    [[nodiscard]] Node forward(const Node& x) const { return add_row_bias(matmul(x, weight), bias); }
};

namespace detail {

inline std::vector<Linear> build_mlp(std::span<const std::size_t> dims, std::uint64_t seed) {
    if (dims.size() < 2) throw ParameterError("MLP needs at least input and output dims");
    for (auto d : dims) {
        if (d == 0) throw ParameterError("MLP layer width must be positive");
    }
    std::vector<Linear> layers;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        layers.emplace_back(dims[i], dims[i + 1], derive_seed(seed, i));
    }
    return layers;
}

inline Node run_mlp(const std::vector<Linear>& layers, Node h) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i].forward(h);
        if (i + 1 < layers.size()) h = relu(h);
    }
    return h;
}

inline void append_params(const std::vector<Linear>& layers, std::vector<Node>& out) {
    for (const auto& l : layers) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
}

}  // namespace detail

/// Encoder f: input_dim -> hidden... -> repr_dim.
class EncoderNet {
public:
    EncoderNet() = default;

    EncoderNet(std::vector<std::size_t> dims, std::uint64_t seed)
        : dims_(std::move(dims)), layers_(detail::build_mlp(dims_, seed)) {}

    /// Default desk-scale shape: input -> 256 -> 64.
    static EncoderNet with_defaults(std::size_t input_dim, std::uint64_t seed) {
        return EncoderNet({input_dim, 256, 64}, seed);
    }

    [[nodiscard]] const std::vector<std::size_t>& dims() const { return dims_; }
    [[nodiscard]] std::size_t input_dim() const { return dims_.front(); }
    [[nodiscard]] std::size_t repr_dim() const { return dims_.back(); }

    [[nodiscard]] Node encode(const Node& x) const {
        if (x.value().rank() != 2 || x.value().cols() != input_dim()) {
            throw DimensionError("encode: input " + shape_str(x.shape()) + " but encoder expects " +
                                 std::to_string(input_dim()) + " columns");
        }
        return detail::run_mlp(layers_, x);
    }

    [[nodiscard]] Node encode(const Tensor& x) const { return encode(Node::constant(x)); }

    /// Representations as plain values (frozen use).
    [[nodiscard]] Tensor represent(const Tensor& x) const { return encode(x).value(); }

    [[nodiscard]] std::vector<Node> parameters() const {
        std::vector<Node> out;
        detail::append_params(layers_, out);
        return out;
    }

    [[nodiscard]] const std::vector<Linear>& layers() const { return layers_; }

private:
    std::vector<std::size_t> dims_;
    std::vector<Linear> layers_;
};

/// Projection head G: repr_dim -> hidden -> proj_dim, then row normalization.
class ProjectionHead {
public:
    ProjectionHead() = default;

    ProjectionHead(std::size_t repr_dim, std::size_t hidden_dim, std::size_t proj_dim, std::uint64_t seed)
        : layers_(detail::build_mlp(std::vector<std::size_t>{repr_dim, hidden_dim, proj_dim}, seed)) {}

    [[nodiscard]] std::size_t repr_dim() const { return layers_.front().in_dim(); }
    [[nodiscard]] std::size_t hidden_dim() const { return layers_.front().out_dim(); }
    [[nodiscard]] std::size_t proj_dim() const { return layers_.back().out_dim(); }

    [[nodiscard]] Node project(const Node& r) const {
        if (r.value().rank() != 2 || r.value().cols() != repr_dim()) {
            throw DimensionError("project: input " + shape_str(r.shape()) + " but head expects " +
                                 std::to_string(repr_dim()) + " columns");
        }
        return l2_normalize(detail::run_mlp(layers_, r));
    }

    [[nodiscard]] std::vector<Node> parameters() const {
        std::vector<Node> out;
        detail::append_params(layers_, out);
        return out;
    }

    [[nodiscard]] const std::vector<Linear>& layers() const { return layers_; }

private:
    std::vector<Linear> layers_;
};

/// Affine classifier on frozen representations; one logit per biomarker slot.
class LinearProbe {
public:
    LinearProbe() = default;

    LinearProbe(std::size_t repr_dim, std::size_t num_outputs, std::uint64_t seed)
        : layer_(repr_dim, num_outputs, seed) {}

    LinearProbe(Tensor weight, Tensor bias) {
        if (weight.rank() != 2 || bias.size() != weight.cols()) {
            throw DimensionError("LinearProbe: weight " + shape_str(weight.shape()) + " / bias " +
                                 shape_str(bias.shape()));
        }
        layer_.weight = Node::parameter(std::move(weight));
        layer_.bias = Node::parameter(Tensor::vector({bias.data().begin(), bias.data().end()}));
    }

    [[nodiscard]] std::size_t repr_dim() const { return layer_.in_dim(); }
    [[nodiscard]] std::size_t num_outputs() const { return layer_.out_dim(); }

    [[nodiscard]] Node forward(const Tensor& r) const {
        if (r.rank() != 2 || r.cols() != repr_dim()) {
            throw DimensionError("probe: representation " + shape_str(r.shape()) + " but probe expects " +
                                 std::to_string(repr_dim()) + " columns");
        }
        return layer_.forward(Node::constant(r));
    }

    [[nodiscard]] std::vector<Node> parameters() const { return {layer_.weight, layer_.bias}; }
    [[nodiscard]] const Linear& layer() const { return layer_; }

private:
    Linear layer_;
};

[[nodiscard]] inline Tensor probe_logits(const LinearProbe& p, const Tensor& r) { return p.forward(r).value(); }

inline std::uint64_t parameter_checksum(std::span<const Node> params) {
    Fnv1a h;
    for (const auto& p : params) h.update(p.value().data());
    return h.digest();
}

inline std::uint64_t parameter_checksum(const EncoderNet& net) {
    auto p = net.parameters();
    return parameter_checksum(p);
}

// ---------------------------------------------------------------------------
// Checkpoints: one line of JSON, '\n', then the parameters as raw float64.

struct Checkpoint {
    EncoderNet encoder;
    ProjectionHead head;  // absent (no layers) when only the encoder was stored
    std::uint64_t seed = 0;
    std::string stage = "pretrain";
    std::string config_hash;
};

namespace detail {

inline void write_params(std::ostream& os, const std::vector<Node>& params) {
    for (const auto& p : params) {
        auto d = p.value().data();
        os.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size_bytes()));
    }
}

inline void read_params(std::istream& is, std::vector<Node>& params, const std::string& path) {
    for (auto& p : params) {
        Tensor t = p.value();
        auto d = t.data();
        is.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size_bytes()));
        if (is.gcount() != static_cast<std::streamsize>(d.size_bytes())) {
            throw IntegrityError("checkpoint " + path + ": parameter blob truncated");
        }
        p.assign(std::move(t));
    }
}

}  // namespace detail

inline nlohmann::json checkpoint_header(const Checkpoint& ck) {
    nlohmann::json h;
    h["format"] = "surrocon-checkpoint v1";
    h["encoder_dims"] = ck.encoder.dims();
    if (!ck.head.layers().empty()) {
        h["head_dims"] = {ck.head.repr_dim(), ck.head.hidden_dim(), ck.head.proj_dim()};
    } else {
        h["head_dims"] = nlohmann::json::array();
    }
    h["seed"] = ck.seed;
    h["stage"] = ck.stage;
    h["config_hash"] = ck.config_hash;
    h["encoder_checksum"] = hex64(parameter_checksum(ck.encoder));
    return h;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ContractError("cannot open checkpoint for writing: " + path);
    os << checkpoint_header(ck).dump() << '\n';
    detail::write_params(os, ck.encoder.parameters());
    detail::write_params(os, ck.head.parameters());
    if (!os) throw ContractError("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ContractError("cannot open checkpoint: " + path);
    std::string line;
    std::getline(is, line);
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint " + path + ": bad header: " + e.what());
    }
    if (h.value("format", "") != "surrocon-checkpoint v1") {
        throw ParseError("checkpoint " + path + ": unknown format");
    }
    Checkpoint ck;
    ck.encoder = EncoderNet(h.at("encoder_dims").get<std::vector<std::size_t>>(), 0);
    auto hd = h.at("head_dims").get<std::vector<std::size_t>>();
    if (hd.size() == 3) ck.head = ProjectionHead(hd[0], hd[1], hd[2], 0);
    ck.seed = h.at("seed").get<std::uint64_t>();
    ck.stage = h.at("stage").get<std::string>();
    ck.config_hash = h.at("config_hash").get<std::string>();

    auto enc = ck.encoder.parameters();
    detail::read_params(is, enc, path);
    auto head = ck.head.parameters();
    detail::read_params(is, head, path);
    if (is.peek() != std::char_traits<char>::eof()) {
        throw IntegrityError("checkpoint " + path + ": trailing bytes after parameter blob");
    }
    if (hex64(parameter_checksum(ck.encoder)) != h.at("encoder_checksum").get<std::string>()) {
        throw IntegrityError("checkpoint " + path + ": encoder checksum mismatch");
    }
    return ck;
}

/// Probe weights as JSON; doubles round-trip exactly.
inline nlohmann::json probe_to_json(const LinearProbe& p) {
    const auto& w = p.layer().weight.value();
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < w.rows(); ++r) rows.push_back(std::vector<double>(w.row(r).begin(), w.row(r).end()));
    const auto b = p.layer().bias.value().data();
    return {{"format", "surrocon-probe v1"},
            {"repr_dim", p.repr_dim()},
            {"num_outputs", p.num_outputs()},
            {"weight", rows},
            {"bias", std::vector<double>(b.begin(), b.end())}};
}

inline LinearProbe probe_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "surrocon-probe v1") throw ParseError("probe: unknown format");
    const auto rows = j.at("weight").get<std::vector<std::vector<double>>>();
    const auto bias = j.at("bias").get<std::vector<double>>();
    const auto in = j.at("repr_dim").get<std::size_t>();
    const auto out = j.at("num_outputs").get<std::size_t>();
    if (rows.size() != in || bias.size() != out) throw IntegrityError("probe: weight shape does not match header");
    std::vector<double> w;
    for (const auto& r : rows) {
        if (r.size() != out) throw IntegrityError("probe: ragged weight rows");
        w.insert(w.end(), r.begin(), r.end());
    }
    return LinearProbe(Tensor::matrix(in, out, std::move(w)), Tensor::vector(bias));
}

}  // namespace surrocon
