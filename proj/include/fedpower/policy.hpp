#pragma once

// Power-allocation policies: the graph-convolutional policy, the MLP
// baseline, and the model-based Rand / Orth baselines behind one interface.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "fedpower/binary_io.hpp"
#include "fedpower/channel.hpp"
#include "fedpower/diffcore.hpp"
#include "fedpower/error.hpp"

namespace fedpower {

enum class PolicyKind { gcn, mlp, rand, orth };

inline std::string_view to_string(PolicyKind k) {
    switch (k) {
    case PolicyKind::gcn: return "gcn";
    case PolicyKind::mlp: return "mlp";
    case PolicyKind::rand: return "rand";
    case PolicyKind::orth: return "orth";
    }
    return "?";
}

inline PolicyKind parse_policy_kind(std::string_view s) {
    if (s == "gcn" || s == "pdgnet") return PolicyKind::gcn;
    if (s == "mlp" || s == "pdf") return PolicyKind::mlp;
    if (s == "rand") return PolicyKind::rand;
    if (s == "orth") return PolicyKind::orth;
    throw ConfigError("unknown policy kind '" + std::string(s) + "'");
}

/// A worker whose power is at or below this is treated as silent.
inline double transmit_threshold(double p_max) { return 1e-8 * p_max; }

/// D^{-1/2} H D^{-1/2} with D = diag(H 1).
inline Tensor normalized_adjacency(const CSIMatrix& H) {
    const std::size_t L = H.workers;
    std::vector<double> inv_sqrt_deg(L);
    for (std::size_t i = 0; i < L; ++i) {
        double d = 0.0;
        for (std::size_t j = 0; j < L; ++j) d += H(i, j);
        if (!(d > 0.0) || !std::isfinite(d)) {
            throw DegenerateError("row " + std::to_string(i) + " of the CSI matrix has nonpositive sum");
        }
        inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
    }
    Tensor a({L, L});
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) a(i, j) = inv_sqrt_deg[i] * H(i, j) * inv_sqrt_deg[j];
    return a;
}

inline CSIMatrix log1p_entries(const CSIMatrix& H) {
    CSIMatrix out = H;
    for (double& v : out.entries) v = std::log1p(v);
    return out;
}

namespace detail {

/// Glorot-uniform weights U(±sqrt(6/(d_in+d_out))).
inline Tensor glorot(std::size_t d_in, std::size_t d_out, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(d_in + d_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w({d_in, d_out});
    for (double& v : w.values()) v = u(rng);
    return w;
}

inline std::vector<Var> register_parameters(Tape& tape, const std::vector<Tensor>& params) {
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    return vars;
}

} // namespace detail

/// Learned policies expose their weights and a differentiable batched forward
/// pass producing one (L x 1) power column per CSI matrix.
template <class P>
concept LearnedPolicy = requires(P& p, const P& cp, Tape& tape, std::span<const Var> vars,
                                 std::span<const CSIMatrix* const> batch, double p_max) {
    { p.parameters() } -> std::same_as<std::vector<Tensor>&>;
    { cp.parameters() } -> std::same_as<const std::vector<Tensor>&>;
    { cp.forward_batch(tape, vars, batch, p_max) } -> std::same_as<std::vector<Var>>;
};

// ---------------------------------------------------------------------------

struct GcnOptions {
    /// Feature widths d_0..d_T; d_0 = 1 since the input is P_max·1.
    std::vector<std::size_t> dims{1, 16, 32, 64, 16, 2};
    bool log1p_input = false;
    /// Unit of the constant node input: watts, dBW, or P_max/P_max = 1.
    enum class InputUnit { watts, dbw, normalized } input_unit = InputUnit::watts;
};

class GcnPolicy {
public:
    GcnPolicy() = default;

    GcnPolicy(GcnOptions options, std::uint64_t seed) : options_(std::move(options)) {
        validate();
        std::mt19937_64 rng(seed);
        for (std::size_t t = 1; t < options_.dims.size(); ++t) {
            weights_.push_back(detail::glorot(options_.dims[t - 1], options_.dims[t], rng));
        }
    }

    GcnPolicy(GcnOptions options, std::vector<Tensor> weights)
        : options_(std::move(options)), weights_(std::move(weights)) {
        validate();
        if (weights_.size() + 1 != options_.dims.size()) throw ShapeError("GCN weight count does not match dims");
        for (std::size_t t = 0; t < weights_.size(); ++t) {
            if (weights_[t].shape() != Shape{options_.dims[t], options_.dims[t + 1]}) {
                throw ShapeError("GCN layer " + std::to_string(t + 1) + " has shape " +
                                 to_string(weights_[t].shape()));
            }
        }
    }

    [[nodiscard]] const GcnOptions& options() const noexcept { return options_; }
    [[nodiscard]] std::size_t layers() const noexcept { return weights_.size(); }
    std::vector<Tensor>& parameters() noexcept { return weights_; }
    [[nodiscard]] const std::vector<Tensor>& parameters() const noexcept { return weights_; }

    /// Z(t) = σ_t(Â Z(t-1) Θ(t)); ELU on hidden layers, P_max-scaled sigmoid
    /// on the last. Power is the first channel of Z(T).
    [[nodiscard]] Var forward(Tape& tape, std::span<const Var> theta, const CSIMatrix& H, double p_max) const {
        if (theta.size() != weights_.size()) throw StateError("GCN forward given wrong parameter list");
        if (!(p_max > 0.0)) throw DomainError("P_max must be positive");
        const std::size_t L = H.workers;
        const Var adj = tape.constant(normalized_adjacency(options_.log1p_input ? log1p_entries(H) : H));
        Var z = tape.constant(Tensor({L, 1}, input_level(p_max)));
        for (std::size_t t = 0; t < weights_.size(); ++t) {
            const bool last = (t + 1 == weights_.size());
            z = activation(matmul(matmul(adj, z), theta[t]),
                           last ? Activation::sigmoid_scaled(p_max) : Activation::elu());
        }
        return column(z, 0);
    }

    [[nodiscard]] std::vector<Var> forward_batch(Tape& tape, std::span<const Var> theta,
                                                 std::span<const CSIMatrix* const> batch, double p_max) const {
        std::vector<Var> out;
        out.reserve(batch.size());
        for (const CSIMatrix* H : batch) out.push_back(forward(tape, theta, *H, p_max));
        return out;
    }

    [[nodiscard]] double input_level(double p_max) const {
        switch (options_.input_unit) {
        case GcnOptions::InputUnit::dbw: return 10.0 * std::log10(p_max);
        case GcnOptions::InputUnit::normalized: return 1.0;
        case GcnOptions::InputUnit::watts: break;
        }
        return p_max;
    }

private:
    void validate() const {
        if (options_.dims.size() < 2) throw ConfigError("GCN needs at least one layer");
        if (options_.dims.front() != 1) throw ConfigError("GCN input width must be 1");
        for (auto d : options_.dims)
            if (d == 0) throw ConfigError("GCN layer widths must be positive");
    }

    GcnOptions options_;
    std::vector<Tensor> weights_;
};

// ---------------------------------------------------------------------------

struct MlpOptions {
    std::size_t workers = 8;
    std::vector<std::size_t> hidden{128, 256, 64, 16, 8};
    /// Feed log1p(H) instead of raw H; raw entries span several decades.
    bool log1p_input = true;
};

class MlpPolicy {
public:
    MlpPolicy() = default;

    MlpPolicy(MlpOptions options, std::uint64_t seed) : options_(std::move(options)) {
        if (options_.workers < 1) throw ConfigError("MLP needs at least one worker");
        std::mt19937_64 rng(seed);
        const auto d = dims();
        for (std::size_t t = 1; t < d.size(); ++t) {
            params_.push_back(detail::glorot(d[t - 1], d[t], rng));
            params_.push_back(Tensor({1, d[t]}, 0.0));
        }
    }

    MlpPolicy(MlpOptions options, std::vector<Tensor> params)
        : options_(std::move(options)), params_(std::move(params)) {
        const auto d = dims();
        if (params_.size() != 2 * (d.size() - 1)) throw ShapeError("MLP parameter count does not match dims");
        for (std::size_t t = 1; t < d.size(); ++t) {
            if (params_[2 * (t - 1)].shape() != Shape{d[t - 1], d[t]} ||
                params_[2 * (t - 1) + 1].shape() != Shape{1, d[t]}) {
                throw ShapeError("MLP layer " + std::to_string(t) + " has wrong shape");
            }
        }
    }

    /// Layer widths including input (L²+1) and output (L).
    [[nodiscard]] std::vector<std::size_t> dims() const {
        std::vector<std::size_t> d{options_.workers * options_.workers + 1};
        d.insert(d.end(), options_.hidden.begin(), options_.hidden.end());
        d.push_back(options_.workers);
        return d;
    }

    [[nodiscard]] const MlpOptions& options() const noexcept { return options_; }
    [[nodiscard]] std::size_t workers() const noexcept { return options_.workers; }
    std::vector<Tensor>& parameters() noexcept { return params_; }
    [[nodiscard]] const std::vector<Tensor>& parameters() const noexcept { return params_; }

    [[nodiscard]] std::vector<Var> forward_batch(Tape& tape, std::span<const Var> params,
                                                 std::span<const CSIMatrix* const> batch, double p_max) const {
        if (params.size() != params_.size()) throw StateError("MLP forward given wrong parameter list");
        if (!(p_max > 0.0)) throw DomainError("P_max must be positive");
        const std::size_t L = options_.workers;
        const std::size_t width = L * L + 1;
        Tensor input({batch.size(), width});
        for (std::size_t s = 0; s < batch.size(); ++s) {
            const CSIMatrix& H = *batch[s];
            if (H.workers != L) {
                throw DimensionError("MLP policy was built for " + std::to_string(L) + " workers, got " +
                                     std::to_string(H.workers));
            }
            for (std::size_t k = 0; k < L * L; ++k) {
                input(s, k) = options_.log1p_input ? std::log1p(H.entries[k]) : H.entries[k];
            }
            input(s, L * L) = p_max;
        }
        Var x = tape.constant(std::move(input));
        const std::size_t layers = params_.size() / 2;
        for (std::size_t t = 0; t < layers; ++t) {
            const bool last = (t + 1 == layers);
            x = activation(add_row(matmul(x, params[2 * t]), params[2 * t + 1]),
                           last ? Activation::sigmoid_scaled(p_max) : Activation::elu());
        }
        std::vector<Var> out;
        out.reserve(batch.size());
        for (std::size_t s = 0; s < batch.size(); ++s) out.push_back(row_as_column(x, s));
        return out;
    }

    [[nodiscard]] Var forward(Tape& tape, std::span<const Var> params, const CSIMatrix& H, double p_max) const {
        const CSIMatrix* one[] = {&H};
        return forward_batch(tape, params, one, p_max).front();
    }

private:
    MlpOptions options_;
    std::vector<Tensor> params_;
};

static_assert(LearnedPolicy<GcnPolicy>);
static_assert(LearnedPolicy<MlpPolicy>);

/// Forward values only, one tape for the whole batch.
template <LearnedPolicy P>
std::vector<std::vector<double>> allocate_batch(const P& policy, std::span<const CSIMatrix> channels, double p_max) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& p : policy.parameters()) vars.push_back(tape.constant(p));
    std::vector<const CSIMatrix*> ptrs;
    ptrs.reserve(channels.size());
    for (const auto& H : channels) ptrs.push_back(&H);
    const auto cols = policy.forward_batch(tape, vars, ptrs, p_max);
    std::vector<std::vector<double>> out;
    out.reserve(cols.size());
    for (Var c : cols) out.push_back(tape.value(c).data());
    return out;
}

template <LearnedPolicy P>
std::vector<double> allocate(const P& policy, const CSIMatrix& H, double p_max) {
    return allocate_batch(policy, std::span(&H, 1), p_max).front();
}

// ---------------------------------------------------------------------------
// Model-based baselines

/// i.i.d. U(0, P_max) powers.
inline std::vector<double> rand_powers(std::size_t workers, double p_max, std::mt19937_64& rng) {
    if (!(p_max > 0.0)) throw DomainError("P_max must be positive");
    std::vector<double> p(workers);
    for (double& v : p) {
        double u = 0.0;
        while (u == 0.0) u = std::generate_canonical<double, 53>(rng);
        v = p_max * u;
        if (!(v > 0.0)) v = p_max; // underflow for subnormal P_max
        if (v > p_max) v = p_max;
    }
    return p;
}

inline std::vector<double> rand_policy(std::size_t workers, double p_max, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return rand_powers(workers, p_max, rng);
}

inline std::vector<double> orth_policy(std::size_t workers, double p_max) {
    if (!(p_max > 0.0)) throw DomainError("P_max must be positive");
    return std::vector<double>(workers, p_max);
}

/// Silences workers whose rate under the full power vector is below their floor.
inline std::vector<double> baseline_select(std::vector<double> powers, const CSIMatrix& H,
                                           std::span<const double> rate_floor, double bandwidth_hz) {
    if (rate_floor.size() != powers.size()) throw DimensionError("rate floor length mismatch");
    const auto s = sinr(powers, H);
    for (std::size_t i = 0; i < powers.size(); ++i) {
        if (bandwidth_hz * std::log1p(s[i]) < rate_floor[i]) powers[i] = 0.0;
    }
    return powers;
}

struct RandPolicy {
    std::mt19937_64 rng;
    explicit RandPolicy(std::uint64_t seed = 0) : rng(seed) {}
};

struct OrthPolicy {};

/// Type-erased policy used by the evaluation and FL code.
class PowerPolicy {
public:
    using Impl = std::variant<GcnPolicy, MlpPolicy, RandPolicy, OrthPolicy>;

    PowerPolicy(GcnPolicy p) : impl_(std::move(p)) {}
    PowerPolicy(MlpPolicy p) : impl_(std::move(p)) {}
    PowerPolicy(RandPolicy p) : impl_(std::move(p)) {}
    PowerPolicy(OrthPolicy p) : impl_(p) {}

    [[nodiscard]] PolicyKind kind() const noexcept {
        return static_cast<PolicyKind>(impl_.index());
    }
    [[nodiscard]] bool learned() const noexcept {
        return kind() == PolicyKind::gcn || kind() == PolicyKind::mlp;
    }

    /// Raw allocation; Rand advances its stream.
    std::vector<double> allocate(const CSIMatrix& H, double p_max) {
        return std::visit(
            [&](auto& p) -> std::vector<double> {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, RandPolicy>) return rand_powers(H.workers, p_max, p.rng);
                else if constexpr (std::is_same_v<T, OrthPolicy>) return orth_policy(H.workers, p_max);
                else return fedpower::allocate(p, H, p_max);
            },
            impl_);
    }

    std::vector<std::vector<double>> allocate_batch(std::span<const CSIMatrix> channels, double p_max) {
        if (learned()) {
            return std::visit(
                [&](auto& p) -> std::vector<std::vector<double>> {
                    using T = std::decay_t<decltype(p)>;
                    if constexpr (LearnedPolicy<T>) return fedpower::allocate_batch(p, channels, p_max);
                    else return {};
                },
                impl_);
        }
        std::vector<std::vector<double>> out;
        out.reserve(channels.size());
        for (const auto& H : channels) out.push_back(allocate(H, p_max));
        return out;
    }

    /// Powers actually used for transmission: baselines go through the
    /// rate-floor selection, learned policies are used as-is.
    std::vector<double> transmit_powers(const CSIMatrix& H, double p_max, std::span<const double> rate_floor,
                                        double bandwidth_hz) {
        auto p = allocate(H, p_max);
        if (!learned()) p = baseline_select(std::move(p), H, rate_floor, bandwidth_hz);
        return p;
    }

    [[nodiscard]] const Impl& impl() const noexcept { return impl_; }
    Impl& impl() noexcept { return impl_; }

private:
    Impl impl_;
};

// ---------------------------------------------------------------------------
// Checkpoints: "FPMDL01", kind tag (u8), flags (u8), layer count (u32 LE),
// layer widths (u32 LE each), then f64 LE weights layer by layer (matrix
// row-major, followed by the bias row when the kind has biases).

inline constexpr std::string_view kModelMagic = "FPMDL01";

enum class ModelTag : std::uint8_t { gcn = 0, mlp = 1, classifier = 2 };

struct Checkpoint {
    ModelTag tag = ModelTag::gcn;
    std::uint8_t flags = 0;
    std::vector<std::uint32_t> dims;
    std::vector<Tensor> tensors;
};

inline bool tag_has_bias(ModelTag tag) { return tag != ModelTag::gcn; }

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
    os.write(kModelMagic.data(), static_cast<std::streamsize>(kModelMagic.size()));
    binary::put_u8(os, static_cast<std::uint8_t>(ck.tag));
    binary::put_u8(os, ck.flags);
    binary::put_u32_le(os, static_cast<std::uint32_t>(ck.dims.size()));
    for (auto d : ck.dims) binary::put_u32_le(os, d);
    for (const auto& t : ck.tensors)
        for (double v : t.values()) binary::put_f64_le(os, v);
}

inline Checkpoint read_checkpoint(std::istream& is) {
    binary::expect_magic(is, kModelMagic, "model checkpoint");
    Checkpoint ck;
    const auto tag = binary::get_u8(is, "model header");
    if (tag > 2) throw FormatError("unknown model kind tag " + std::to_string(tag));
    ck.tag = static_cast<ModelTag>(tag);
    ck.flags = binary::get_u8(is, "model header");
    const auto n = binary::get_u32_le(is, "model header");
    if (n < 2 || n > 64) throw FormatError("implausible layer count " + std::to_string(n));
    for (std::uint32_t i = 0; i < n; ++i) ck.dims.push_back(binary::get_u32_le(is, "model header"));
    for (std::size_t t = 1; t < ck.dims.size(); ++t) {
        Tensor w({ck.dims[t - 1], ck.dims[t]});
        for (double& v : w.values()) v = binary::get_f64_le(is, "model weights");
        ck.tensors.push_back(std::move(w));
        if (tag_has_bias(ck.tag)) {
            Tensor b({1, ck.dims[t]});
            for (double& v : b.values()) v = binary::get_f64_le(is, "model weights");
            ck.tensors.push_back(std::move(b));
        }
    }
    return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");
    write_checkpoint(os, ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("missing checkpoint " + path);
    return read_checkpoint(is);
}

/// GCN flags: bit 0 log1p input, bits 1-2 input unit.
inline Checkpoint to_checkpoint(const GcnPolicy& p) {
    const auto unit = static_cast<unsigned>(p.options().input_unit);
    Checkpoint ck{ModelTag::gcn, static_cast<std::uint8_t>((p.options().log1p_input ? 1u : 0u) | (unit << 1)), {},
                  p.parameters()};
    for (auto d : p.options().dims) ck.dims.push_back(static_cast<std::uint32_t>(d));
    return ck;
}

inline Checkpoint to_checkpoint(const MlpPolicy& p) {
    Checkpoint ck{ModelTag::mlp, static_cast<std::uint8_t>(p.options().log1p_input ? 1 : 0), {}, p.parameters()};
    for (auto d : p.dims()) ck.dims.push_back(static_cast<std::uint32_t>(d));
    return ck;
}

inline PowerPolicy policy_from_checkpoint(const Checkpoint& ck) {
    if (ck.tag == ModelTag::gcn) {
        GcnOptions opt;
        opt.dims.assign(ck.dims.begin(), ck.dims.end());
        opt.log1p_input = (ck.flags & 1) != 0;
        const unsigned unit = (ck.flags >> 1) & 3u;
        if (unit > 2) throw FormatError("unknown GCN input unit " + std::to_string(unit));
        opt.input_unit = static_cast<GcnOptions::InputUnit>(unit);
        return GcnPolicy(std::move(opt), ck.tensors);
    }
    if (ck.tag == ModelTag::mlp) {
        MlpOptions opt;
        const auto L = static_cast<std::size_t>(ck.dims.back());
        if (ck.dims.front() != L * L + 1) throw FormatError("MLP checkpoint input width is not L^2+1");
        opt.workers = L;
        opt.hidden.assign(ck.dims.begin() + 1, ck.dims.end() - 1);
        opt.log1p_input = (ck.flags & 1) != 0;
        return MlpPolicy(std::move(opt), ck.tensors);
    }
    throw FormatError("checkpoint does not hold a power policy");
}

} // namespace fedpower
