#pragma once

// Uplink channel realizations, the CSI matrix, and the link quantities
// derived from it (SINR, rate, delay, packet error rate, weighted success).
// Complex arithmetic stays in this header; everything exported to the
// learning code is real.

#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedpower/binary_io.hpp"
#include "fedpower/diffcore.hpp"
#include "fedpower/error.hpp"

namespace fedpower {

inline double dbw_to_watts(double dbw) { return std::pow(10.0, dbw / 10.0); }
inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

/// Returned as the delay of a link with zero rate.
inline constexpr double kInfiniteDelay = std::numeric_limits<double>::infinity();

struct ChannelRealization {
    std::size_t antennas = 0;
    std::size_t workers = 0;
    /// worker-major: raw[j * antennas + a] is antenna a of worker j
    std::vector<std::complex<double>> raw;
    std::vector<double> noise_var;

    [[nodiscard]] std::span<const std::complex<double>> h(std::size_t j) const {
        return std::span(raw).subspan(j * antennas, antennas);
    }
};

struct CSIMatrix {
    std::size_t workers = 0;
    std::vector<double> entries; // row-major L x L
    double interference_scale = 1.0;

    [[nodiscard]] double operator()(std::size_t i, std::size_t j) const { return entries[i * workers + j]; }
    double& operator()(std::size_t i, std::size_t j) { return entries[i * workers + j]; }
    [[nodiscard]] double alpha(std::size_t i) const { return (*this)(i, i); }

    /// Builds directly from a matrix (tests, toy instances). Diagonal must be
    /// positive and all entries nonnegative.
    static CSIMatrix from_entries(std::size_t workers, std::vector<double> entries) {
        if (entries.size() != workers * workers) {
            throw DimensionError("CSI matrix needs " + std::to_string(workers * workers) + " entries, got " +
                                 std::to_string(entries.size()));
        }
        CSIMatrix h{workers, std::move(entries), 1.0};
        for (std::size_t i = 0; i < workers; ++i) {
            for (std::size_t j = 0; j < workers; ++j) {
                if (!(h(i, j) >= 0.0) || !std::isfinite(h(i, j))) throw DomainError("CSI entries must be finite and >= 0");
            }
            if (!(h.alpha(i) > 0.0)) throw DegenerateError("CSI diagonal must be strictly positive");
        }
        return h;
    }
};

struct LinkMetrics {
    std::vector<double> sinr;
    std::vector<double> rate;  // b/s
    std::vector<double> per;
    std::vector<double> delay; // s, kInfiniteDelay when rate is 0
};

struct ChannelModel {
    std::size_t workers = 8;
    std::size_t antennas = 10;
    /// Standard deviation of the per-worker log-normal gain in dB.
    double pathloss_spread_db = 8.0;
    /// Median per-antenna gain in dB relative to unit noise power.
    double mean_gain_db = 30.0;
};

/// Mean of ‖h_j‖²/n_R under the generator's distribution.
inline double expected_mean_gain(const ChannelModel& model) {
    const double sigma_ln = model.pathloss_spread_db * std::log(10.0) / 10.0;
    return db_to_linear(model.mean_gain_db) * std::exp(0.5 * sigma_ln * sigma_ln);
}

/// One realization, seeded by (seed, index) so disjoint index ranges can be
/// generated independently.
inline ChannelRealization generate_channel(const ChannelModel& model, std::uint64_t seed, std::uint64_t index) {
    if (model.workers < 1 || model.antennas < 1) throw ConfigError("channel model needs L >= 1 and n_R >= 1");
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x43484e4cu};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> gauss(0.0, 1.0);

    ChannelRealization ch;
    ch.antennas = model.antennas;
    ch.workers = model.workers;
    ch.raw.resize(model.antennas * model.workers);
    ch.noise_var.assign(model.workers, 1.0);
    const double component_sd = std::sqrt(0.5);
    for (std::size_t j = 0; j < model.workers; ++j) {
        const double gain_db = model.mean_gain_db + model.pathloss_spread_db * gauss(rng);
        const double amp = std::sqrt(db_to_linear(gain_db));
        for (std::size_t a = 0; a < model.antennas; ++a) {
            const double re = component_sd * gauss(rng);
            const double im = component_sd * gauss(rng);
            ch.raw[j * model.antennas + a] = amp * std::complex<double>(re, im);
        }
    }
    return ch;
}

inline std::vector<ChannelRealization> generate_channels(std::size_t count, const ChannelModel& model,
                                                         std::uint64_t seed, std::uint64_t first_index = 0) {
    if (count < 1) throw ConfigError("channel count must be >= 1");
    std::vector<ChannelRealization> out;
    out.reserve(count);
    for (std::size_t r = 0; r < count; ++r) out.push_back(generate_channel(model, seed, first_index + r));
    return out;
}

inline std::vector<ChannelRealization> generate_channels(std::size_t count, std::size_t workers,
                                                         std::size_t antennas, std::uint64_t seed,
                                                         double pathloss_spread_db) {
    ChannelModel model;
    model.workers = workers;
    model.antennas = antennas;
    model.pathloss_spread_db = pathloss_spread_db;
    return generate_channels(count, model, seed);
}

inline CSIMatrix build_csi(const ChannelRealization& ch, double interference_scale = 1.0) {
    if (!(interference_scale > 0.0)) throw DomainError("interference scale must be positive");
    const std::size_t L = ch.workers;
    CSIMatrix H{L, std::vector<double>(L * L, 0.0), interference_scale};
    std::vector<double> norm2(L, 0.0);
    for (std::size_t i = 0; i < L; ++i) {
        for (const auto& z : ch.h(i)) norm2[i] += std::norm(z);
        if (!(norm2[i] > 0.0) || !std::isfinite(norm2[i])) {
            throw DegenerateError("channel vector of worker " + std::to_string(i) + " is zero or non-finite");
        }
        if (!(ch.noise_var[i] > 0.0)) throw DegenerateError("noise variance must be positive");
    }
    for (std::size_t i = 0; i < L; ++i) {
        const auto hi = ch.h(i);
        H(i, i) = norm2[i] / ch.noise_var[i];
        for (std::size_t j = 0; j < L; ++j) {
            if (j == i) continue;
            const auto hj = ch.h(j);
            std::complex<double> inner{};
            for (std::size_t a = 0; a < ch.antennas; ++a) inner += std::conj(hi[a]) * hj[a];
            H(i, j) = interference_scale * std::norm(inner) / (ch.noise_var[i] * norm2[i]);
        }
    }
    return H;
}

namespace detail {

inline void check_powers(std::span<const double> p, const CSIMatrix& H) {
    if (p.size() != H.workers) {
        throw DimensionError("power vector of length " + std::to_string(p.size()) + " for " +
                             std::to_string(H.workers) + " workers");
    }
    for (double v : p) {
        if (!(v >= 0.0)) throw DomainError("transmit powers must be nonnegative");
    }
}

} // namespace detail

inline std::vector<double> sinr(std::span<const double> p, const CSIMatrix& H) {
    detail::check_powers(p, H);
    const std::size_t L = H.workers;
    std::vector<double> out(L);
    for (std::size_t i = 0; i < L; ++i) {
        double interference = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
            if (j != i) interference += H(i, j) * p[j];
        }
        out[i] = H.alpha(i) * p[i] / (1.0 + interference);
    }
    return out;
}

inline double per_from_sinr(double s, double m) {
    if (!(s > 0.0)) return 1.0;
    return -std::expm1(-m / s);
}

inline std::vector<double> per(std::span<const double> p, const CSIMatrix& H, double m) {
    if (!(m > 0.0)) throw DomainError("waterfall threshold must be positive");
    auto s = sinr(p, H);
    for (double& v : s) v = per_from_sinr(v, m);
    return s;
}

struct RateDelay {
    std::vector<double> rate;
    std::vector<double> delay;
};

inline RateDelay rate_and_delay(std::span<const double> p, const CSIMatrix& H, double bandwidth_hz,
                                double payload_bits) {
    if (!(bandwidth_hz > 0.0) || !(payload_bits > 0.0)) throw DomainError("bandwidth and payload must be positive");
    const auto s = sinr(p, H);
    RateDelay out{std::vector<double>(s.size()), std::vector<double>(s.size())};
    for (std::size_t i = 0; i < s.size(); ++i) {
        out.rate[i] = bandwidth_hz * std::log1p(s[i]);
        out.delay[i] = out.rate[i] > 0.0 ? payload_bits / out.rate[i] : kInfiniteDelay;
    }
    return out;
}

inline LinkMetrics link_metrics(std::span<const double> p, const CSIMatrix& H, double m, double bandwidth_hz,
                                double payload_bits) {
    LinkMetrics out;
    out.sinr = sinr(p, H);
    auto rd = rate_and_delay(p, H, bandwidth_hz, payload_bits);
    out.rate = std::move(rd.rate);
    out.delay = std::move(rd.delay);
    out.per.resize(out.sinr.size());
    for (std::size_t i = 0; i < out.sinr.size(); ++i) out.per[i] = per_from_sinr(out.sinr[i], m);
    return out;
}

inline double weighted_success(std::span<const double> success, std::span<const double> weights) {
    if (success.size() != weights.size()) throw DimensionError("weighted_success: length mismatch");
    double g = 0.0;
    for (std::size_t i = 0; i < success.size(); ++i) {
        if (weights[i] < 0.0) throw DomainError("weights must be nonnegative");
        g += weights[i] * success[i];
    }
    return g;
}

// ---------------------------------------------------------------------------
// Differentiable versions. Powers are an (L x 1) column on the tape.

inline Var sinr(Var p, const CSIMatrix& H) {
    Tape& tape = *p.tape;
    const Tensor& pv = tape.value(p);
    if (pv.shape() != Shape{H.workers, 1}) {
        throw DimensionError("power column " + to_string(pv.shape()) + " for " + std::to_string(H.workers) +
                             " workers");
    }
    for (double v : pv.values()) {
        if (!(v >= 0.0)) throw DomainError("transmit powers must be nonnegative");
    }
    const std::size_t L = H.workers;
    Tensor cross({L, L});
    Tensor alpha({L, 1});
    for (std::size_t i = 0; i < L; ++i) {
        alpha[i] = H.alpha(i);
        for (std::size_t j = 0; j < L; ++j) cross(i, j) = (i == j) ? 0.0 : H(i, j);
    }
    const Var signal = mul(tape.constant(std::move(alpha)), p);
    const Var noise_plus_interference = add_scalar(matmul(tape.constant(std::move(cross)), p), 1.0);
    return div(signal, noise_plus_interference);
}

/// 1 - PER, i.e. exp(-m / sinr), with value 0 at sinr = 0.
inline Var success_probability(Var sinr_col, double m) {
    if (!(m > 0.0)) throw DomainError("waterfall threshold must be positive");
    return exp_neg_reciprocal(sinr_col, m);
}

inline Var rate(Var sinr_col, double bandwidth_hz) { return scale(log1p(sinr_col), bandwidth_hz); }

inline Var weighted_success(Var success, std::span<const double> weights) { return weighted_sum(success, weights); }

// ---------------------------------------------------------------------------
// Persistence

inline constexpr std::string_view kChannelMagic = "FPCHAN01";

inline void write_channels(std::ostream& os, std::span<const ChannelRealization> channels) {
    const std::size_t L = channels.empty() ? 0 : channels.front().workers;
    const std::size_t nr = channels.empty() ? 0 : channels.front().antennas;
    os.write(kChannelMagic.data(), static_cast<std::streamsize>(kChannelMagic.size()));
    binary::put_u32_le(os, static_cast<std::uint32_t>(channels.size()));
    binary::put_u32_le(os, static_cast<std::uint32_t>(L));
    binary::put_u32_le(os, static_cast<std::uint32_t>(nr));
    for (const auto& ch : channels) {
        if (ch.workers != L || ch.antennas != nr) throw DimensionError("channel dataset with mixed dimensions");
        for (const auto& z : ch.raw) {
            binary::put_f64_le(os, z.real());
            binary::put_f64_le(os, z.imag());
        }
    }
}

inline void write_channels(const std::string& path, std::span<const ChannelRealization> channels) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");
    write_channels(os, channels);
}

/// Noise variances are not stored; loaded realizations use the normalized σ² = 1.
inline std::vector<ChannelRealization> read_channels(std::istream& is) {
    binary::expect_magic(is, kChannelMagic, "channel dataset");
    const auto count = binary::get_u32_le(is, "channel header");
    const auto L = binary::get_u32_le(is, "channel header");
    const auto nr = binary::get_u32_le(is, "channel header");
    std::vector<ChannelRealization> out;
    out.reserve(count);
    for (std::uint32_t r = 0; r < count; ++r) {
        ChannelRealization ch;
        ch.workers = L;
        ch.antennas = nr;
        ch.noise_var.assign(L, 1.0);
        ch.raw.resize(static_cast<std::size_t>(L) * nr);
        for (auto& z : ch.raw) {
            const double re = binary::get_f64_le(is, "channel payload");
            const double im = binary::get_f64_le(is, "channel payload");
            z = {re, im};
        }
        out.push_back(std::move(ch));
    }
    return out;
}

inline std::vector<ChannelRealization> read_channels(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path);
    return read_channels(is);
}

/// One row per realization holding row-major H.
inline void write_csi_csv(std::ostream& os, std::span<const CSIMatrix> csi) {
    if (csi.empty()) return;
    const std::size_t L = csi.front().workers;
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) os << (i + j ? "," : "") << "h_" << i << "_" << j;
    os << "\n" << std::setprecision(17);
    for (const auto& H : csi) {
        for (std::size_t k = 0; k < H.entries.size(); ++k) os << (k ? "," : "") << H.entries[k];
        os << "\n";
    }
}

} // namespace fedpower
