#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library's own formula code.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace oracle {

/// Central difference of f around x, perturbing every entry in turn.
inline std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                             std::vector<double> x, double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double x0 = x[k];
        x[k] = x0 + h;
        const double up = f(x);
        x[k] = x0 - h;
        const double down = f(x);
        x[k] = x0;
        g[k] = (up - down) / (2 * h);
    }
    return g;
}

/// max_k |a_k - b_k| / max(|a_k|, |b_k|, floor).
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double scale = std::max({std::abs(a[k]), std::abs(b[k]), floor});
        worst = std::max(worst, std::abs(a[k] - b[k]) / scale);
    }
    return worst;
}

inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                  std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t) s += a[i * k + t] * b[t * n + j];
            c[i * n + j] = s;
        }
    return c;
}

/// CSI entries straight from the definition, row-major.
inline std::vector<double> csi(const std::vector<std::vector<std::complex<double>>>& h,
                               const std::vector<double>& noise, double scale) {
    const std::size_t L = h.size();
    std::vector<double> H(L * L);
    for (std::size_t i = 0; i < L; ++i) {
        double ni = 0.0;
        for (auto z : h[i]) ni += z.real() * z.real() + z.imag() * z.imag();
        for (std::size_t j = 0; j < L; ++j) {
            if (i == j) {
                H[i * L + j] = ni / noise[i];
                continue;
            }
            double re = 0.0, im = 0.0;
            for (std::size_t a = 0; a < h[i].size(); ++a) {
                // conj(h_i[a]) * h_j[a]
                re += h[i][a].real() * h[j][a].real() + h[i][a].imag() * h[j][a].imag();
                im += h[i][a].real() * h[j][a].imag() - h[i][a].imag() * h[j][a].real();
            }
            H[i * L + j] = scale * (re * re + im * im) / (noise[i] * ni);
        }
    }
    return H;
}

inline std::vector<double> sinr(const std::vector<double>& H, const std::vector<double>& p) {
    const std::size_t L = p.size();
    std::vector<double> s(L);
    for (std::size_t i = 0; i < L; ++i) {
        double interference = 1.0;
        for (std::size_t j = 0; j < L; ++j)
            if (j != i) interference += H[i * L + j] * p[j];
        s[i] = H[i * L + i] * p[i] / interference;
    }
    return s;
}

// 1 - e^{-x} by its series when small, where the direct subtraction cancels
inline double per(double sinr, double m) {
    if (sinr <= 0.0) return 1.0;
    const double x = m / sinr;
    if (x >= 0.5) return 1.0 - std::exp(-x);
    double term = x, sum = 0.0;
    for (int k = 1; std::abs(term) > 1e-18 * std::abs(sum) || k == 1; ++k) {
        sum += term;
        term *= -x / (k + 1);
    }
    return sum;
}

// ln(1 + s), series when small
inline double log_one_plus(double s) {
    if (s >= 0.5) return std::log(1.0 + s);
    double term = s, sum = 0.0;
    for (int k = 1; std::abs(term) > 1e-18 * std::abs(sum) || k == 1; ++k) {
        sum += term / k;
        term *= -s;
    }
    return sum;
}

inline std::vector<double> normalized_adjacency(const std::vector<double>& H, std::size_t L) {
    std::vector<double> d(L, 0.0), out(L * L);
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) d[i] += H[i * L + j];
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) out[i * L + j] = H[i * L + j] / std::sqrt(d[i] * d[j]);
    return out;
}

inline double softmax_xent(const std::vector<double>& z, const std::vector<int>& y, std::size_t c) {
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(z[i * c + j]);
        total += -std::log(std::exp(z[i * c + static_cast<std::size_t>(y[i])]) / denom);
    }
    return total / static_cast<double>(y.size());
}

/// Directory holding train-/t10k- IDX files, or empty.
inline std::string mnist_dir() {
    const char* d = std::getenv("FEDPOWER_MNIST_DIR");
    return d ? std::string(d) : std::string();
}

} // namespace oracle
