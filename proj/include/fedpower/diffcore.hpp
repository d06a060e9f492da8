#pragma once

// Dense row-major tensors and a tape-based reverse-mode gradient engine.
// Everything is 2-D (scalars are 1x1, vectors are n x 1 or 1 x n), which is
// all the GCN, MLP, classifier and Lagrangian terms need.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fedpower/error.hpp"

namespace fedpower {

struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    [[nodiscard]] constexpr std::size_t size() const noexcept { return rows * cols; }
    [[nodiscard]] constexpr bool is_scalar() const noexcept { return rows == 1 && cols == 1; }
    friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(Shape s) {
    std::ostringstream os;
    os << "[" << s.rows << "x" << s.cols << "]";
    return os.str();
}

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), values_(shape.size(), fill) {}

    Tensor(Shape shape, std::vector<double> values) : shape_(shape), values_(std::move(values)) {
        if (values_.size() != shape_.size()) {
            throw ShapeError("tensor of shape " + to_string(shape_) + " given " +
                             std::to_string(values_.size()) + " values");
        }
    }

    static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

    static Tensor column(std::vector<double> v) {
        const Shape s{v.size(), 1};
        return Tensor(s, std::move(v));
    }

    static Tensor row(std::vector<double> v) {
        const Shape s{1, v.size()};
        return Tensor(s, std::move(v));
    }

    [[nodiscard]] Shape shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rows() const noexcept { return shape_.rows; }
    [[nodiscard]] std::size_t cols() const noexcept { return shape_.cols; }
    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }

    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
    [[nodiscard]] std::span<double> values() noexcept { return values_; }
    [[nodiscard]] const std::vector<double>& data() const noexcept { return values_; }

    double& operator()(std::size_t i, std::size_t j) { return values_[i * shape_.cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return values_[i * shape_.cols + j]; }
    double& operator[](std::size_t k) { return values_[k]; }
    double operator[](std::size_t k) const { return values_[k]; }

    [[nodiscard]] double item() const {
        if (!shape_.is_scalar()) throw ShapeError("item() on non-scalar " + to_string(shape_));
        return values_[0];
    }

    /// Gradient buffer; populated by Tape::grad for trainable leaves.
    std::optional<std::vector<double>> grad;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.values_ == b.values_;
    }

private:
    Shape shape_{};
    std::vector<double> values_;
};

namespace detail {

// out[m x n] += a[m x k] * b[k x n]
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                    double* out) {
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

// out[m x k] += g[m x n] * b[k x n]^T
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* g, const double* b,
                    double* out) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            out[i * k + p] += acc;
        }
    }
}

// out[k x n] += a[m x k]^T * g[m x n]
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* g,
                    double* out) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            double* orow = out + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
        }
    }
}

} // namespace detail

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;
};

/// Records operations in execution order; reverse index order is a valid
/// reverse topological order. Single-threaded; one tape per independent
/// forward pass.
class Tape {
public:
    using BackwardRule = std::function<void(Tape&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = delete;
    Tape& operator=(Tape&&) = delete;

    Var constant(Tensor t) { return push(std::move(t), false, {}); }

    /// Leaf whose gradient is reported after backward().
    Var parameter(const Tensor& t) { return push(Tensor(t.shape(), t.data()), true, {}); }

    Var record(Tensor value, BackwardRule rule) { return push(std::move(value), false, std::move(rule)); }

    [[nodiscard]] const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    [[nodiscard]] const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    [[nodiscard]] std::vector<double>& grad_buffer(std::size_t id) { return nodes_[id].grad; }
    [[nodiscard]] const std::vector<double>& grad_buffer(std::size_t id) const { return nodes_[id].grad; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] bool has_gradients() const noexcept { return backward_done_; }

    void backward(Var loss) {
        if (nodes_.empty() || loss.tape != this || loss.id >= nodes_.size()) {
            throw StateError("backward called before any forward pass was recorded");
        }
        if (!nodes_[loss.id].value.shape().is_scalar()) {
            throw ShapeError("backward requires a scalar loss, got " +
                             to_string(nodes_[loss.id].value.shape()));
        }
        for (auto& n : nodes_) n.grad.assign(n.value.size(), 0.0);
        nodes_[loss.id].grad[0] = 1.0;
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            if (nodes_[i].rule) nodes_[i].rule(*this);
        }
        backward_done_ = true;
    }

    /// d(loss)/d(v) after backward(); zero for tensors the loss does not reach.
    [[nodiscard]] Tensor grad(Var v) const {
        if (!backward_done_) throw StateError("gradient requested before backward()");
        return Tensor(nodes_.at(v.id).value.shape(), nodes_.at(v.id).grad);
    }

    /// Copies the gradient into the tensor's grad buffer.
    void export_grad(Var v, Tensor& into) const {
        if (!backward_done_) throw StateError("gradient requested before backward()");
        if (into.shape() != nodes_.at(v.id).value.shape()) {
            throw ShapeError("grad export shape mismatch " + to_string(into.shape()) + " vs " +
                             to_string(nodes_.at(v.id).value.shape()));
        }
        into.grad = nodes_.at(v.id).grad;
    }

    [[nodiscard]] bool trainable(Var v) const { return nodes_.at(v.id).trainable; }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        bool trainable = false;
        BackwardRule rule;
    };

    Var push(Tensor t, bool trainable, BackwardRule rule) {
        nodes_.push_back(Node{std::move(t), {}, trainable, std::move(rule)});
        backward_done_ = false;
        return Var{this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

namespace detail {

inline Tape& same_tape(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) throw StateError("operands recorded on different tapes");
    return *a.tape;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
}

template <class F>
Var unary_elementwise(Var a, F&& value_and_slope) {
    Tape& tape = *a.tape;
    const Tensor& x = tape.value(a);
    Tensor out(x.shape());
    std::vector<double> slope(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        auto [v, d] = value_and_slope(x[k]);
        out[k] = v;
        slope[k] = d;
    }
    const std::size_t in = a.id;
    const std::size_t self = tape.size();
    return tape.record(std::move(out), [in, self, slope = std::move(slope)](Tape& t) {
        const auto& g = t.grad_buffer(self);
        auto& gi = t.grad_buffer(in);
        for (std::size_t k = 0; k < g.size(); ++k) gi[k] += g[k] * slope[k];
    });
}

} // namespace detail

inline Var matmul(Var a, Var b) {
    Tape& tape = detail::same_tape(a, b);
    const Tensor& x = tape.value(a);
    const Tensor& y = tape.value(b);
    if (x.cols() != y.rows()) {
        throw ShapeError("matmul: inner dimensions disagree " + to_string(x.shape()) + " * " +
                         to_string(y.shape()));
    }
    const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
    Tensor out({m, n});
    detail::gemm_nn(m, k, n, x.values().data(), y.values().data(), out.values().data());
    const std::size_t ia = a.id, ib = b.id, self = tape.size();
    return tape.record(std::move(out), [ia, ib, self, m, k, n](Tape& t) {
        const auto& g = t.grad_buffer(self);
        detail::gemm_nt(m, n, k, g.data(), t.value(ib).values().data(), t.grad_buffer(ia).data());
        detail::gemm_tn(m, k, n, t.value(ia).values().data(), g.data(), t.grad_buffer(ib).data());
    });
}

inline Var add(Var a, Var b) {
    Tape& tape = detail::same_tape(a, b);
    const Tensor& x = tape.value(a);
    const Tensor& y = tape.value(b);
    detail::require_same_shape(x, y, "add");
    Tensor out(x.shape());
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] + y[k];
    const std::size_t ia = a.id, ib = b.id, self = tape.size();
    return tape.record(std::move(out), [ia, ib, self](Tape& t) {
        const auto& g = t.grad_buffer(self);
        auto& ga = t.grad_buffer(ia);
        auto& gb = t.grad_buffer(ib);
        for (std::size_t k = 0; k < g.size(); ++k) {
            ga[k] += g[k];
            gb[k] += g[k];
        }
    });
}

/// a[n x c] + b[1 x c] broadcast over rows (bias add).
inline Var add_row(Var a, Var b) {
    Tape& tape = detail::same_tape(a, b);
    const Tensor& x = tape.value(a);
    const Tensor& y = tape.value(b);
    if (y.rows() != 1 || y.cols() != x.cols()) {
        throw ShapeError("add_row: cannot broadcast " + to_string(y.shape()) + " over " +
                         to_string(x.shape()));
    }
    Tensor out(x.shape());
    const std::size_t r = x.rows(), c = x.cols();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out(i, j) = x(i, j) + y[j];
    const std::size_t ia = a.id, ib = b.id, self = tape.size();
    return tape.record(std::move(out), [ia, ib, self, r, c](Tape& t) {
        const auto& g = t.grad_buffer(self);
        auto& ga = t.grad_buffer(ia);
        auto& gb = t.grad_buffer(ib);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                ga[i * c + j] += g[i * c + j];
                gb[j] += g[i * c + j];
            }
    });
}

inline Var sub(Var a, Var b) {
    Tape& tape = detail::same_tape(a, b);
    const Tensor& x = tape.value(a);
    const Tensor& y = tape.value(b);
    detail::require_same_shape(x, y, "sub");
    Tensor out(x.shape());
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] - y[k];
    const std::size_t ia = a.id, ib = b.id, self = tape.size();
    return tape.record(std::move(out), [ia, ib, self](Tape& t) {
        const auto& g = t.grad_buffer(self);
        auto& ga = t.grad_buffer(ia);
        auto& gb = t.grad_buffer(ib);
        for (std::size_t k = 0; k < g.size(); ++k) {
            ga[k] += g[k];
            gb[k] -= g[k];
        }
    });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
    Tape& tape = detail::same_tape(a, b);
    const Tensor& x = tape.value(a);
    const Tensor& y = tape.value(b);
    detail::require_same_shape(x, y, "mul");
    Tensor out(x.shape());
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] * y[k];
    const std::size_t ia = a.id, ib = b.id, self = tape.size();
    return tape.record(std::move(out), [ia, ib, self](Tape& t) {
        const auto& g = t.grad_buffer(self);
        const auto& xv = t.value(ia);
        const auto& yv = t.value(ib);
        auto& ga = t.grad_buffer(ia);
        auto& gb = t.grad_buffer(ib);
        for (std::size_t k = 0; k < g.size(); ++k) {
            ga[k] += g[k] * yv[k];
            gb[k] += g[k] * xv[k];
        }
    });
}

/// Elementwise quotient.
inline Var div(Var a, Var b) {
    Tape& tape = detail::same_tape(a, b);
    const Tensor& x = tape.value(a);
    const Tensor& y = tape.value(b);
    detail::require_same_shape(x, y, "div");
    Tensor out(x.shape());
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] / y[k];
    const std::size_t ia = a.id, ib = b.id, self = tape.size();
    return tape.record(std::move(out), [ia, ib, self](Tape& t) {
        const auto& g = t.grad_buffer(self);
        const auto& xv = t.value(ia);
        const auto& yv = t.value(ib);
        auto& ga = t.grad_buffer(ia);
        auto& gb = t.grad_buffer(ib);
        for (std::size_t k = 0; k < g.size(); ++k) {
            ga[k] += g[k] / yv[k];
            gb[k] -= g[k] * xv[k] / (yv[k] * yv[k]);
        }
    });
}

inline Var scale(Var a, double c) {
    return detail::unary_elementwise(a, [c](double x) { return std::pair{c * x, c}; });
}

inline Var add_scalar(Var a, double c) {
    return detail::unary_elementwise(a, [c](double x) { return std::pair{x + c, 1.0}; });
}

inline Var log1p(Var a) {
    return detail::unary_elementwise(a, [](double x) { return std::pair{std::log1p(x), 1.0 / (1.0 + x)}; });
}

/// exp(-m / x) for x > 0 and its limit 0 at x <= 0 (zero slope there too).
inline Var exp_neg_reciprocal(Var a, double m) {
    return detail::unary_elementwise(a, [m](double x) {
        if (!(x > 0.0)) return std::pair{0.0, 0.0};
        const double e = std::exp(-m / x);
        if (e == 0.0) return std::pair{0.0, 0.0};
        return std::pair{e, (e * m / x) / x};
    });
}

struct Activation {
    enum class Kind { elu, sigmoid_scaled, tanh, identity };
    Kind kind = Kind::identity;
    double scale = 1.0; // output scale c of sigmoid_scaled

    static constexpr Activation elu() { return {Kind::elu, 1.0}; }
    static constexpr Activation tanh() { return {Kind::tanh, 1.0}; }
    static constexpr Activation identity() { return {Kind::identity, 1.0}; }
    static constexpr Activation sigmoid_scaled(double c) { return {Kind::sigmoid_scaled, c}; }
};

/// Value and derivative of a scalar activation.
inline std::pair<double, double> activate(double x, Activation act) {
    switch (act.kind) {
    case Activation::Kind::elu:
        if (x >= 0.0) return {x, 1.0};
        return {std::expm1(x), std::exp(x)};
    case Activation::Kind::sigmoid_scaled: {
        // c / (1 + e^-x), evaluated without overflow on either tail
        double s;
        if (x >= 0.0) {
            s = 1.0 / (1.0 + std::exp(-x));
        } else {
            const double e = std::exp(x);
            s = e / (1.0 + e);
        }
        return {act.scale * s, act.scale * s * (1.0 - s)};
    }
    case Activation::Kind::tanh: {
        const double t = std::tanh(x);
        return {t, 1.0 - t * t};
    }
    case Activation::Kind::identity:
        break;
    }
    return {x, 1.0};
}

inline Var activation(Var a, Activation act) {
    if (act.kind == Activation::Kind::sigmoid_scaled && !(act.scale > 0.0)) {
        throw ConfigError("sigmoid_scaled requires a positive scale");
    }
    for (double x : a.tape->value(a).values()) {
        if (!std::isfinite(x)) throw NumericError("non-finite activation input");
    }
    return detail::unary_elementwise(a, [act](double x) { return activate(x, act); });
}

inline Var sum(Var a) {
    Tape& tape = *a.tape;
    const Tensor& x = tape.value(a);
    double s = 0.0;
    for (double v : x.values()) s += v;
    const std::size_t ia = a.id, self = tape.size();
    return tape.record(Tensor::scalar(s), [ia, self](Tape& t) {
        const double g = t.grad_buffer(self)[0];
        for (double& gi : t.grad_buffer(ia)) gi += g;
    });
}

/// Σ w_k a_k with constant weights (same element count as a).
inline Var weighted_sum(Var a, std::span<const double> w) {
    Tape& tape = *a.tape;
    const Tensor& x = tape.value(a);
    if (w.size() != x.size()) {
        throw ShapeError("weighted_sum: " + std::to_string(w.size()) + " weights for tensor " +
                         to_string(x.shape()));
    }
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += w[k] * x[k];
    const std::size_t ia = a.id, self = tape.size();
    return tape.record(Tensor::scalar(s), [ia, self, wv = std::vector<double>(w.begin(), w.end())](Tape& t) {
        const double g = t.grad_buffer(self)[0];
        auto& gi = t.grad_buffer(ia);
        for (std::size_t k = 0; k < gi.size(); ++k) gi[k] += g * wv[k];
    });
}

/// Column j of a as an (rows x 1) tensor.
inline Var column(Var a, std::size_t j) {
    Tape& tape = *a.tape;
    const Tensor& x = tape.value(a);
    if (j >= x.cols()) throw IndexError("column " + std::to_string(j) + " of " + to_string(x.shape()));
    const std::size_t r = x.rows(), c = x.cols();
    Tensor out({r, 1});
    for (std::size_t i = 0; i < r; ++i) out[i] = x(i, j);
    const std::size_t ia = a.id, self = tape.size();
    return tape.record(std::move(out), [ia, self, r, c, j](Tape& t) {
        const auto& g = t.grad_buffer(self);
        auto& gi = t.grad_buffer(ia);
        for (std::size_t i = 0; i < r; ++i) gi[i * c + j] += g[i];
    });
}

/// Row i of a, returned as a (cols x 1) column.
inline Var row_as_column(Var a, std::size_t i) {
    Tape& tape = *a.tape;
    const Tensor& x = tape.value(a);
    if (i >= x.rows()) throw IndexError("row " + std::to_string(i) + " of " + to_string(x.shape()));
    const std::size_t c = x.cols();
    Tensor out({c, 1});
    for (std::size_t j = 0; j < c; ++j) out[j] = x(i, j);
    const std::size_t ia = a.id, self = tape.size();
    return tape.record(std::move(out), [ia, self, c, i](Tape& t) {
        const auto& g = t.grad_buffer(self);
        auto& gi = t.grad_buffer(ia);
        for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += g[j];
    });
}

/// Mean over rows of -log softmax(logits)[label].
inline Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    Tape& tape = *logits.tape;
    const Tensor& z = tape.value(logits);
    const std::size_t n = z.rows(), c = z.cols();
    if (labels.size() != n) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         to_string(z.shape()));
    }
    std::vector<double> probs(n * c);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
            throw IndexError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) + ")");
        }
        std::size_t arg = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (z(i, j) > z(i, arg)) arg = j;
        const double mx = z(i, arg);
        // log of 1 + the remaining terms, exact for saturated rows
        double rest = 0.0;
        for (std::size_t j = 0; j < c; ++j)
            if (j != arg) rest += std::exp(z(i, j) - mx);
        const double log_denom = std::log1p(rest);
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(z(i, j) - mx - log_denom);
        loss -= z(i, static_cast<std::size_t>(labels[i])) - mx - log_denom;
    }
    loss /= static_cast<double>(n);
    const std::size_t ia = logits.id, self = tape.size();
    return tape.record(Tensor::scalar(loss), [ia, self, n, c, probs = std::move(probs),
                                              lab = std::vector<int>(labels.begin(), labels.end())](Tape& t) {
        const double g = t.grad_buffer(self)[0] / static_cast<double>(n);
        auto& gi = t.grad_buffer(ia);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                const double onehot = (static_cast<int>(j) == lab[i]) ? 1.0 : 0.0;
                gi[i * c + j] += g * (probs[i * c + j] - onehot);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Adam

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;
};

/// One bias-corrected Adam descent step. Pass negated gradients to ascend.
inline void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state,
                      const AdamOptions& opt) {
    if (!(opt.lr > 0.0)) throw ConfigError("adam learning rate must be positive");
    if (params.size() != grads.size()) {
        throw ShapeError("adam: " + std::to_string(params.size()) + " params but " +
                         std::to_string(grads.size()) + " grads");
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam: state does not match parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].shape() != grads[i].shape() || state.m[i].size() != params[i].size()) {
            throw ShapeError("adam: shape mismatch at parameter " + std::to_string(i) + ": " +
                             to_string(params[i].shape()) + " vs " + to_string(grads[i].shape()));
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(opt.beta1, t);
    const double bc2 = 1.0 - std::pow(opt.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].values();
        auto g = grads[i].values();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g[k];
            v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            p[k] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
}

} // namespace fedpower
