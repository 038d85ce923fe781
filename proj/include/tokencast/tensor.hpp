#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tokencast/errors.hpp"
#include "tokencast/rng.hpp"

// Dense float32 tensors with reverse-mode differentiation. Storage is
// 32-bit; every reduction (matmul inner products, means, variances,
// log-sum-exp) accumulates in 64-bit so that finite-difference gradient
// checks hold at tight tolerances. Ops executed against a Tape record a
// backward closure; Tape::backward replays them in reverse. A tape and the
// tensors it created belong to one logical thread; tensors that only hold
// frozen parameters may be shared read-only across threads.

namespace tokencast {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // same length as data iff requires_grad
    bool requires_grad = false;
};

// Dot product of two float ranges accumulated in four independent double
// chains; the split order is fixed, so results are deterministic.
inline double dot_acc(const float* a, const float* b, std::int64_t n) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += static_cast<double>(a[i]) * b[i];
        s1 += static_cast<double>(a[i + 1]) * b[i + 1];
        s2 += static_cast<double>(a[i + 2]) * b[i + 2];
        s3 += static_cast<double>(a[i + 3]) * b[i + 3];
    }
    for (; i < n; ++i) s0 += static_cast<double>(a[i]) * b[i];
    return (s0 + s1) + (s2 + s3);
}

// c = a[m x k] * b[k x n]
inline void mm_store(const float* a, const float* b, float* c, std::int64_t m,
                     std::int64_t k, std::int64_t n) {
    std::vector<double> acc(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const float* arow = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const float* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) acc[j] += av * brow[j];
        }
        float* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[j]);
    }
}

// c += a[m x k] * b[k x n]
inline void mm_add(const float* a, const float* b, float* c, std::int64_t m,
                   std::int64_t k, std::int64_t n) {
    std::vector<double> acc(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const float* arow = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const float* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) acc[j] += av * brow[j];
        }
        float* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] += static_cast<float>(acc[j]);
    }
}

// c = a[m x d] * b[n x d]^T, rows of both operands are contiguous.
inline void mm_nt_store(const float* a, const float* b, float* c, std::int64_t m,
                        std::int64_t d, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            c[i * n + j] = static_cast<float>(dot_acc(a + i * d, b + j * d, d));
}

// c += a[m x d] * b[n x d]^T
inline void mm_nt_add(const float* a, const float* b, float* c, std::int64_t m,
                      std::int64_t d, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            c[i * n + j] += static_cast<float>(dot_acc(a + i * d, b + j * d, d));
}

// c += a[m x k]^T * g[m x n]
inline void mm_tn_add(const float* a, const float* g, float* c, std::int64_t m,
                      std::int64_t k, std::int64_t n) {
    std::vector<double> acc(static_cast<std::size_t>(k * n), 0.0);
    for (std::int64_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        const float* grow = g + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = acc.data() + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
    for (std::int64_t i = 0; i < k * n; ++i) c[i] += static_cast<float>(acc[i]);
}

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto impl = std::make_shared<detail::TensorImpl>();
        impl->shape = std::move(shape);
        impl->data.assign(static_cast<std::size_t>(numel_of(impl->shape)), 0.0f);
        impl->requires_grad = requires_grad;
        if (requires_grad) impl->grad.assign(impl->data.size(), 0.0f);
        return Tensor(std::move(impl));
    }

    static Tensor full(Shape shape, float value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
        return t;
    }

    static Tensor ones(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), 1.0f, requires_grad);
    }

    static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false) {
        if (static_cast<std::int64_t>(values.size()) != numel_of(shape))
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not fill shape " + shape_str(shape));
        auto impl = std::make_shared<detail::TensorImpl>();
        impl->shape = std::move(shape);
        impl->data = std::move(values);
        impl->requires_grad = requires_grad;
        if (requires_grad) impl->grad.assign(impl->data.size(), 0.0f);
        return Tensor(std::move(impl));
    }

    static Tensor scalar(float value) { return from({}, {value}); }

    static Tensor randn(Shape shape, Rng& rng, float sd, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.impl_->data) v = static_cast<float>(rng.normal(0.0, sd));
        return t;
    }

    // Tensor is a handle: const applies to the handle, not the storage
    // (same convention as the mainstream tensor libraries).
    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    std::int64_t dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

    float* data() const { return impl_->data.data(); }
    std::span<float> values() const { return impl_->data; }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }

    std::span<float> grad() const { return impl_->grad; }

    void zero_grad() const {
        if (impl_ && impl_->requires_grad)
            std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
    }

    float item() const {
        if (numel() != 1) throw NumericError("item() requires a scalar tensor, got " + shape_str(shape()));
        return impl_->data[0];
    }

    float& at(std::int64_t i) const { return impl_->data[static_cast<std::size_t>(i)]; }
    float& at(std::int64_t r, std::int64_t c) const {
        return impl_->data[static_cast<std::size_t>(r * impl_->shape[1] + c)];
    }

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

    bool same_impl(const Tensor& other) const { return impl_ == other.impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;

    friend class Tape;
};

enum class Mode { kTrain, kEval };

// Execution-ordered record of differentiable ops. Leaf gradients accumulate
// across backward calls; gradients of tensors the tape itself produced are
// reset at the start of each backward pass so a replay is exact.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    static Tape no_grad() { return Tape(false); }

    bool grad_enabled() const { return grad_enabled_; }

    // Registers `out` as a tape-produced tensor and stores its backward step.
    void record(const Tensor& out, std::function<void()> step) {
        outputs_.push_back(out.impl());
        steps_.push_back(std::move(step));
    }

    std::size_t size() const { return steps_.size(); }

    void backward(const Tensor& loss) {
        if (!loss.defined() || loss.numel() != 1)
            throw NumericError("backward requires a scalar loss");
        if (!loss.requires_grad())
            throw NumericError("backward requires a loss with requires_grad");
        for (auto& impl : outputs_)
            if (impl->requires_grad) std::fill(impl->grad.begin(), impl->grad.end(), 0.0f);
        loss.impl()->grad[0] += 1.0f;
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> steps_;
    std::vector<std::shared_ptr<detail::TensorImpl>> outputs_;
    bool grad_enabled_;
};

namespace detail {

inline bool wants_grad(const Tape& tape, std::initializer_list<const Tensor*> ins) {
    if (!tape.grad_enabled()) return false;
    for (const Tensor* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

inline Tensor make_output(Shape shape, bool requires_grad) {
    return Tensor::zeros(std::move(shape), requires_grad);
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
}

inline void check_rank(const Tensor& t, int rank, const char* op) {
    if (t.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
}

}  // namespace detail

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    Tensor out = detail::make_output(a.shape(), detail::wants_grad(tape, {&a, &b}));
    const auto n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) + b.at(i);
    if (out.requires_grad()) {
        tape.record(out, [a, b, out]() mutable {
            const auto m = out.numel();
            if (a.requires_grad())
                for (std::int64_t i = 0; i < m; ++i) a.grad()[i] += out.grad()[i];
            if (b.requires_grad())
                for (std::int64_t i = 0; i < m; ++i) b.grad()[i] += out.grad()[i];
        });
    }
    return out;
}

// x[N x d] + bias[d], broadcast over leading rows.
inline Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
    detail::check_rank(x, 2, "add_bias");
    detail::check_rank(bias, 1, "add_bias");
    if (x.dim(1) != bias.dim(0))
        throw ShapeError("add_bias: " + shape_str(x.shape()) + " vs " + shape_str(bias.shape()));
    const auto rows = x.dim(0), cols = x.dim(1);
    Tensor out = detail::make_output(x.shape(), detail::wants_grad(tape, {&x, &bias}));
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j) out.at(i, j) = x.at(i, j) + bias.at(j);
    if (out.requires_grad()) {
        tape.record(out, [x, bias, out, rows, cols]() mutable {
            if (x.requires_grad())
                for (std::int64_t i = 0; i < rows * cols; ++i) x.grad()[i] += out.grad()[i];
            if (bias.requires_grad()) {
                for (std::int64_t j = 0; j < cols; ++j) {
                    double s = 0;
                    for (std::int64_t i = 0; i < rows; ++i) s += out.grad()[i * cols + j];
                    bias.grad()[j] += static_cast<float>(s);
                }
            }
        });
    }
    return out;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor out = detail::make_output(a.shape(), detail::wants_grad(tape, {&a, &b}));
    const auto n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) * b.at(i);
    if (out.requires_grad()) {
        tape.record(out, [a, b, out]() mutable {
            const auto m = out.numel();
            if (a.requires_grad())
                for (std::int64_t i = 0; i < m; ++i) a.grad()[i] += out.grad()[i] * b.at(i);
            if (b.requires_grad())
                for (std::int64_t i = 0; i < m; ++i) b.grad()[i] += out.grad()[i] * a.at(i);
        });
    }
    return out;
}

inline Tensor scale(Tape& tape, const Tensor& a, float c) {
    Tensor out = detail::make_output(a.shape(), detail::wants_grad(tape, {&a}));
    const auto n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) * c;
    if (out.requires_grad()) {
        tape.record(out, [a, out, c]() mutable {
            const auto m = out.numel();
            for (std::int64_t i = 0; i < m; ++i) a.grad()[i] += out.grad()[i] * c;
        });
    }
    return out;
}

inline Tensor relu(Tape& tape, const Tensor& a) {
    Tensor out = detail::make_output(a.shape(), detail::wants_grad(tape, {&a}));
    const auto n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) > 0.0f ? a.at(i) : 0.0f;
    if (out.requires_grad()) {
        tape.record(out, [a, out]() mutable {
            const auto m = out.numel();
            for (std::int64_t i = 0; i < m; ++i)
                if (a.at(i) > 0.0f) a.grad()[i] += out.grad()[i];
        });
    }
    return out;
}

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::check_rank(a, 2, "matmul");
    detail::check_rank(b, 2, "matmul");
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner dimensions of " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " disagree");
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = detail::make_output({m, n}, detail::wants_grad(tape, {&a, &b}));
    detail::mm_store(a.data(), b.data(), out.data(), m, k, n);
    if (out.requires_grad()) {
        tape.record(out, [a, b, out, m, k, n]() mutable {
            // dA = dC * B^T, dB = A^T * dC
            if (a.requires_grad())
                detail::mm_nt_add(out.grad().data(), b.data(), a.grad().data(), m, n, k);
            if (b.requires_grad())
                detail::mm_tn_add(a.data(), out.grad().data(), b.grad().data(), m, k, n);
        });
    }
    return out;
}

// a[m x d] * b[n x d]^T -> [m x n]
inline Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::check_rank(a, 2, "matmul_nt");
    detail::check_rank(b, 2, "matmul_nt");
    if (a.dim(1) != b.dim(1))
        throw ShapeError("matmul_nt: trailing dimensions of " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " disagree");
    const auto m = a.dim(0), d = a.dim(1), n = b.dim(0);
    Tensor out = detail::make_output({m, n}, detail::wants_grad(tape, {&a, &b}));
    detail::mm_nt_store(a.data(), b.data(), out.data(), m, d, n);
    if (out.requires_grad()) {
        tape.record(out, [a, b, out, m, d, n]() mutable {
            // C = A*B^T: dA = dC * B, dB = dC^T * A
            if (a.requires_grad())
                detail::mm_add(out.grad().data(), b.data(), a.grad().data(), m, n, d);
            if (b.requires_grad())
                detail::mm_tn_add(out.grad().data(), a.data(), b.grad().data(), m, n, d);
        });
    }
    return out;
}

inline Tensor slice_cols(Tape& tape, const Tensor& x, std::int64_t c0, std::int64_t c1) {
    detail::check_rank(x, 2, "slice_cols");
    if (c0 < 0 || c1 <= c0 || c1 > x.dim(1))
        throw ShapeError("slice_cols: [" + std::to_string(c0) + ", " + std::to_string(c1) +
                         ") out of range for " + shape_str(x.shape()));
    const auto rows = x.dim(0), cols = x.dim(1), w = c1 - c0;
    Tensor out = detail::make_output({rows, w}, detail::wants_grad(tape, {&x}));
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < w; ++j) out.at(i, j) = x.at(i, c0 + j);
    if (out.requires_grad()) {
        tape.record(out, [x, out, rows, cols, w, c0]() mutable {
            for (std::int64_t i = 0; i < rows; ++i)
                for (std::int64_t j = 0; j < w; ++j)
                    x.grad()[i * cols + c0 + j] += out.grad()[i * w + j];
        });
    }
    return out;
}

inline Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const auto rows = parts[0].dim(0);
    std::int64_t total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        detail::check_rank(p, 2, "concat_cols");
        if (p.dim(0) != rows)
            throw ShapeError("concat_cols: row counts differ (" + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()) + ")");
        total += p.dim(1);
        rg = rg || p.requires_grad();
    }
    Tensor out = detail::make_output({rows, total}, tape.grad_enabled() && rg);
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const auto w = p.dim(1);
        for (std::int64_t i = 0; i < rows; ++i)
            for (std::int64_t j = 0; j < w; ++j) out.at(i, off + j) = p.at(i, j);
        off += w;
    }
    if (out.requires_grad()) {
        tape.record(out, [parts, out, rows, total]() mutable {
            std::int64_t off2 = 0;
            for (auto& p : parts) {
                const auto w = p.dim(1);
                if (p.requires_grad())
                    for (std::int64_t i = 0; i < rows; ++i)
                        for (std::int64_t j = 0; j < w; ++j)
                            p.grad()[i * w + j] += out.grad()[i * total + off2 + j];
                off2 += w;
            }
        });
    }
    return out;
}

// Row lookup: out[t, :] = table[ids[t], :]
inline Tensor embedding(Tape& tape, const Tensor& table, std::span<const std::int32_t> ids) {
    detail::check_rank(table, 2, "embedding");
    const auto vocab = table.dim(0), d = table.dim(1);
    for (std::size_t t = 0; t < ids.size(); ++t)
        if (ids[t] < 0 || ids[t] >= vocab)
            throw IndexError("embedding id " + std::to_string(ids[t]) + " at position " +
                             std::to_string(t) + " outside [0, " + std::to_string(vocab - 1) + "]");
    const auto rows = static_cast<std::int64_t>(ids.size());
    Tensor out = detail::make_output({rows, d}, detail::wants_grad(tape, {&table}));
    for (std::int64_t t = 0; t < rows; ++t) {
        const float* src = table.data() + static_cast<std::int64_t>(ids[t]) * d;
        std::copy(src, src + d, out.data() + t * d);
    }
    if (out.requires_grad()) {
        std::vector<std::int32_t> idv(ids.begin(), ids.end());
        tape.record(out, [table, out, idv = std::move(idv), d]() mutable {
            for (std::size_t t = 0; t < idv.size(); ++t) {
                float* dst = table.grad().data() + static_cast<std::int64_t>(idv[t]) * d;
                const float* src = out.grad().data() + static_cast<std::int64_t>(t) * d;
                for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

// Per-row normalization over the last axis followed by the affine map
// gain * xhat + bias. Variance is the population variance (divide by d).
inline Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                         float eps = 1e-5f) {
    detail::check_rank(x, 2, "layer_norm");
    detail::check_rank(gain, 1, "layer_norm");
    detail::check_rank(bias, 1, "layer_norm");
    const auto rows = x.dim(0), d = x.dim(1);
    if (gain.dim(0) != d || bias.dim(0) != d)
        throw ShapeError("layer_norm: feature size " + std::to_string(d) + " vs gain " +
                         shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
    Tensor out = detail::make_output(x.shape(), detail::wants_grad(tape, {&x, &gain, &bias}));
    auto xhat = std::make_shared<std::vector<float>>(static_cast<std::size_t>(rows * d));
    auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    for (std::int64_t i = 0; i < rows; ++i) {
        const float* row = x.data() + i * d;
        double mean = 0;
        for (std::int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[static_cast<std::size_t>(i)] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            const float xh = static_cast<float>((row[j] - mean) * is);
            (*xhat)[static_cast<std::size_t>(i * d + j)] = xh;
            out.at(i, j) = xh * gain.at(j) + bias.at(j);
        }
    }
    if (out.requires_grad()) {
        tape.record(out, [x, gain, bias, out, xhat, inv_sigma, rows, d]() mutable {
            for (std::int64_t i = 0; i < rows; ++i) {
                const float* dy = out.grad().data() + i * d;
                const float* xh = xhat->data() + i * d;
                if (gain.requires_grad() || bias.requires_grad()) {
                    for (std::int64_t j = 0; j < d; ++j) {
                        if (gain.requires_grad()) gain.grad()[j] += dy[j] * xh[j];
                        if (bias.requires_grad()) bias.grad()[j] += dy[j];
                    }
                }
                if (x.requires_grad()) {
                    double mean_g = 0, mean_gx = 0;
                    for (std::int64_t j = 0; j < d; ++j) {
                        const double gdy = static_cast<double>(dy[j]) * gain.at(j);
                        mean_g += gdy;
                        mean_gx += gdy * xh[j];
                    }
                    mean_g /= static_cast<double>(d);
                    mean_gx /= static_cast<double>(d);
                    const double is = (*inv_sigma)[static_cast<std::size_t>(i)];
                    for (std::int64_t j = 0; j < d; ++j) {
                        const double gdy = static_cast<double>(dy[j]) * gain.at(j);
                        x.grad()[i * d + j] +=
                            static_cast<float>((gdy - mean_g - xh[j] * mean_gx) * is);
                    }
                }
            }
        });
    }
    return out;
}

// Softmax over the last axis, max-subtracted for stability. Works for any
// rank >= 1; leading axes index independent slices.
inline Tensor softmax(Tape& tape, const Tensor& x) {
    if (x.rank() < 1) throw ShapeError("softmax: needs rank >= 1, got " + shape_str(x.shape()));
    const auto n = x.dim(x.rank() - 1);
    const auto slices = x.numel() / n;
    for (std::int64_t i = 0; i < x.numel(); ++i)
        if (!std::isfinite(x.at(i)))
            throw NumericError("softmax: non-finite input at flat index " + std::to_string(i));
    Tensor out = detail::make_output(x.shape(), detail::wants_grad(tape, {&x}));
    for (std::int64_t s = 0; s < slices; ++s) {
        const float* row = x.data() + s * n;
        float* orow = out.data() + s * n;
        double mx = row[0];
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double z = 0;
        for (std::int64_t j = 0; j < n; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
        for (std::int64_t j = 0; j < n; ++j)
            orow[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / z);
    }
    if (out.requires_grad()) {
        tape.record(out, [x, out, slices, n]() mutable {
            for (std::int64_t s = 0; s < slices; ++s) {
                const float* y = out.data() + s * n;
                const float* dy = out.grad().data() + s * n;
                double dot = 0;
                for (std::int64_t j = 0; j < n; ++j) dot += static_cast<double>(y[j]) * dy[j];
                for (std::int64_t j = 0; j < n; ++j)
                    x.grad()[s * n + j] += static_cast<float>(y[j] * (dy[j] - dot));
            }
        });
    }
    return out;
}

// Row-wise causal softmax of a [T x T] score matrix: row t is a softmax over
// columns 0..t, with zeros to the right. Masked entries never contribute to
// the normalization, so no sentinel -inf values are needed.
inline Tensor softmax_causal(Tape& tape, const Tensor& scores) {
    detail::check_rank(scores, 2, "softmax_causal");
    if (scores.dim(0) != scores.dim(1))
        throw ShapeError("softmax_causal: expected square scores, got " + shape_str(scores.shape()));
    const auto T = scores.dim(0);
    for (std::int64_t i = 0; i < scores.numel(); ++i)
        if (!std::isfinite(scores.at(i)))
            throw NumericError("softmax_causal: non-finite input at flat index " + std::to_string(i));
    Tensor out = detail::make_output(scores.shape(), detail::wants_grad(tape, {&scores}));
    for (std::int64_t t = 0; t < T; ++t) {
        const float* row = scores.data() + t * T;
        float* orow = out.data() + t * T;
        double mx = row[0];
        for (std::int64_t j = 1; j <= t; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double z = 0;
        for (std::int64_t j = 0; j <= t; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
        for (std::int64_t j = 0; j <= t; ++j)
            orow[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / z);
    }
    if (out.requires_grad()) {
        tape.record(out, [scores, out, T]() mutable {
            for (std::int64_t t = 0; t < T; ++t) {
                const float* y = out.data() + t * T;
                const float* dy = out.grad().data() + t * T;
                double dot = 0;
                for (std::int64_t j = 0; j <= t; ++j) dot += static_cast<double>(y[j]) * dy[j];
                for (std::int64_t j = 0; j <= t; ++j)
                    scores.grad()[t * T + j] += static_cast<float>(y[j] * (dy[j] - dot));
            }
        });
    }
    return out;
}

// Inverted dropout: eval mode is exactly the identity; in train mode each
// element is zeroed with probability p and survivors are scaled by 1/(1-p).
inline Tensor dropout(Tape& tape, const Tensor& x, float p, Mode mode, Rng& rng) {
    if (!(p >= 0.0f && p < 1.0f))
        throw ConfigError("dropout probability " + std::to_string(p) + " outside [0, 1)");
    if (mode == Mode::kEval || p == 0.0f) return x;
    const float keep_scale = 1.0f / (1.0f - p);
    const auto n = x.numel();
    auto mask = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n));
    Tensor out = detail::make_output(x.shape(), detail::wants_grad(tape, {&x}));
    for (std::int64_t i = 0; i < n; ++i) {
        const float m = rng.uniform() < p ? 0.0f : keep_scale;
        (*mask)[static_cast<std::size_t>(i)] = m;
        out.at(i) = x.at(i) * m;
    }
    if (out.requires_grad()) {
        tape.record(out, [x, out, mask, n]() mutable {
            for (std::int64_t i = 0; i < n; ++i)
                x.grad()[i] += out.grad()[i] * (*mask)[static_cast<std::size_t>(i)];
        });
    }
    return out;
}

// Mean over rows of -log softmax(logits)[target]. Scalar output; gradient
// is (softmax - onehot) / N.
inline Tensor cross_entropy(Tape& tape, const Tensor& logits,
                            std::span<const std::int32_t> targets) {
    detail::check_rank(logits, 2, "cross_entropy");
    const auto rows = logits.dim(0), vocab = logits.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != rows)
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
    for (std::size_t t = 0; t < targets.size(); ++t)
        if (targets[t] < 0 || targets[t] >= vocab)
            throw IndexError("cross_entropy target " + std::to_string(targets[t]) +
                             " at row " + std::to_string(t) + " outside [0, " +
                             std::to_string(vocab - 1) + "]");
    auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(rows * vocab));
    double total = 0;
    for (std::int64_t i = 0; i < rows; ++i) {
        const float* row = logits.data() + i * vocab;
        double mx = row[0];
        for (std::int64_t j = 1; j < vocab; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double z = 0;
        for (std::int64_t j = 0; j < vocab; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
        const double log_z = std::log(z) + mx;
        total += log_z - row[targets[static_cast<std::size_t>(i)]];
        for (std::int64_t j = 0; j < vocab; ++j)
            (*probs)[static_cast<std::size_t>(i * vocab + j)] =
                static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / z);
    }
    const double mean_loss = total / static_cast<double>(rows);
    Tensor out = detail::make_output({}, detail::wants_grad(tape, {&logits}));
    out.at(0) = static_cast<float>(mean_loss);
    if (out.requires_grad()) {
        std::vector<std::int32_t> tv(targets.begin(), targets.end());
        tape.record(out, [logits, out, probs, tv = std::move(tv), rows, vocab]() mutable {
            const double g = out.grad()[0] / static_cast<double>(rows);
            for (std::int64_t i = 0; i < rows; ++i) {
                float* dst = logits.grad().data() + i * vocab;
                const float* p = probs->data() + i * vocab;
                for (std::int64_t j = 0; j < vocab; ++j)
                    dst[j] += static_cast<float>(g * p[j]);
                dst[tv[static_cast<std::size_t>(i)]] -= static_cast<float>(g);
            }
        });
    }
    return out;
}

inline Tensor sum(Tape& tape, const Tensor& x) {
    Tensor out = detail::make_output({}, detail::wants_grad(tape, {&x}));
    double s = 0;
    const auto n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) s += x.at(i);
    out.at(0) = static_cast<float>(s);
    if (out.requires_grad()) {
        tape.record(out, [x, out, n]() mutable {
            const float g = out.grad()[0];
            for (std::int64_t i = 0; i < n; ++i) x.grad()[i] += g;
        });
    }
    return out;
}

}  // namespace tokencast
