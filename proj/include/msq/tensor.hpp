#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <unordered_set>
#include <utility>
#include <vector>

#include "msq/common.hpp"
#include "msq/rng.hpp"

namespace msq {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

namespace detail {

inline std::atomic<uint64_t>& tensor_seq_counter() {
    static std::atomic<uint64_t> counter{0};
    return counter;
}

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

// Scoped guard disabling graph recording (sampling / evaluation paths).
struct NoGrad {
    bool prev;
    NoGrad() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGrad() { detail::grad_mode() = prev; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;
};

// Dense row-major float64 tensor doubling as a node in the compute graph.
// Ops allocate a fresh Tensor, record parents and a pull-style backward
// closure; backward() replays closures in reverse construction order.
// Gradients are lazily allocated: a leaf whose grad buffer was never
// touched reads as exactly zero.
class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until first accumulation

    std::vector<TensorPtr> parents;
    std::function<void()> backward_fn;
    uint64_t seq = 0;

    static TensorPtr create(std::vector<int> shape, bool requires_grad = false) {
        auto t = std::make_shared<Tensor>();
        int64_t n = 1;
        for (int e : shape) {
            if (e < 0) throw DimensionError("negative tensor extent");
            n *= e;
        }
        t->shape = std::move(shape);
        t->data.assign(static_cast<size_t>(n), 0.0);
        t->requires_grad = requires_grad;
        t->seq = detail::tensor_seq_counter().fetch_add(1, std::memory_order_relaxed);
        return t;
    }

    static TensorPtr from_data(std::vector<int> shape, std::vector<double> values,
                               bool requires_grad = false) {
        auto t = create(std::move(shape), requires_grad);
        if (values.size() != t->data.size()) throw DimensionError("data length does not match shape");
        t->data = std::move(values);
        return t;
    }

    static TensorPtr scalar(double v) { return from_data({1}, {v}); }

    static TensorPtr full(std::vector<int> shape, double v, bool requires_grad = false) {
        auto t = create(std::move(shape), requires_grad);
        std::fill(t->data.begin(), t->data.end(), v);
        return t;
    }

    static TensorPtr randn(std::vector<int> shape, SeededRng& rng, double stddev,
                           bool requires_grad = false) {
        auto t = create(std::move(shape), requires_grad);
        for (auto& v : t->data) v = rng.normal(0.0, stddev);
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    int rows() const {
        if (shape.size() != 2) throw DimensionError("rows(): tensor is not 2-D");
        return shape[0];
    }
    int cols() const {
        if (shape.size() != 2) throw DimensionError("cols(): tensor is not 2-D");
        return shape[1];
    }

    double item() const {
        if (numel() != 1) throw DimensionError("item(): tensor is not scalar");
        return data[0];
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    }
    bool has_grad() const { return !grad.empty(); }

    // Gradient view that reads as zeros when the buffer was never touched.
    double grad_at(size_t i) const { return grad.empty() ? 0.0 : grad[i]; }
};

namespace detail {

inline TensorPtr make_op(std::vector<int> shape, std::vector<TensorPtr> inputs) {
    auto out = Tensor::create(std::move(shape));
    if (grad_mode()) {
        bool rg = false;
        for (const auto& p : inputs) rg = rg || p->requires_grad;
        if (rg) {
            out->requires_grad = true;
            out->parents = std::move(inputs);
        }
    }
    return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape != b.shape) throw DimensionError(std::string(what) + ": shape mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// primitive ops
// ---------------------------------------------------------------------------

inline TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
        throw DimensionError("matmul: incompatible shapes");
    const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = detail::make_op({m, n}, {a, b});
    const double* A = a->data.data();
    const double* B = b->data.data();
    double* C = out->data.data();
    for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            const double aik = A[i * k + kk];
            const double* Brow = B + kk * n;
            double* Crow = C + i * n;
            for (int j = 0; j < n; ++j) Crow[j] += aik * Brow[j];
        }
    }
    if (out->requires_grad) {
        Tensor* self = out.get();
        out->backward_fn = [self, a, b, m, k, n]() {
            const double* g = self->grad.data();
            if (a->requires_grad) {
                a->ensure_grad();
                double* da = a->grad.data();
                const double* B = b->data.data();
                for (int i = 0; i < m; ++i) {
                    for (int kk = 0; kk < k; ++kk) {
                        double s = 0.0;
                        const double* grow = g + i * n;
                        const double* Brow = B + kk * n;
                        for (int j = 0; j < n; ++j) s += grow[j] * Brow[j];
                        da[i * k + kk] += s;
                    }
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                double* db = b->grad.data();
                const double* A = a->data.data();
                for (int i = 0; i < m; ++i) {
                    const double* grow = g + i * n;
                    for (int kk = 0; kk < k; ++kk) {
                        const double aik = A[i * k + kk];
                        double* dbrow = db + kk * n;
                        for (int j = 0; j < n; ++j) dbrow[j] += aik * grow[j];
                    }
                }
            }
        };
    }
    return out;
}

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    detail::check_same_shape(*a, *b, "add");
    auto out = detail::make_op(a->shape, {a, b});
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
    if (out->requires_grad) {
        Tensor* self = out.get();
        out->backward_fn = [self, a, b]() {
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < self->grad.size(); ++i) a->grad[i] += self->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < self->grad.size(); ++i) b->grad[i] += self->grad[i];
            }
        };
    }
    return out;
}

// Row-wise bias: the one broadcast this library allows.
inline TensorPtr add_row_bias(const TensorPtr& a, const TensorPtr& bias) {
    if (a->shape.size() != 2) throw DimensionError("add_row_bias: lhs must be 2-D");
    const int m = a->shape[0], n = a->shape[1];
    if (bias->numel() != n) throw DimensionError("add_row_bias: bias width mismatch");
    auto out = detail::make_op({m, n}, {a, bias});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out->data[i * n + j] = a->data[i * n + j] + bias->data[j];
    if (out->requires_grad) {
        Tensor* self = out.get();
        out->backward_fn = [self, a, bias, m, n]() {
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < self->grad.size(); ++i) a->grad[i] += self->grad[i];
            }
            if (bias->requires_grad) {
                bias->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) bias->grad[j] += self->grad[i * n + j];
            }
        };
    }
    return out;
}

inline TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    detail::check_same_shape(*a, *b, "mul");
    auto out = detail::make_op(a->shape, {a, b});
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
    if (out->requires_grad) {
        Tensor* self = out.get();
        out->backward_fn = [self, a, b]() {
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < self->grad.size(); ++i)
                    a->grad[i] += self->grad[i] * b->data[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < self->grad.size(); ++i)
                    b->grad[i] += self->grad[i] * a->data[i];
            }
        };
    }
    return out;
}

inline TensorPtr scale(const TensorPtr& a, double s) {
    auto out = detail::make_op(a->shape, {a});
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = s * a->data[i];
    if (out->requires_grad) {
        Tensor* self = out.get();
        out->backward_fn = [self, a, s]() {
            a->ensure_grad();
            for (size_t i = 0; i < self->grad.size(); ++i) a->grad[i] += s * self->grad[i];
        };
    }
    return out;
}

inline TensorPtr concat_rows(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const int n = parts[0]->cols();
    int m = 0;
    for (const auto& p : parts) {
        if (p->cols() != n) throw DimensionError("concat_rows: column mismatch");
        m += p->rows();
    }
    auto out = detail::make_op({m, n}, parts);
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->data.begin(), p->data.end(), out->data.begin() + off);
        off += p->data.size();
    }
    if (out->requires_grad) {
        Tensor* self = out.get();
        auto inputs = parts;
        out->backward_fn = [self, inputs]() {
            size_t off = 0;
            for (const auto& p : inputs) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (size_t i = 0; i < p->data.size(); ++i) p->grad[i] += self->grad[off + i];
                }
                off += p->data.size();
            }
        };
    }
    return out;
}

inline TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const int m = parts[0]->rows();
    int n = 0;
    for (const auto& p : parts) {
        if (p->rows() != m) throw DimensionError("concat_cols: row mismatch");
        n += p->cols();
    }
    auto out = detail::make_op({m, n}, parts);
    int coff = 0;
    for (const auto& p : parts) {
        const int pc = p->cols();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < pc; ++j) out->data[i * n + coff + j] = p->data[i * pc + j];
        coff += pc;
    }
    if (out->requires_grad) {
        Tensor* self = out.get();
        auto inputs = parts;
        out->backward_fn = [self, inputs, m, n]() {
            int coff = 0;
            for (const auto& p : inputs) {
                const int pc = p->cols();
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < pc; ++j)
                            p->grad[i * pc + j] += self->grad[i * n + coff + j];
                }
                coff += pc;
            }
        };
    }
    return out;
}

inline TensorPtr slice_rows(const TensorPtr& a, int r0, int r1) {
    const int m = a->rows(), n = a->cols();
    if (r0 < 0 || r1 < r0 || r1 > m) throw DimensionError("slice_rows: span out of bounds");
    auto out = detail::make_op({r1 - r0, n}, {a});
    std::copy(a->data.begin() + static_cast<size_t>(r0) * n,
              a->data.begin() + static_cast<size_t>(r1) * n, out->data.begin());
    if (out->requires_grad) {
        Tensor* self = out.get();
        out->backward_fn = [self, a, r0, n]() {
            a->ensure_grad();
            const size_t base = static_cast<size_t>(r0) * n;
            for (size_t i = 0; i < self->grad.size(); ++i) a->grad[base + i] += self->grad[i];
        };
    }
    return out;
}

inline TensorPtr slice_cols(const TensorPtr& a, int c0, int c1) {
    const int m = a->rows(), n = a->cols();
    if (c0 < 0 || c1 < c0 || c1 > n) throw DimensionError("slice_cols: span out of bounds");
    const int w = c1 - c0;
    auto out = detail::make_op({m, w}, {a});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) out->data[i * w + j] = a->data[i * n + c0 + j];
    if (out->requires_grad) {
        Tensor* self = out.get();
        out->backward_fn = [self, a, c0, n, w, m]() {
            a->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j) a->grad[i * n + c0 + j] += self->grad[i * w + j];
        };
    }
    return out;
}

inline TensorPtr transpose(const TensorPtr& a) {
    const int m = a->rows(), n = a->cols();
    auto out = detail::make_op({n, m}, {a});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out->data[j * m + i] = a->data[i * n + j];
    if (out->requires_grad) {
        Tensor* self = out.get();
        out->backward_fn = [self, a, m, n]() {
            a->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) a->grad[i * n + j] += self->grad[j * m + i];
        };
    }
    return out;
}

// Row-wise softmax with max-subtraction.
inline TensorPtr softmax_rows(const TensorPtr& a) {
    const int m = a->rows(), n = a->cols();
    if (n < 1) throw DimensionError("softmax: empty row");
    auto out = detail::make_op({m, n}, {a});
    for (int i = 0; i < m; ++i) {
        const double* x = a->data.data() + static_cast<size_t>(i) * n;
        double* y = out->data.data() + static_cast<size_t>(i) * n;
        double mx = x[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (int j = 0; j < n; ++j) y[j] /= sum;
    }
    if (out->requires_grad) {
        Tensor* self = out.get();
        out->backward_fn = [self, a, m, n]() {
            a->ensure_grad();
            for (int i = 0; i < m; ++i) {
                const double* y = self->data.data() + static_cast<size_t>(i) * n;
                const double* gy = self->grad.data() + static_cast<size_t>(i) * n;
                double* gx = a->grad.data() + static_cast<size_t>(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += gy[j] * y[j];
                for (int j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
            }
        };
    }
    return out;
}

inline TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                            double eps = 1e-5) {
    const int m = x->rows(), n = x->cols();
    if (n < 1) throw DimensionError("layer_norm: empty row");
    if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
    if (gain->numel() != n || bias->numel() != n)
        throw DimensionError("layer_norm: gain/bias width mismatch");
    auto out = detail::make_op({m, n}, {x, gain, bias});
    std::vector<double> mean(m), inv_std(m);
    for (int i = 0; i < m; ++i) {
        const double* row = x->data.data() + static_cast<size_t>(i) * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += row[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= n;
        const double istd = 1.0 / std::sqrt(var + eps);
        mean[i] = mu;
        inv_std[i] = istd;
        double* y = out->data.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) y[j] = gain->data[j] * (row[j] - mu) * istd + bias->data[j];
    }
    if (out->requires_grad) {
        Tensor* self = out.get();
        out->backward_fn = [self, x, gain, bias, m, n, mean = std::move(mean),
                            inv_std = std::move(inv_std)]() {
            const bool gx = x->requires_grad, gg = gain->requires_grad, gb = bias->requires_grad;
            if (gx) x->ensure_grad();
            if (gg) gain->ensure_grad();
            if (gb) bias->ensure_grad();
            for (int i = 0; i < m; ++i) {
                const double* row = x->data.data() + static_cast<size_t>(i) * n;
                const double* gy = self->grad.data() + static_cast<size_t>(i) * n;
                const double mu = mean[i], istd = inv_std[i];
                double m1 = 0.0, m2 = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double xhat = (row[j] - mu) * istd;
                    const double dxh = gy[j] * gain->data[j];
                    m1 += dxh;
                    m2 += dxh * xhat;
                }
                m1 /= n;
                m2 /= n;
                for (int j = 0; j < n; ++j) {
                    const double xhat = (row[j] - mu) * istd;
                    if (gx) {
                        const double dxh = gy[j] * gain->data[j];
                        x->grad[static_cast<size_t>(i) * n + j] += istd * (dxh - m1 - xhat * m2);
                    }
                    if (gg) gain->grad[j] += gy[j] * xhat;
                    if (gb) bias->grad[j] += gy[j];
                }
            }
        };
    }
    return out;
}

// Exact GELU (erf form).
inline TensorPtr gelu(const TensorPtr& a) {
    auto out = detail::make_op(a->shape, {a});
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (size_t i = 0; i < out->data.size(); ++i) {
        const double x = a->data[i];
        out->data[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    if (out->requires_grad) {
        Tensor* self = out.get();
        out->backward_fn = [self, a]() {
            a->ensure_grad();
            constexpr double inv_sqrt2 = 0.70710678118654752440;
            constexpr double inv_sqrt2pi = 0.39894228040143267794;
            for (size_t i = 0; i < self->grad.size(); ++i) {
                const double x = a->data[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                a->grad[i] += self->grad[i] * (cdf + x * pdf);
            }
        };
    }
    return out;
}

// Mean squared error over all elements; returns a scalar {1}.
inline TensorPtr mse(const TensorPtr& a, const TensorPtr& b) {
    detail::check_same_shape(*a, *b, "mse");
    if (a->numel() == 0) throw DimensionError("mse: empty tensors");
    auto out = detail::make_op({1}, {a, b});
    const double inv_n = 1.0 / static_cast<double>(a->numel());
    double acc = 0.0;
    for (size_t i = 0; i < a->data.size(); ++i) {
        const double d = a->data[i] - b->data[i];
        acc += d * d;
    }
    out->data[0] = acc * inv_n;
    if (out->requires_grad) {
        Tensor* self = out.get();
        out->backward_fn = [self, a, b, inv_n]() {
            const double g = self->grad[0];
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < a->data.size(); ++i)
                    a->grad[i] += g * 2.0 * (a->data[i] - b->data[i]) * inv_n;
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < b->data.size(); ++i)
                    b->grad[i] -= g * 2.0 * (a->data[i] - b->data[i]) * inv_n;
            }
        };
    }
    return out;
}

inline TensorPtr embedding_lookup(const TensorPtr& table, const std::vector<int>& ids) {
    const int v = table->rows(), d = table->cols();
    for (int id : ids)
        if (id < 0 || id >= v) throw DimensionError("embedding_lookup: id out of range");
    auto out = detail::make_op({static_cast<int>(ids.size()), d}, {table});
    for (size_t r = 0; r < ids.size(); ++r)
        std::copy(table->data.begin() + static_cast<size_t>(ids[r]) * d,
                  table->data.begin() + static_cast<size_t>(ids[r] + 1) * d,
                  out->data.begin() + r * d);
    if (out->requires_grad) {
        Tensor* self = out.get();
        out->backward_fn = [self, table, ids, d]() {
            table->ensure_grad();
            for (size_t r = 0; r < ids.size(); ++r)
                for (int j = 0; j < d; ++j)
                    table->grad[static_cast<size_t>(ids[r]) * d + j] += self->grad[r * d + j];
        };
    }
    return out;
}

inline TensorPtr reshape(const TensorPtr& a, std::vector<int> shape) {
    int64_t n = 1;
    for (int e : shape) n *= e;
    if (n != a->numel()) throw DimensionError("reshape: element count mismatch");
    auto out = detail::make_op(std::move(shape), {a});
    out->data = a->data;
    if (out->requires_grad) {
        Tensor* self = out.get();
        out->backward_fn = [self, a]() {
            a->ensure_grad();
            for (size_t i = 0; i < self->grad.size(); ++i) a->grad[i] += self->grad[i];
        };
    }
    return out;
}

// Rotates channel pairs (2i, 2i+1) of each row by per-position angles given
// as cos/sin tables of shape {rows, cols/2}. Rotation preserves pair norms
// exactly; backward applies the transposed rotation.
inline TensorPtr rotate_pairs(const TensorPtr& x, const TensorPtr& cos_t, const TensorPtr& sin_t) {
    const int m = x->rows(), n = x->cols();
    if (n % 2 != 0) throw DimensionError("rotate_pairs: odd width");
    const int h = n / 2;
    if (cos_t->rows() != m || cos_t->cols() != h || sin_t->rows() != m || sin_t->cols() != h)
        throw DimensionError("rotate_pairs: cos/sin table shape mismatch");
    auto out = detail::make_op({m, n}, {x, cos_t, sin_t});
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < h; ++p) {
            const double c = cos_t->data[static_cast<size_t>(i) * h + p];
            const double s = sin_t->data[static_cast<size_t>(i) * h + p];
            const double x0 = x->data[static_cast<size_t>(i) * n + 2 * p];
            const double x1 = x->data[static_cast<size_t>(i) * n + 2 * p + 1];
            out->data[static_cast<size_t>(i) * n + 2 * p] = x0 * c - x1 * s;
            out->data[static_cast<size_t>(i) * n + 2 * p + 1] = x0 * s + x1 * c;
        }
    }
    if (out->requires_grad) {
        Tensor* self = out.get();
        out->backward_fn = [self, x, cos_t, sin_t, m, n, h]() {
            if (!x->requires_grad) return;
            x->ensure_grad();
            for (int i = 0; i < m; ++i) {
                for (int p = 0; p < h; ++p) {
                    const double c = cos_t->data[static_cast<size_t>(i) * h + p];
                    const double s = sin_t->data[static_cast<size_t>(i) * h + p];
                    const double g0 = self->grad[static_cast<size_t>(i) * n + 2 * p];
                    const double g1 = self->grad[static_cast<size_t>(i) * n + 2 * p + 1];
                    x->grad[static_cast<size_t>(i) * n + 2 * p] += g0 * c + g1 * s;
                    x->grad[static_cast<size_t>(i) * n + 2 * p + 1] += -g0 * s + g1 * c;
                }
            }
        };
    }
    return out;
}

// Gathers flat elements by index into a {1, len} tensor; duplicate indices
// accumulate in backward.
inline TensorPtr gather_elements(const TensorPtr& a, const std::vector<int>& idx) {
    const int64_t n = a->numel();
    for (int i : idx)
        if (i < 0 || i >= n) throw DimensionError("gather_elements: index out of range");
    auto out = detail::make_op({1, static_cast<int>(idx.size())}, {a});
    for (size_t r = 0; r < idx.size(); ++r) out->data[r] = a->data[static_cast<size_t>(idx[r])];
    if (out->requires_grad) {
        Tensor* self = out.get();
        out->backward_fn = [self, a, idx]() {
            a->ensure_grad();
            for (size_t r = 0; r < idx.size(); ++r)
                a->grad[static_cast<size_t>(idx[r])] += self->grad[r];
        };
    }
    return out;
}

// Cuts the graph: same values, no gradient flow.
inline TensorPtr detach(const TensorPtr& a) { return Tensor::from_data(a->shape, a->data); }

// ---------------------------------------------------------------------------
// backward pass
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar root. Nodes are replayed in reverse
// construction order (children always postdate parents), and nodes whose
// grad buffer was never touched are skipped, so leaves outside the active
// subgraph keep an exact zero gradient.
inline void backward(const TensorPtr& root) {
    if (root->numel() != 1) throw DimensionError("backward: root must be scalar");
    if (!root->requires_grad) return;
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> seen;
    std::vector<Tensor*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Tensor* t = stack.back();
        stack.pop_back();
        order.push_back(t);
        for (const auto& p : t->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Tensor* a, const Tensor* b) { return a->seq > b->seq; });
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (Tensor* t : order) {
        if (t->backward_fn && t->has_grad()) t->backward_fn();
    }
}

// ---------------------------------------------------------------------------
// finite-difference gradient checker
// ---------------------------------------------------------------------------

// Central-difference check of a scalar graph function against its analytic
// gradient. Returns max over coordinates of |analytic - fd| / max(1, |analytic|).
inline double grad_check(const std::function<TensorPtr(const TensorPtr&)>& f, const TensorPtr& x,
                         double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw ConfigError("grad_check: eps out of [1e-7, 1e-3]");
    const bool saved = x->requires_grad;
    x->requires_grad = true;
    x->zero_grad();
    auto y = f(x);
    if (y->numel() != 1) throw DimensionError("grad_check: f must be scalar-valued");
    if (!std::isfinite(y->data[0])) throw NumericError("grad_check: non-finite value at x");
    backward(y);
    std::vector<double> analytic(x->data.size(), 0.0);
    if (x->has_grad()) analytic = x->grad;
    double max_err = 0.0;
    {
        NoGrad ng;
        for (size_t i = 0; i < x->data.size(); ++i) {
            const double orig = x->data[i];
            x->data[i] = orig + eps;
            const double fp = f(x)->item();
            x->data[i] = orig - eps;
            const double fm = f(x)->item();
            x->data[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("grad_check: non-finite value at probe point");
            const double fd = (fp - fm) / (2.0 * eps);
            const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
            max_err = std::max(max_err, err);
        }
    }
    x->requires_grad = saved;
    return max_err;
}

inline void check_finite(const Tensor& t, const char* what) {
    for (double v : t.data)
        if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite value");
}

}  // namespace msq
