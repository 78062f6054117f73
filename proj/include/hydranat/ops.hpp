#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "hydranat/errors.hpp"
#include "hydranat/tensor.hpp"

namespace hnat {

// c[i,j] = sum_t a[i,t] * b[t,j]. Accumulates in double for both element
// types; oracle tolerances for the f32 path assume this (1e-5).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2) {
        throw DimensionError("matmul: need 2-d operands, got " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    if (a.extent(1) != b.extent(0)) {
        throw DimensionError("matmul: inner extents disagree, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor<T> c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) acc += static_cast<double>(a[i * k + t]) * b[t * n + j];
            c[i * n + j] = static_cast<T>(acc);
        }
    }
    return c;
}

// y[..., o] = sum_i x[..., i] * w[o, i] + b[o]; leading axes pass through.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
    if (w.ndim() != 2) throw DimensionError("linear: weight must be 2-d, got " + shape_str(w.shape()));
    if (x.ndim() < 1 || x.shape().back() != w.extent(1)) {
        throw DimensionError("linear: input last extent " + shape_str(x.shape()) +
                             " does not match weight " + shape_str(w.shape()));
    }
    const std::size_t cout = w.extent(0), cin = w.extent(1);
    if (!bias.empty() && (bias.ndim() != 1 || bias.extent(0) != cout)) {
        throw DimensionError("linear: bias shape " + shape_str(bias.shape()) + " does not match Cout");
    }
    Shape out_shape = x.shape();
    out_shape.back() = cout;
    Tensor<T> y(out_shape);
    const std::size_t rows = x.size() / cin;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * cin;
        T* yr = y.data() + r * cout;
        for (std::size_t o = 0; o < cout; ++o) {
            double acc = bias.empty() ? 0.0 : static_cast<double>(bias[o]);
            const T* wo = w.data() + o * cin;
            for (std::size_t i = 0; i < cin; ++i) acc += static_cast<double>(xr[i]) * wo[i];
            yr[o] = static_cast<T>(acc);
        }
    }
    return y;
}

// Max-subtracted exponential normalization over the last axis.
template <typename T>
Tensor<T> softmax_last(const Tensor<T>& x) {
    if (x.ndim() < 1) throw DimensionError("softmax_last: need at least one axis");
    const std::size_t n = x.shape().back();
    const std::size_t slices = x.size() / n;
    Tensor<T> y(x.shape());
    for (std::size_t s = 0; s < slices; ++s) {
        const T* xs = x.data() + s * n;
        T* ys = y.data() + s * n;
        T mx = xs[0];
        bool finite = true;
        for (std::size_t i = 0; i < n; ++i) {
            finite = finite && std::isfinite(xs[i]);
            if (xs[i] > mx) mx = xs[i];
        }
        if (!finite) throw NumericError("softmax_last: non-finite input");
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            ys[i] = std::exp(xs[i] - mx);
            sum += static_cast<double>(ys[i]);
        }
        for (std::size_t i = 0; i < n; ++i) ys[i] = static_cast<T>(ys[i] / sum);
    }
    return y;
}

namespace detail {

inline std::vector<std::size_t> normalize_axes(std::size_t ndim, std::vector<std::size_t> axes) {
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    for (auto a : axes) {
        if (a >= ndim) throw DimensionError("reduce_mean: axis " + std::to_string(a) + " out of range");
    }
    return axes;
}

}  // namespace detail

// Arithmetic mean over the named axes; reduced axes are removed (a full
// reduction yields shape [1]).
template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, std::vector<std::size_t> axes) {
    axes = detail::normalize_axes(x.ndim(), std::move(axes));
    Shape out_shape;
    std::vector<bool> reduced(x.ndim(), false);
    for (auto a : axes) reduced[a] = true;
    std::size_t count = 1;
    for (std::size_t a = 0; a < x.ndim(); ++a) {
        if (reduced[a]) count *= x.extent(a);
        else out_shape.push_back(x.extent(a));
    }
    if (out_shape.empty()) out_shape.push_back(1);

    Tensor<double> acc(out_shape, 0.0);
    // Per-axis stride into the output (0 for reduced axes).
    std::vector<std::size_t> out_stride(x.ndim(), 0);
    {
        std::size_t s = 1;
        for (std::size_t a = x.ndim(); a-- > 0;) {
            if (!reduced[a]) {
                out_stride[a] = s;
                s *= x.extent(a);
            }
        }
    }
    std::vector<std::size_t> idx(x.ndim(), 0);
    for (std::size_t flat = 0; flat < x.size(); ++flat) {
        std::size_t off = 0;
        for (std::size_t a = 0; a < x.ndim(); ++a) off += idx[a] * out_stride[a];
        acc[off] += static_cast<double>(x[flat]);
        for (std::size_t a = x.ndim(); a-- > 0;) {
            if (++idx[a] < x.extent(a)) break;
            idx[a] = 0;
        }
    }
    Tensor<T> out(out_shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(acc[i] / static_cast<double>(count));
    return out;
}

// Elementwise max(x, slope * x); slope in [0, 1).
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope) {
    if (slope < 0.0 || slope >= 1.0) throw ContractError("leaky_relu: slope must be in [0,1)");
    Tensor<T> y(x.shape());
    const T s = static_cast<T>(slope);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] >= T(0) ? x[i] : s * x[i];
    return y;
}

// align_corners=false bilinear 2x upsampling of [B,C,H,W].
template <typename T>
Tensor<T> upsample_bilinear_2x(const Tensor<T>& x) {
    if (x.ndim() != 4) throw DimensionError("upsample_bilinear_2x: need [B,C,H,W], got " + shape_str(x.shape()));
    const std::size_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    Tensor<T> y({B, C, 2 * H, 2 * W});
    const std::size_t HW = H * W, OHW = 4 * HW;
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const T* src = x.data() + bc * HW;
        T* dst = y.data() + bc * OHW;
        for (std::size_t oy = 0; oy < 2 * H; ++oy) {
            const double sy = (static_cast<double>(oy) + 0.5) * 0.5 - 0.5;
            const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(std::floor(sy));
            const double fy = sy - static_cast<double>(y0);
            const std::size_t y0c = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(y0, 0, H - 1));
            const std::size_t y1c = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(y0 + 1, 0, H - 1));
            for (std::size_t ox = 0; ox < 2 * W; ++ox) {
                const double sx = (static_cast<double>(ox) + 0.5) * 0.5 - 0.5;
                const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(std::floor(sx));
                const double fx = sx - static_cast<double>(x0);
                const std::size_t x0c = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(x0, 0, W - 1));
                const std::size_t x1c = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(x0 + 1, 0, W - 1));
                const double v = (1.0 - fy) * ((1.0 - fx) * src[y0c * W + x0c] + fx * src[y0c * W + x1c]) +
                                 fy * ((1.0 - fx) * src[y1c * W + x0c] + fx * src[y1c * W + x1c]);
                dst[oy * 2 * W + ox] = static_cast<T>(v);
            }
        }
    }
    return y;
}

// ---- vector-Jacobian products of the primitives ----

template <typename T>
std::pair<Tensor<T>, Tensor<T>> matmul_vjp(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& g) {
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    if (g.shape() != Shape{m, n}) throw DimensionError("matmul_vjp: upstream shape mismatch");
    Tensor<T> da({m, k});
    Tensor<T> db({k, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t t = 0; t < k; ++t) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += static_cast<double>(g[i * n + j]) * b[t * n + j];
            da[i * k + t] = static_cast<T>(acc);
        }
    for (std::size_t t = 0; t < k; ++t)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) acc += static_cast<double>(a[i * k + t]) * g[i * n + j];
            db[t * n + j] = static_cast<T>(acc);
        }
    return {std::move(da), std::move(db)};
}

template <typename T>
struct LinearGrads {
    Tensor<T> x;
    Tensor<T> w;
    Tensor<T> bias;  // empty when the forward had no bias
};

template <typename T>
LinearGrads<T> linear_vjp(const Tensor<T>& x, const Tensor<T>& w, bool has_bias, const Tensor<T>& g) {
    const std::size_t cout = w.extent(0), cin = w.extent(1);
    if (g.shape().back() != cout || g.size() / cout != x.size() / cin) {
        throw DimensionError("linear_vjp: upstream shape mismatch");
    }
    const std::size_t rows = x.size() / cin;
    LinearGrads<T> out{Tensor<T>(x.shape()), Tensor<T>(w.shape()), {}};
    Tensor<double> dw_acc(w.shape(), 0.0);
    Tensor<double> db_acc = has_bias ? Tensor<double>({cout}, 0.0) : Tensor<double>{};
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * cin;
        const T* gr = g.data() + r * cout;
        T* dxr = out.x.data() + r * cin;
        for (std::size_t i = 0; i < cin; ++i) {
            double acc = 0.0;
            for (std::size_t o = 0; o < cout; ++o) acc += static_cast<double>(gr[o]) * w[o * cin + i];
            dxr[i] = static_cast<T>(acc);
        }
        for (std::size_t o = 0; o < cout; ++o) {
            const double go = gr[o];
            double* dwo = dw_acc.data() + o * cin;
            for (std::size_t i = 0; i < cin; ++i) dwo[i] += go * xr[i];
            if (has_bias) db_acc[o] += go;
        }
    }
    out.w = cast<double, T>(dw_acc);
    if (has_bias) out.bias = cast<double, T>(db_acc);
    return out;
}

// dx = y * (g - sum(g * y)) per last-axis slice, with y = softmax(x).
template <typename T>
Tensor<T> softmax_last_vjp(const Tensor<T>& y, const Tensor<T>& g) {
    require_same_shape(y, g, "softmax_last_vjp");
    const std::size_t n = y.shape().back();
    const std::size_t slices = y.size() / n;
    Tensor<T> dx(y.shape());
    for (std::size_t s = 0; s < slices; ++s) {
        const T* ys = y.data() + s * n;
        const T* gs = g.data() + s * n;
        T* ds = dx.data() + s * n;
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += static_cast<double>(gs[i]) * ys[i];
        for (std::size_t i = 0; i < n; ++i) ds[i] = static_cast<T>(ys[i] * (static_cast<double>(gs[i]) - dot));
    }
    return dx;
}

template <typename T>
Tensor<T> reduce_mean_vjp(const Shape& in_shape, std::vector<std::size_t> axes, const Tensor<T>& g) {
    axes = detail::normalize_axes(in_shape.size(), std::move(axes));
    std::vector<bool> reduced(in_shape.size(), false);
    std::size_t count = 1;
    for (auto a : axes) {
        reduced[a] = true;
        count *= in_shape[a];
    }
    Tensor<T> dx(in_shape);
    std::vector<std::size_t> out_stride(in_shape.size(), 0);
    {
        std::size_t s = 1;
        for (std::size_t a = in_shape.size(); a-- > 0;) {
            if (!reduced[a]) {
                out_stride[a] = s;
                s *= in_shape[a];
            }
        }
        if (s != g.size()) throw DimensionError("reduce_mean_vjp: upstream size mismatch");
    }
    const T inv = static_cast<T>(1.0 / static_cast<double>(count));
    std::vector<std::size_t> idx(in_shape.size(), 0);
    for (std::size_t flat = 0; flat < dx.size(); ++flat) {
        std::size_t off = 0;
        for (std::size_t a = 0; a < in_shape.size(); ++a) off += idx[a] * out_stride[a];
        dx[flat] = g[off] * inv;
        for (std::size_t a = in_shape.size(); a-- > 0;) {
            if (++idx[a] < in_shape[a]) break;
            idx[a] = 0;
        }
    }
    return dx;
}

template <typename T>
Tensor<T> leaky_relu_vjp(const Tensor<T>& x, double slope, const Tensor<T>& g) {
    require_same_shape(x, g, "leaky_relu_vjp");
    Tensor<T> dx(x.shape());
    const T s = static_cast<T>(slope);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] >= T(0) ? g[i] : s * g[i];
    return dx;
}

// ---- tag-dispatched VJP entry point ----

enum class OpTag { matmul, linear, softmax_last, reduce_mean, leaky_relu };

template <typename T>
struct VjpSaved {
    std::vector<Tensor<T>> inputs;   // forward inputs, in op argument order
    double slope = 0.0;              // leaky_relu only
    std::vector<std::size_t> axes;   // reduce_mean only
};

// Returns one cotangent per forward input, in argument order.
template <typename T>
std::vector<Tensor<T>> vjp(OpTag tag, const VjpSaved<T>& saved, const Tensor<T>& upstream) {
    switch (tag) {
        case OpTag::matmul: {
            if (saved.inputs.size() != 2) throw ContractError("vjp(matmul): need saved inputs {a, b}");
            auto [da, db] = matmul_vjp(saved.inputs[0], saved.inputs[1], upstream);
            return {std::move(da), std::move(db)};
        }
        case OpTag::linear: {
            if (saved.inputs.size() != 2 && saved.inputs.size() != 3)
                throw ContractError("vjp(linear): need saved inputs {x, w[, b]}");
            const bool has_bias = saved.inputs.size() == 3;
            auto grads = linear_vjp(saved.inputs[0], saved.inputs[1], has_bias, upstream);
            std::vector<Tensor<T>> out;
            out.push_back(std::move(grads.x));
            out.push_back(std::move(grads.w));
            if (has_bias) out.push_back(std::move(grads.bias));
            return out;
        }
        case OpTag::softmax_last: {
            if (saved.inputs.size() != 1) throw ContractError("vjp(softmax_last): need saved input {x}");
            return {softmax_last_vjp(softmax_last(saved.inputs[0]), upstream)};
        }
        case OpTag::reduce_mean: {
            if (saved.inputs.size() != 1) throw ContractError("vjp(reduce_mean): need saved input {x}");
            return {reduce_mean_vjp(saved.inputs[0].shape(), saved.axes, upstream)};
        }
        case OpTag::leaky_relu: {
            if (saved.inputs.size() != 1) throw ContractError("vjp(leaky_relu): need saved input {x}");
            return {leaky_relu_vjp(saved.inputs[0], saved.slope, upstream)};
        }
    }
    throw ContractError("vjp: unsupported op tag");
}

}  // namespace hnat
