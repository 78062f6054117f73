#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "hydranat/errors.hpp"
#include "hydranat/neighborhood.hpp"
#include "hydranat/tensor.hpp"
#include "hydranat/threading.hpp"

namespace hnat {

namespace detail {

template <typename T>
void check_na_operand(const Tensor<T>& t, const NeighborhoodIndexMap& map, const char* name) {
    if (t.ndim() != 5) throw DimensionError(std::string(name) + ": need [B,h,H,W,C'], got " + shape_str(t.shape()));
    if (t.extent(2) != static_cast<std::size_t>(map.height()) ||
        t.extent(3) != static_cast<std::size_t>(map.width())) {
        throw DimensionError(std::string(name) + ": spatial extents " + shape_str(t.shape()) +
                             " do not match index map " + std::to_string(map.height()) + "x" +
                             std::to_string(map.width()));
    }
}

template <typename T>
void check_rpb(const Tensor<T>& rpb, std::size_t heads, int kernel, const char* name) {
    const std::size_t span = 2 * static_cast<std::size_t>(kernel) - 1;
    if (rpb.ndim() != 3 || rpb.extent(0) != heads || rpb.extent(1) != span || rpb.extent(2) != span) {
        throw DimensionError(std::string(name) + ": rpb shape " + shape_str(rpb.shape()) + " does not match " +
                             std::to_string(heads) + " heads, kernel " + std::to_string(kernel));
    }
}

}  // namespace detail

// logits[b,h,y,x,t] = <q[b,h,y,x,:], kt[b,h,ny(t),nx(t),:]> + rpb[h,ry(t),rx(t)]
// with t = ty*k + tx over the query's k*k neighborhood. q is pre-scaled by
// the caller.
template <typename T>
Tensor<T> na2d_qk(const Tensor<T>& q, const Tensor<T>& kt, const NeighborhoodIndexMap& map,
                  const Tensor<T>& rpb) {
    detail::check_na_operand(q, map, "na2d_qk(q)");
    require_same_shape(q, kt, "na2d_qk");
    const std::size_t B = q.extent(0), h = q.extent(1), H = q.extent(2), W = q.extent(3), C = q.extent(4);
    detail::check_rpb(rpb, h, map.kernel(), "na2d_qk");
    const int k = map.kernel();
    const std::size_t kk = static_cast<std::size_t>(k) * k;
    const std::size_t span = 2 * static_cast<std::size_t>(k) - 1;
    Tensor<T> logits({B, h, H, W, kk});

    parallel_for(B * h * H, [&](std::size_t row) {
        const std::size_t y = row % H;
        const std::size_t bh = row / H;
        const std::size_t head = bh % h;
        const T* qrow = q.data() + (bh * H + y) * W * C;
        const T* kbase = kt.data() + bh * H * W * C;
        const T* rpb_h = rpb.data() + head * span * span;
        T* out = logits.data() + (bh * H + y) * W * kk;
        const int* nys = map.row_indices(static_cast<int>(y));
        const int* rys = map.row_rpb(static_cast<int>(y));
        for (std::size_t x = 0; x < W; ++x) {
            const T* qv = qrow + x * C;
            const int* nxs = map.col_indices(static_cast<int>(x));
            const int* rxs = map.col_rpb(static_cast<int>(x));
            for (int ty = 0; ty < k; ++ty) {
                const T* krow = kbase + static_cast<std::size_t>(nys[ty]) * W * C;
                for (int tx = 0; tx < k; ++tx) {
                    const T* kv = krow + static_cast<std::size_t>(nxs[tx]) * C;
                    double acc = static_cast<double>(rpb_h[rys[ty] * span + rxs[tx]]);
                    for (std::size_t c = 0; c < C; ++c) acc += static_cast<double>(qv[c]) * kv[c];
                    out[x * kk + ty * k + tx] = static_cast<T>(acc);
                }
            }
        }
    });
    return logits;
}

// out[b,h,y,x,c] = sum_t attn[b,h,y,x,t] * v[b,h,ny(t),nx(t),c]
template <typename T>
Tensor<T> na2d_av(const Tensor<T>& attn, const Tensor<T>& v, const NeighborhoodIndexMap& map) {
    detail::check_na_operand(v, map, "na2d_av(v)");
    const std::size_t B = v.extent(0), h = v.extent(1), H = v.extent(2), W = v.extent(3), C = v.extent(4);
    const int k = map.kernel();
    const std::size_t kk = static_cast<std::size_t>(k) * k;
    if (attn.shape() != Shape{B, h, H, W, kk}) {
        throw DimensionError("na2d_av: attn shape " + shape_str(attn.shape()) + " does not match v " +
                             shape_str(v.shape()) + " and kernel " + std::to_string(k));
    }
    Tensor<T> out({B, h, H, W, C});

    parallel_for(B * h * H, [&](std::size_t row) {
        std::vector<double> acc(C);
        const std::size_t y = row % H;
        const std::size_t bh = row / H;
        const T* vbase = v.data() + bh * H * W * C;
        const T* arow = attn.data() + (bh * H + y) * W * kk;
        T* orow = out.data() + (bh * H + y) * W * C;
        const int* nys = map.row_indices(static_cast<int>(y));
        for (std::size_t x = 0; x < W; ++x) {
            const int* nxs = map.col_indices(static_cast<int>(x));
            std::fill(acc.begin(), acc.end(), 0.0);
            const T* av = arow + x * kk;
            for (int ty = 0; ty < k; ++ty) {
                const T* vrow = vbase + static_cast<std::size_t>(nys[ty]) * W * C;
                for (int tx = 0; tx < k; ++tx) {
                    const double a = static_cast<double>(av[ty * k + tx]);
                    const T* vv = vrow + static_cast<std::size_t>(nxs[tx]) * C;
                    for (std::size_t c = 0; c < C; ++c) acc[c] += a * vv[c];
                }
            }
            for (std::size_t c = 0; c < C; ++c) orow[x * C + c] = static_cast<T>(acc[c]);
        }
    });
    return out;
}

template <typename T>
struct Na2dQkGrads {
    Tensor<T> q, kt, rpb;
};

// Adjoints of na2d_qk. Scatter-adds run sequentially in (b,h,y,x,t) order,
// so the rpb cotangent accumulation is deterministic.
template <typename T>
Na2dQkGrads<T> na2d_qk_vjp(const Tensor<T>& q, const Tensor<T>& kt, const NeighborhoodIndexMap& map,
                           const Tensor<T>& rpb, const Tensor<T>& upstream) {
    detail::check_na_operand(q, map, "na2d_qk_vjp(q)");
    require_same_shape(q, kt, "na2d_qk_vjp");
    const std::size_t B = q.extent(0), h = q.extent(1), H = q.extent(2), W = q.extent(3), C = q.extent(4);
    const int k = map.kernel();
    const std::size_t kk = static_cast<std::size_t>(k) * k;
    const std::size_t span = 2 * static_cast<std::size_t>(k) - 1;
    detail::check_rpb(rpb, h, k, "na2d_qk_vjp");
    if (upstream.shape() != Shape{B, h, H, W, kk}) throw DimensionError("na2d_qk_vjp: upstream shape mismatch");

    Na2dQkGrads<T> grads{Tensor<T>(q.shape()), Tensor<T>(kt.shape()), Tensor<T>(rpb.shape())};
    for (std::size_t bh = 0; bh < B * h; ++bh) {
        const std::size_t head = bh % h;
        const T* qb = q.data() + bh * H * W * C;
        const T* kb = kt.data() + bh * H * W * C;
        const T* gb = upstream.data() + bh * H * W * kk;
        T* dqb = grads.q.data() + bh * H * W * C;
        T* dkb = grads.kt.data() + bh * H * W * C;
        T* drpb = grads.rpb.data() + head * span * span;
        for (std::size_t y = 0; y < H; ++y) {
            const int* nys = map.row_indices(static_cast<int>(y));
            const int* rys = map.row_rpb(static_cast<int>(y));
            for (std::size_t x = 0; x < W; ++x) {
                const int* nxs = map.col_indices(static_cast<int>(x));
                const int* rxs = map.col_rpb(static_cast<int>(x));
                const T* gv = gb + (y * W + x) * kk;
                const T* qv = qb + (y * W + x) * C;
                T* dqv = dqb + (y * W + x) * C;
                for (int ty = 0; ty < k; ++ty) {
                    for (int tx = 0; tx < k; ++tx) {
                        const T g = gv[ty * k + tx];
                        const std::size_t noff = (static_cast<std::size_t>(nys[ty]) * W + nxs[tx]) * C;
                        const T* kv = kb + noff;
                        T* dkv = dkb + noff;
                        for (std::size_t c = 0; c < C; ++c) {
                            dqv[c] += g * kv[c];
                            dkv[c] += g * qv[c];
                        }
                        drpb[rys[ty] * span + rxs[tx]] += g;
                    }
                }
            }
        }
    }
    return grads;
}

template <typename T>
struct Na2dAvGrads {
    Tensor<T> attn, v;
};

template <typename T>
Na2dAvGrads<T> na2d_av_vjp(const Tensor<T>& attn, const Tensor<T>& v, const NeighborhoodIndexMap& map,
                           const Tensor<T>& upstream) {
    detail::check_na_operand(v, map, "na2d_av_vjp(v)");
    require_same_shape(v, upstream, "na2d_av_vjp");
    const std::size_t B = v.extent(0), h = v.extent(1), H = v.extent(2), W = v.extent(3), C = v.extent(4);
    const int k = map.kernel();
    const std::size_t kk = static_cast<std::size_t>(k) * k;
    if (attn.shape() != Shape{B, h, H, W, kk}) throw DimensionError("na2d_av_vjp: attn shape mismatch");

    Na2dAvGrads<T> grads{Tensor<T>(attn.shape()), Tensor<T>(v.shape())};
    for (std::size_t bh = 0; bh < B * h; ++bh) {
        const T* vb = v.data() + bh * H * W * C;
        const T* ab = attn.data() + bh * H * W * kk;
        const T* gb = upstream.data() + bh * H * W * C;
        T* dab = grads.attn.data() + bh * H * W * kk;
        T* dvb = grads.v.data() + bh * H * W * C;
        for (std::size_t y = 0; y < H; ++y) {
            const int* nys = map.row_indices(static_cast<int>(y));
            for (std::size_t x = 0; x < W; ++x) {
                const int* nxs = map.col_indices(static_cast<int>(x));
                const T* gv = gb + (y * W + x) * C;
                const T* av = ab + (y * W + x) * kk;
                T* dav = dab + (y * W + x) * kk;
                for (int ty = 0; ty < k; ++ty) {
                    for (int tx = 0; tx < k; ++tx) {
                        const std::size_t noff = (static_cast<std::size_t>(nys[ty]) * W + nxs[tx]) * C;
                        const T* vv = vb + noff;
                        T* dvv = dvb + noff;
                        double dot = 0.0;
                        const double a = static_cast<double>(av[ty * k + tx]);
                        for (std::size_t c = 0; c < C; ++c) {
                            dot += static_cast<double>(gv[c]) * vv[c];
                            dvv[c] += static_cast<T>(a * gv[c]);
                        }
                        dav[ty * k + tx] = static_cast<T>(dot);
                    }
                }
            }
        }
    }
    return grads;
}

// Brute-force reference: NA realized as dense self attention over all
// H*W tokens with out-of-neighborhood logits forced to a large negative
// constant before the max-subtracted softmax. Internals run entirely in
// double and cast back at the end.
template <typename T>
Tensor<T> dense_masked_attention(const Tensor<T>& q, const Tensor<T>& kt, const Tensor<T>& v,
                                 const NeighborhoodIndexMap& map, const Tensor<T>& rpb, double scale) {
    detail::check_na_operand(q, map, "dense_masked_attention(q)");
    require_same_shape(q, kt, "dense_masked_attention");
    require_same_shape(q, v, "dense_masked_attention");
    const std::size_t B = q.extent(0), h = q.extent(1), H = q.extent(2), W = q.extent(3), C = q.extent(4);
    const int k = map.kernel();
    const std::size_t span = 2 * static_cast<std::size_t>(k) - 1;
    detail::check_rpb(rpb, h, k, "dense_masked_attention");
    const double neg_big = std::is_same_v<T, float> ? -1e30 : -1e300;
    const std::size_t N = H * W;
    Tensor<T> out({B, h, H, W, C});

    parallel_for(B * h, [&](std::size_t bh) {
        const std::size_t head = bh % h;
        const T* qb = q.data() + bh * N * C;
        const T* kb = kt.data() + bh * N * C;
        const T* vb = v.data() + bh * N * C;
        const T* rpb_h = rpb.data() + head * span * span;
        T* ob = out.data() + bh * N * C;
        std::vector<double> logits(N);
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                const std::size_t i = y * W + x;
                std::fill(logits.begin(), logits.end(), neg_big);
                for (int ty = 0; ty < k; ++ty) {
                    const int ny = map.neighbor_y(static_cast<int>(y), ty);
                    const int ry = map.rpb_y(static_cast<int>(y), ty);
                    for (int tx = 0; tx < k; ++tx) {
                        const int nx = map.neighbor_x(static_cast<int>(x), tx);
                        const int rx = map.rpb_x(static_cast<int>(x), tx);
                        const std::size_t j = static_cast<std::size_t>(ny) * W + nx;
                        double dot = 0.0;
                        for (std::size_t c = 0; c < C; ++c)
                            dot += static_cast<double>(qb[i * C + c]) * kb[j * C + c];
                        logits[j] = scale * dot + static_cast<double>(rpb_h[ry * span + rx]);
                    }
                }
                double mx = logits[0];
                for (std::size_t j = 1; j < N; ++j) mx = std::max(mx, logits[j]);
                double sum = 0.0;
                for (std::size_t j = 0; j < N; ++j) {
                    logits[j] = std::exp(logits[j] - mx);
                    sum += logits[j];
                }
                for (std::size_t c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < N; ++j) acc += logits[j] / sum * vb[j * C + c];
                    ob[i * C + c] = static_cast<T>(acc);
                }
            }
        }
    });
    return out;
}

// ---- windowed (Swin-style) baseline ----

// out[b,h,y,x,c] = in[b,h,(y-sy) mod H,(x-sx) mod W,c] (torch.roll semantics).
template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& x, int sy, int sx) {
    if (x.ndim() != 5) throw DimensionError("cyclic_shift: need [B,h,H,W,C']");
    const std::size_t BH = x.extent(0) * x.extent(1), H = x.extent(2), W = x.extent(3), C = x.extent(4);
    auto wrap = [](std::ptrdiff_t v, std::size_t n) {
        std::ptrdiff_t m = v % static_cast<std::ptrdiff_t>(n);
        return static_cast<std::size_t>(m < 0 ? m + static_cast<std::ptrdiff_t>(n) : m);
    };
    Tensor<T> out(x.shape());
    for (std::size_t bh = 0; bh < BH; ++bh)
        for (std::size_t y = 0; y < H; ++y) {
            const std::size_t ys = wrap(static_cast<std::ptrdiff_t>(y) - sy, H);
            for (std::size_t x2 = 0; x2 < W; ++x2) {
                const std::size_t xs = wrap(static_cast<std::ptrdiff_t>(x2) - sx, W);
                const T* src = x.data() + ((bh * H + ys) * W + xs) * C;
                T* dst = out.data() + ((bh * H + y) * W + x2) * C;
                for (std::size_t c = 0; c < C; ++c) dst[c] = src[c];
            }
        }
    return out;
}

// [B,h,H,W,C'] -> [B*(H/ws)*(W/ws), h, ws*ws, C']; windows row-major over
// (H/ws, W/ws), pixels row-major within a window.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, int ws) {
    if (x.ndim() != 5) throw DimensionError("window_partition: need [B,h,H,W,C']");
    const std::size_t B = x.extent(0), h = x.extent(1), H = x.extent(2), W = x.extent(3), C = x.extent(4);
    if (ws <= 0 || H % ws != 0 || W % ws != 0) {
        throw DimensionError("window_partition: window size " + std::to_string(ws) + " must divide " +
                             std::to_string(H) + "x" + std::to_string(W));
    }
    const std::size_t ny = H / ws, nx = W / ws, wsz = static_cast<std::size_t>(ws);
    Tensor<T> out({B * ny * nx, h, wsz * wsz, C});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t hd = 0; hd < h; ++hd)
            for (std::size_t wy = 0; wy < ny; ++wy)
                for (std::size_t wx = 0; wx < nx; ++wx) {
                    const std::size_t bw = (b * ny + wy) * nx + wx;
                    for (std::size_t py = 0; py < wsz; ++py)
                        for (std::size_t px = 0; px < wsz; ++px) {
                            const std::size_t sy = wy * wsz + py, sx = wx * wsz + px;
                            const T* src = x.data() + (((b * h + hd) * H + sy) * W + sx) * C;
                            T* dst = out.data() + ((bw * h + hd) * wsz * wsz + py * wsz + px) * C;
                            for (std::size_t c = 0; c < C; ++c) dst[c] = src[c];
                        }
                }
    return out;
}

// Exact inverse of window_partition.
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& xw, int ws, std::size_t B, std::size_t H, std::size_t W) {
    if (xw.ndim() != 4) throw DimensionError("window_reverse: need [B*nw, h, ws*ws, C']");
    const std::size_t wsz = static_cast<std::size_t>(ws);
    const std::size_t ny = H / wsz, nx = W / wsz;
    if (ws <= 0 || H % wsz != 0 || W % wsz != 0 || xw.extent(0) != B * ny * nx ||
        xw.extent(2) != wsz * wsz) {
        throw DimensionError("window_reverse: leading extent does not factor as B*(H/ws)*(W/ws)");
    }
    const std::size_t h = xw.extent(1), C = xw.extent(3);
    Tensor<T> out({B, h, H, W, C});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t hd = 0; hd < h; ++hd)
            for (std::size_t wy = 0; wy < ny; ++wy)
                for (std::size_t wx = 0; wx < nx; ++wx) {
                    const std::size_t bw = (b * ny + wy) * nx + wx;
                    for (std::size_t py = 0; py < wsz; ++py)
                        for (std::size_t px = 0; px < wsz; ++px) {
                            const std::size_t sy = wy * wsz + py, sx = wx * wsz + px;
                            const T* src = xw.data() + ((bw * h + hd) * wsz * wsz + py * wsz + px) * C;
                            T* dst = out.data() + (((b * h + hd) * H + sy) * W + sx) * C;
                            for (std::size_t c = 0; c < C; ++c) dst[c] = src[c];
                        }
                }
    return out;
}

// Dense attention inside fixed ws x ws tiles with a relative position bias
// table rpb_w[h, 2ws-1, 2ws-1]; q pre-scaled by the caller. With shifted
// set, pixels are cyclically shifted by floor(ws/2) before partitioning and
// shifted back after. No cross-window mask is applied after the shift; the
// baseline deliberately omits it and is excluded from oracle acceptance.
template <typename T>
Tensor<T> window_attention(const Tensor<T>& q, const Tensor<T>& kt, const Tensor<T>& v, int ws,
                           bool shifted, const Tensor<T>& rpb_w) {
    if (q.ndim() != 5) throw DimensionError("window_attention: need [B,h,H,W,C']");
    require_same_shape(q, kt, "window_attention");
    require_same_shape(q, v, "window_attention");
    const std::size_t B = q.extent(0), h = q.extent(1), H = q.extent(2), W = q.extent(3), C = q.extent(4);
    if (ws <= 0 || H % ws != 0 || W % ws != 0) {
        throw DimensionError("window_attention: window size " + std::to_string(ws) + " must divide map");
    }
    const std::size_t span = 2 * static_cast<std::size_t>(ws) - 1;
    if (rpb_w.ndim() != 3 || rpb_w.extent(0) != h || rpb_w.extent(1) != span || rpb_w.extent(2) != span) {
        throw DimensionError("window_attention: rpb shape " + shape_str(rpb_w.shape()) + " mismatch");
    }
    const int shift = shifted ? ws / 2 : 0;
    Tensor<T> qs = shift ? cyclic_shift(q, -shift, -shift) : q;
    Tensor<T> ks = shift ? cyclic_shift(kt, -shift, -shift) : kt;
    Tensor<T> vs = shift ? cyclic_shift(v, -shift, -shift) : v;
    Tensor<T> qw = window_partition(qs, ws);
    Tensor<T> kw = window_partition(ks, ws);
    Tensor<T> vw = window_partition(vs, ws);

    const std::size_t nw = qw.extent(0), tokens = static_cast<std::size_t>(ws) * ws;
    Tensor<T> ow({nw, h, tokens, C});
    std::vector<double> logits(tokens);
    for (std::size_t bw = 0; bw < nw; ++bw) {
        for (std::size_t hd = 0; hd < h; ++hd) {
            const T* qb = qw.data() + (bw * h + hd) * tokens * C;
            const T* kb = kw.data() + (bw * h + hd) * tokens * C;
            const T* vb = vw.data() + (bw * h + hd) * tokens * C;
            const T* rpb_h = rpb_w.data() + hd * span * span;
            T* ob = ow.data() + (bw * h + hd) * tokens * C;
            for (std::size_t i = 0; i < tokens; ++i) {
                const int yi = static_cast<int>(i) / ws, xi = static_cast<int>(i) % ws;
                for (std::size_t j = 0; j < tokens; ++j) {
                    const int yj = static_cast<int>(j) / ws, xj = static_cast<int>(j) % ws;
                    double dot = 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        dot += static_cast<double>(qb[i * C + c]) * kb[j * C + c];
                    logits[j] = dot + rpb_h[(yj - yi + ws - 1) * static_cast<int>(span) + (xj - xi + ws - 1)];
                }
                double mx = logits[0];
                for (std::size_t j = 1; j < tokens; ++j) mx = std::max(mx, logits[j]);
                double sum = 0.0;
                for (std::size_t j = 0; j < tokens; ++j) {
                    logits[j] = std::exp(logits[j] - mx);
                    sum += logits[j];
                }
                for (std::size_t c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < tokens; ++j) acc += logits[j] / sum * vb[j * C + c];
                    ob[i * C + c] = static_cast<T>(acc);
                }
            }
        }
    }
    Tensor<T> out = window_reverse(ow, ws, B, H, W);
    if (shift) out = cyclic_shift(out, shift, shift);
    return out;
}

}  // namespace hnat
