#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hydranat/errors.hpp"
#include "hydranat/na2d.hpp"
#include "hydranat/ops.hpp"
#include "hydranat/tensor.hpp"

namespace hnat {

// Per-head H x W maps extracted from one attention layer's queries and keys.
template <typename T>
struct AttentionMaps {
    Tensor<T> maps;  // [B, n_h, H, W]
    bool normalized = true;
};

// Mean the query over its pixel dimensions, dot the pooled query against
// every key pixel, and (optionally) softmax over the flattened H*W axis.
// `scale` multiplies q before the reduction; pass 1 when q was already
// scaled by the forward pass.
template <typename T>
AttentionMaps<T> na_attention_map(const Tensor<T>& q, const Tensor<T>& kt, double scale, bool normalized) {
    if (q.ndim() != 5) throw DimensionError("na_attention_map: need [B,h,H,W,C'], got " + shape_str(q.shape()));
    require_same_shape(q, kt, "na_attention_map");
    const std::size_t B = q.extent(0), h = q.extent(1), H = q.extent(2), W = q.extent(3), C = q.extent(4);
    Tensor<T> qbar = reduce_mean(scaled(q, static_cast<T>(scale)), {2, 3});  // [B, h, C']
    Tensor<T> logits({B, h, H, W});
    for (std::size_t bh = 0; bh < B * h; ++bh) {
        const T* qb = qbar.data() + bh * C;
        const T* kb = kt.data() + bh * H * W * C;
        T* ob = logits.data() + bh * H * W;
        for (std::size_t p = 0; p < H * W; ++p) {
            double acc = 0.0;
            for (std::size_t c = 0; c < C; ++c) acc += static_cast<double>(qb[c]) * kb[p * C + c];
            ob[p] = static_cast<T>(acc);
        }
    }
    AttentionMaps<T> out;
    out.normalized = normalized;
    if (normalized) {
        out.maps = softmax_last(logits.reshaped({B, h, H * W})).reshaped({B, h, H, W});
    } else {
        out.maps = std::move(logits);
    }
    return out;
}

// Same reduction for windowed attention: un-window q and k (undoing the
// cyclic shift for shifted layers) and reuse the NA map.
template <typename T>
AttentionMaps<T> windowed_attention_map(const Tensor<T>& q_win, const Tensor<T>& k_win, int ws,
                                        std::size_t H, std::size_t W, bool shifted, double scale,
                                        bool normalized = true) {
    if (q_win.ndim() != 4) {
        throw DimensionError("windowed_attention_map: need [B*nw, h, ws*ws, C'], got " + shape_str(q_win.shape()));
    }
    require_same_shape(q_win, k_win, "windowed_attention_map");
    if (ws <= 0 || H % ws != 0 || W % ws != 0) {
        throw DimensionError("windowed_attention_map: window size must divide the map");
    }
    const std::size_t nw = (H / ws) * (W / ws);
    if (q_win.extent(0) % nw != 0) {
        throw DimensionError("windowed_attention_map: leading extent " + std::to_string(q_win.extent(0)) +
                             " does not factor as B*" + std::to_string(nw));
    }
    const std::size_t B = q_win.extent(0) / nw;
    Tensor<T> q = window_reverse(q_win, ws, B, H, W);
    Tensor<T> k = window_reverse(k_win, ws, B, H, W);
    if (shifted) {
        const int shift = ws / 2;
        q = cyclic_shift(q, shift, shift);
        k = cyclic_shift(k, shift, shift);
    }
    return na_attention_map(q, k, scale, normalized);
}

// 8-bit rasters, one per (batch, head) slice in row-major (b, h) order.
// Min/max are taken per head by default or globally over all maps; a
// constant slice renders mid-gray.
template <typename T>
std::vector<std::vector<std::uint8_t>> render_grayscale(const AttentionMaps<T>& maps,
                                                        bool per_head_minmax = true) {
    const auto& m = maps.maps;
    if (m.ndim() != 4) throw DimensionError("render_grayscale: need [B,h,H,W] maps");
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!std::isfinite(static_cast<double>(m[i]))) throw NumericError("render_grayscale: non-finite map");
    }
    const std::size_t slices = m.extent(0) * m.extent(1);
    const std::size_t pixels = m.extent(2) * m.extent(3);
    double gmin = m[0], gmax = m[0];
    for (std::size_t i = 0; i < m.size(); ++i) {
        gmin = std::min(gmin, static_cast<double>(m[i]));
        gmax = std::max(gmax, static_cast<double>(m[i]));
    }
    std::vector<std::vector<std::uint8_t>> rasters(slices);
    for (std::size_t s = 0; s < slices; ++s) {
        const T* src = m.data() + s * pixels;
        double mn = gmin, mx = gmax;
        if (per_head_minmax) {
            mn = mx = src[0];
            for (std::size_t p = 0; p < pixels; ++p) {
                mn = std::min(mn, static_cast<double>(src[p]));
                mx = std::max(mx, static_cast<double>(src[p]));
            }
        }
        auto& out = rasters[s];
        out.resize(pixels);
        if (mx == mn) {
            std::fill(out.begin(), out.end(), std::uint8_t{128});
            continue;
        }
        const double inv = 255.0 / (mx - mn);
        for (std::size_t p = 0; p < pixels; ++p) {
            out[p] = static_cast<std::uint8_t>(std::lround((static_cast<double>(src[p]) - mn) * inv));
        }
    }
    return rasters;
}

}  // namespace hnat
