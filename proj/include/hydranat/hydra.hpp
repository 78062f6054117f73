#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hydranat/errors.hpp"
#include "hydranat/na2d.hpp"
#include "hydranat/neighborhood.hpp"
#include "hydranat/ops.hpp"
#include "hydranat/rng.hpp"
#include "hydranat/tensor.hpp"

namespace hnat {

// Head counts per partition. The clean branch gives every split
// num_heads/num_splits heads; otherwise the first (num_splits - diff)
// splits keep the floor and the tail splits absorb the remainder, one
// extra head each.
inline std::vector<int> partition_heads(int num_heads, int num_splits) {
    if (num_splits < 1 || num_splits > num_heads) {
        throw InvalidPlanError("partition_heads: need 1 <= num_splits <= num_heads, got " +
                               std::to_string(num_splits) + " splits for " + std::to_string(num_heads) +
                               " heads");
    }
    const int base = num_heads / num_splits;
    const int diff = num_heads - num_splits * base;
    std::vector<int> counts(num_splits, base);
    for (int p = num_splits - diff; p < num_splits; ++p) counts[p] = base + 1;
    return counts;
}

// Ordered head-count / neighborhood assignment for one Hydra-NA layer.
struct PartitionPlan {
    int num_heads = 0;
    std::vector<std::pair<int, NeighborhoodSpec>> partitions;

    static PartitionPlan make(int num_heads, const std::vector<NeighborhoodSpec>& specs) {
        PartitionPlan plan;
        plan.num_heads = num_heads;
        auto counts = partition_heads(num_heads, static_cast<int>(specs.size()));
        for (std::size_t p = 0; p < specs.size(); ++p) plan.partitions.emplace_back(counts[p], specs[p]);
        return plan;
    }

    int num_splits() const { return static_cast<int>(partitions.size()); }

    void validate(int H, int W) const {
        int total = 0;
        for (const auto& [hc, spec] : partitions) {
            if (hc < 1) throw InvalidPlanError("PartitionPlan: head counts must be >= 1");
            validate_spec(spec, H, W);
            total += hc;
        }
        if (total != num_heads) {
            throw InvalidPlanError("PartitionPlan: head counts sum to " + std::to_string(total) + ", expected " +
                                   std::to_string(num_heads));
        }
    }
};

// One layer's parameters. qkv projects dim -> 3*dim, heads are sliced
// contiguously in plan order, each partition owns an RPB table of extent
// [head_count, 2k-1, 2k-1].
template <typename T>
struct HydraParams {
    Tensor<T> qkv_weight;        // [3*dim, dim]
    Tensor<T> qkv_bias;          // [3*dim], empty when disabled
    std::vector<Tensor<T>> rpb;  // per partition
    Tensor<T> proj_weight;       // [dim, dim]
    Tensor<T> proj_bias;         // [dim]
    T scale = T(0);              // applied to q before the QK gather
};

// Linear weights draw from trunc_normal(std 0.02, bounds +-2), biases are
// zero, RPB tables use the same truncated init. Scale defaults to
// head_dim^(-1/2) unless overridden.
template <typename T>
HydraParams<T> init_hydra_params(int dim, const PartitionPlan& plan, bool qkv_bias, Rng& rng,
                                 std::optional<double> qk_scale = std::nullopt) {
    if (dim <= 0 || plan.num_heads <= 0 || dim % plan.num_heads != 0) {
        throw DimensionError("init_hydra_params: dim " + std::to_string(dim) + " not divisible by " +
                             std::to_string(plan.num_heads) + " heads");
    }
    HydraParams<T> p;
    const std::size_t d = static_cast<std::size_t>(dim);
    p.qkv_weight = Tensor<T>({3 * d, d});
    trunc_normal_fill(p.qkv_weight, rng, 0.0, 0.02, -2.0, 2.0);
    if (qkv_bias) p.qkv_bias = Tensor<T>({3 * d}, T(0));
    for (const auto& [hc, spec] : plan.partitions) {
        const std::size_t span = 2 * static_cast<std::size_t>(spec.kernel) - 1;
        Tensor<T> table({static_cast<std::size_t>(hc), span, span});
        trunc_normal_fill(table, rng, 0.0, 0.02, -2.0, 2.0);
        p.rpb.push_back(std::move(table));
    }
    p.proj_weight = Tensor<T>({d, d});
    trunc_normal_fill(p.proj_weight, rng, 0.0, 0.02, -2.0, 2.0);
    p.proj_bias = Tensor<T>({d}, T(0));
    const double head_dim = static_cast<double>(dim) / plan.num_heads;
    p.scale = static_cast<T>(qk_scale ? *qk_scale : 1.0 / std::sqrt(head_dim));
    return p;
}

// Scaled queries and keys of one forward call, concatenated over all heads
// in plan order; filled only when a capture buffer is attached.
template <typename T>
struct AttnCapture {
    Tensor<T> q;   // [B, heads, H, W, C'], already multiplied by scale
    Tensor<T> kt;  // [B, heads, H, W, C']
};

template <typename T>
struct HydraOptions {
    bool deterministic = true;  // forces both dropouts off
    double attn_drop = 0.0;
    double proj_drop = 0.0;
    Rng* rng = nullptr;               // required when a dropout rate is active
    AttnCapture<T>* capture = nullptr;
};

namespace detail {

// qkv last axis is laid out [3, heads, C']: component s of head h, channel
// c sits at s*dim + h*C' + c.
template <typename T>
void split_qkv(const Tensor<T>& qkv, std::size_t heads, std::size_t cprime, T q_scale, Tensor<T>& q,
               Tensor<T>& k, Tensor<T>& v) {
    const std::size_t B = qkv.extent(0), H = qkv.extent(1), W = qkv.extent(2);
    const std::size_t dim = heads * cprime;
    const Shape shape{B, heads, H, W, cprime};
    q = Tensor<T>(shape);
    k = Tensor<T>(shape);
    v = Tensor<T>(shape);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const T* src = qkv.data() + ((b * H + y) * W + x) * 3 * dim;
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t dst = (((b * heads + h) * H + y) * W + x) * cprime;
                    for (std::size_t c = 0; c < cprime; ++c) {
                        q[dst + c] = src[h * cprime + c] * q_scale;
                        k[dst + c] = src[dim + h * cprime + c];
                        v[dst + c] = src[2 * dim + h * cprime + c];
                    }
                }
            }
}

// Adjoint of split_qkv: packs (dq*scale, dk, dv) back into qkv layout.
template <typename T>
Tensor<T> merge_qkv_grads(const Tensor<T>& dq, const Tensor<T>& dk, const Tensor<T>& dv, T q_scale) {
    const std::size_t B = dq.extent(0), heads = dq.extent(1), H = dq.extent(2), W = dq.extent(3),
                      cprime = dq.extent(4);
    const std::size_t dim = heads * cprime;
    Tensor<T> out({B, H, W, 3 * dim});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                T* dst = out.data() + ((b * H + y) * W + x) * 3 * dim;
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t src = (((b * heads + h) * H + y) * W + x) * cprime;
                    for (std::size_t c = 0; c < cprime; ++c) {
                        dst[h * cprime + c] = dq[src + c] * q_scale;
                        dst[dim + h * cprime + c] = dk[src + c];
                        dst[2 * dim + h * cprime + c] = dv[src + c];
                    }
                }
            }
    return out;
}

template <typename T>
Tensor<T> slice_heads(const Tensor<T>& t, std::size_t h0, std::size_t hc) {
    const std::size_t B = t.extent(0), heads = t.extent(1);
    const std::size_t inner = t.size() / (B * heads);
    Shape shape = t.shape();
    shape[1] = hc;
    Tensor<T> out(shape);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < hc; ++h)
            std::copy_n(t.data() + (b * heads + h0 + h) * inner, inner, out.data() + (b * hc + h) * inner);
    return out;
}

template <typename T>
void paste_heads(Tensor<T>& dst, const Tensor<T>& src, std::size_t h0) {
    const std::size_t B = dst.extent(0), heads = dst.extent(1), hc = src.extent(1);
    const std::size_t inner = dst.size() / (B * heads);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < hc; ++h)
            std::copy_n(src.data() + (b * hc + h) * inner, inner, dst.data() + (b * heads + h0 + h) * inner);
}

// [B, heads, H, W, C'] -> [B, H, W, heads*C']
template <typename T>
Tensor<T> heads_to_channels(const Tensor<T>& t) {
    const std::size_t B = t.extent(0), heads = t.extent(1), H = t.extent(2), W = t.extent(3),
                      cprime = t.extent(4);
    Tensor<T> out({B, H, W, heads * cprime});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x)
                    std::copy_n(t.data() + (((b * heads + h) * H + y) * W + x) * cprime, cprime,
                                out.data() + (((b * H + y) * W + x) * heads + h) * cprime);
    return out;
}

// [B, H, W, heads*C'] -> [B, heads, H, W, C']
template <typename T>
Tensor<T> channels_to_heads(const Tensor<T>& t, std::size_t heads) {
    const std::size_t B = t.extent(0), H = t.extent(1), W = t.extent(2), dim = t.extent(3);
    const std::size_t cprime = dim / heads;
    Tensor<T> out({B, heads, H, W, cprime});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x)
                    std::copy_n(t.data() + (((b * H + y) * W + x) * heads + h) * cprime, cprime,
                                out.data() + (((b * heads + h) * H + y) * W + x) * cprime);
    return out;
}

template <typename T>
void inverted_dropout(Tensor<T>& t, double rate, Rng& rng) {
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = rng.next_unit() <= rate ? T(0) : t[i] * keep_scale;
    }
}

template <typename T>
void check_hydra_args(const Tensor<T>& x, const PartitionPlan& plan, const HydraParams<T>& params) {
    if (x.ndim() != 4) throw DimensionError("hydra_forward: need [B,H,W,dim], got " + shape_str(x.shape()));
    const std::size_t dim = x.extent(3);
    plan.validate(static_cast<int>(x.extent(1)), static_cast<int>(x.extent(2)));
    if (plan.num_heads <= 0 || dim % plan.num_heads != 0) {
        throw DimensionError("hydra_forward: dim " + std::to_string(dim) + " not divisible by " +
                             std::to_string(plan.num_heads) + " heads");
    }
    if (params.qkv_weight.shape() != Shape{3 * dim, dim}) {
        throw DimensionError("hydra_forward: qkv weight shape " + shape_str(params.qkv_weight.shape()));
    }
    if (params.proj_weight.shape() != Shape{dim, dim}) {
        throw DimensionError("hydra_forward: proj weight shape " + shape_str(params.proj_weight.shape()));
    }
    if (params.rpb.size() != plan.partitions.size()) {
        throw DimensionError("hydra_forward: plan has " + std::to_string(plan.partitions.size()) +
                             " partitions but params carry " + std::to_string(params.rpb.size()) +
                             " rpb tables");
    }
}

}  // namespace detail

// Saved intermediates of one deterministic forward, as consumed by
// hydra_backward.
template <typename T>
struct HydraTape {
    bool valid = false;
    PartitionPlan plan;
    Tensor<T> x;                      // layer input
    Tensor<T> qkv_weight, proj_weight;
    bool has_qkv_bias = false;
    T scale = T(0);
    Tensor<T> q_scaled, k, v;         // [B, heads, H, W, C']
    std::vector<Tensor<T>> attn;      // per-partition softmax outputs
    Tensor<T> attn_out;               // [B, H, W, dim], pre-projection
};

// The Hydra-NA layer: shared qkv, per-partition neighborhood attention
// with that partition's RPB, concatenation in plan order, output
// projection. Queries are scaled before the QK gather.
template <typename T>
Tensor<T> hydra_forward(const Tensor<T>& x, const PartitionPlan& plan, const HydraParams<T>& params,
                        const HydraOptions<T>& opt = {}, HydraTape<T>* tape = nullptr) {
    detail::check_hydra_args(x, plan, params);
    const std::size_t B = x.extent(0), H = x.extent(1), W = x.extent(2), dim = x.extent(3);
    const std::size_t heads = static_cast<std::size_t>(plan.num_heads);
    const std::size_t cprime = dim / heads;
    const bool drop_active = !opt.deterministic && (opt.attn_drop > 0.0 || opt.proj_drop > 0.0);
    if (drop_active && opt.rng == nullptr) throw ContractError("hydra_forward: dropout needs an rng");
    if (drop_active && tape != nullptr) throw ContractError("hydra_forward: tape requires deterministic mode");

    Tensor<T> qkv = linear(x.reshaped({B * H * W, dim}), params.qkv_weight, params.qkv_bias)
                        .reshaped({B, H, W, 3 * dim});
    Tensor<T> q, k, v;
    detail::split_qkv(qkv, heads, cprime, params.scale, q, k, v);
    if (opt.capture) {
        opt.capture->q = q;
        opt.capture->kt = k;
    }

    Tensor<T> merged({B, heads, H, W, cprime});
    std::vector<Tensor<T>> saved_attn;
    std::size_t h0 = 0;
    for (std::size_t p = 0; p < plan.partitions.size(); ++p) {
        const auto& [hc, spec] = plan.partitions[p];
        const auto& map = cached_index_map(static_cast<int>(H), static_cast<int>(W), spec);
        Tensor<T> qp = detail::slice_heads(q, h0, hc);
        Tensor<T> kp = detail::slice_heads(k, h0, hc);
        Tensor<T> vp = detail::slice_heads(v, h0, hc);
        Tensor<T> attn = softmax_last(na2d_qk(qp, kp, map, params.rpb[p]));
        if (!opt.deterministic && opt.attn_drop > 0.0) detail::inverted_dropout(attn, opt.attn_drop, *opt.rng);
        if (tape) saved_attn.push_back(attn);
        Tensor<T> outp = na2d_av(attn, vp, map);
        detail::paste_heads(merged, outp, h0);
        h0 += hc;
    }

    Tensor<T> attn_out = detail::heads_to_channels(merged);
    Tensor<T> y = linear(attn_out.reshaped({B * H * W, dim}), params.proj_weight, params.proj_bias)
                      .reshaped({B, H, W, dim});
    if (!opt.deterministic && opt.proj_drop > 0.0) detail::inverted_dropout(y, opt.proj_drop, *opt.rng);

    if (tape) {
        tape->valid = true;
        tape->plan = plan;
        tape->x = x;
        tape->qkv_weight = params.qkv_weight;
        tape->proj_weight = params.proj_weight;
        tape->has_qkv_bias = !params.qkv_bias.empty();
        tape->scale = params.scale;
        tape->q_scaled = std::move(q);
        tape->k = std::move(k);
        tape->v = std::move(v);
        tape->attn = std::move(saved_attn);
        tape->attn_out = std::move(attn_out);
    }
    return y;
}

template <typename T>
struct HydraGrads {
    Tensor<T> x;
    Tensor<T> qkv_weight, qkv_bias;
    std::vector<Tensor<T>> rpb;
    Tensor<T> proj_weight, proj_bias;
};

// Exact adjoint of the deterministic hydra_forward.
template <typename T>
HydraGrads<T> hydra_backward(const HydraTape<T>& tape, const Tensor<T>& upstream) {
    if (!tape.valid) throw ContractError("hydra_backward: tape not populated by hydra_forward");
    require_same_shape(tape.x, upstream, "hydra_backward");
    const std::size_t B = tape.x.extent(0), H = tape.x.extent(1), W = tape.x.extent(2), dim = tape.x.extent(3);
    const std::size_t heads = static_cast<std::size_t>(tape.plan.num_heads);

    HydraGrads<T> grads;
    auto proj_grads = linear_vjp(tape.attn_out.reshaped({B * H * W, dim}), tape.proj_weight, true,
                                 upstream.reshaped({B * H * W, dim}));
    grads.proj_weight = std::move(proj_grads.w);
    grads.proj_bias = std::move(proj_grads.bias);
    Tensor<T> d_merged = detail::channels_to_heads(proj_grads.x.reshaped({B, H, W, dim}), heads);

    Tensor<T> dq(tape.q_scaled.shape());
    Tensor<T> dk(tape.k.shape());
    Tensor<T> dv(tape.v.shape());
    std::size_t h0 = 0;
    for (std::size_t p = 0; p < tape.plan.partitions.size(); ++p) {
        const auto& [hc, spec] = tape.plan.partitions[p];
        const auto& map = cached_index_map(static_cast<int>(H), static_cast<int>(W), spec);
        Tensor<T> qp = detail::slice_heads(tape.q_scaled, h0, hc);
        Tensor<T> kp = detail::slice_heads(tape.k, h0, hc);
        Tensor<T> vp = detail::slice_heads(tape.v, h0, hc);
        Tensor<T> d_outp = detail::slice_heads(d_merged, h0, hc);

        auto av_grads = na2d_av_vjp(tape.attn[p], vp, map, d_outp);
        Tensor<T> d_logits = softmax_last_vjp(tape.attn[p], av_grads.attn);
        const std::size_t span = 2 * static_cast<std::size_t>(spec.kernel) - 1;
        Tensor<T> rpb_shape({static_cast<std::size_t>(hc), span, span});
        auto qk_grads = na2d_qk_vjp(qp, kp, map, rpb_shape, d_logits);

        detail::paste_heads(dq, qk_grads.q, h0);
        detail::paste_heads(dk, qk_grads.kt, h0);
        detail::paste_heads(dv, av_grads.v, h0);
        grads.rpb.push_back(std::move(qk_grads.rpb));
        h0 += hc;
    }

    Tensor<T> d_qkv = detail::merge_qkv_grads(dq, dk, dv, tape.scale);
    auto qkv_grads = linear_vjp(tape.x.reshaped({B * H * W, dim}), tape.qkv_weight, tape.has_qkv_bias,
                                d_qkv.reshaped({B * H * W, 3 * dim}));
    grads.x = qkv_grads.x.reshaped({B, H, W, dim});
    grads.qkv_weight = std::move(qkv_grads.w);
    grads.qkv_bias = std::move(qkv_grads.bias);
    return grads;
}

// Parameter count of one layer: qkv + projection + per-partition RPB.
inline std::int64_t count_params(int dim, const PartitionPlan& plan, bool qkv_bias) {
    std::int64_t total = 3LL * dim * dim + (qkv_bias ? 3LL * dim : 0) + 1LL * dim * dim + dim;
    for (const auto& [hc, spec] : plan.partitions) {
        const std::int64_t span = 2LL * spec.kernel - 1;
        total += hc * span * span;
    }
    return total;
}

// Multiply-accumulate count: qkv+proj linears plus the QK and AV gathers.
// Independent of dilation, and of the partition count at equal kernels.
inline std::int64_t count_macs(int dim, const PartitionPlan& plan, int H, int W, int B) {
    const std::int64_t pixels = static_cast<std::int64_t>(B) * H * W;
    const std::int64_t cprime = dim / plan.num_heads;
    std::int64_t total = pixels * 4LL * dim * dim;
    for (const auto& [hc, spec] : plan.partitions) {
        total += pixels * hc * 2LL * spec.kernel * spec.kernel * cprime;
    }
    return total;
}

// Dense multi-head self attention over all H*W tokens with the same
// parameter layout as hydra_forward and no positional term.
template <typename T>
Tensor<T> mhsa_forward(const Tensor<T>& x, int heads, const HydraParams<T>& params,
                       AttnCapture<T>* capture = nullptr) {
    if (x.ndim() != 4) throw DimensionError("mhsa_forward: need [B,H,W,dim], got " + shape_str(x.shape()));
    const std::size_t B = x.extent(0), H = x.extent(1), W = x.extent(2), dim = x.extent(3);
    if (heads <= 0 || dim % static_cast<std::size_t>(heads) != 0) {
        throw DimensionError("mhsa_forward: dim " + std::to_string(dim) + " not divisible by heads");
    }
    const std::size_t nh = static_cast<std::size_t>(heads), cprime = dim / nh, N = H * W;
    if (params.qkv_weight.shape() != Shape{3 * dim, dim}) {
        throw DimensionError("mhsa_forward: qkv weight shape " + shape_str(params.qkv_weight.shape()));
    }
    Tensor<T> qkv = linear(x.reshaped({B * H * W, dim}), params.qkv_weight, params.qkv_bias)
                        .reshaped({B, H, W, 3 * dim});
    Tensor<T> q, k, v;
    detail::split_qkv(qkv, nh, cprime, params.scale, q, k, v);
    if (capture) {
        capture->q = q;
        capture->kt = k;
    }

    Tensor<T> merged({B, nh, H, W, cprime});
    std::vector<double> logits(N);
    for (std::size_t bh = 0; bh < B * nh; ++bh) {
        const T* qb = q.data() + bh * N * cprime;
        const T* kb = k.data() + bh * N * cprime;
        const T* vb = v.data() + bh * N * cprime;
        T* ob = merged.data() + bh * N * cprime;
        for (std::size_t i = 0; i < N; ++i) {
            for (std::size_t j = 0; j < N; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < cprime; ++c)
                    dot += static_cast<double>(qb[i * cprime + c]) * kb[j * cprime + c];
                logits[j] = dot;
            }
            double mx = logits[0];
            for (std::size_t j = 1; j < N; ++j) mx = std::max(mx, logits[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < N; ++j) {
                logits[j] = std::exp(logits[j] - mx);
                sum += logits[j];
            }
            for (std::size_t c = 0; c < cprime; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < N; ++j) acc += logits[j] / sum * vb[j * cprime + c];
                ob[i * cprime + c] = static_cast<T>(acc);
            }
        }
    }
    Tensor<T> attn_out = detail::heads_to_channels(merged);
    return linear(attn_out.reshaped({B * H * W, dim}), params.proj_weight, params.proj_bias)
        .reshaped({B, H, W, dim});
}

}  // namespace hnat
