#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hydranat/errors.hpp"
#include "hydranat/hydra.hpp"
#include "hydranat/ops.hpp"
#include "hydranat/rng.hpp"
#include "hydranat/tensor.hpp"

namespace hnat {

inline bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

inline int int_log2(int v) {
    int l = 0;
    while ((1 << l) < v) ++l;
    return l;
}

// Synthesis-pyramid configuration. Levels run 4, 8, ..., target; level 4
// uses MHSA and every later level derives its partition plan lazily from
// the design tag plus the per-level head count.
struct GeneratorConfig {
    int target = 64;
    std::string design = "2split";  // "2split" | "pyramid"
    std::map<int, int> channels;
    std::map<int, int> heads;
    int min_heads = 4;
    int latent_dim = 512;
    int mapping_layers = 8;
    std::uint64_t seed = 0;
    std::map<int, int> splits_cap;  // optional per-level cap, pyramid only

    std::vector<int> levels() const {
        std::vector<int> out;
        for (int L = 4; L <= target; L *= 2) out.push_back(L);
        return out;
    }

    int channels_at(int level) const {
        auto it = channels.find(level);
        if (it == channels.end()) throw ConfigError("config: no channel count for level " + std::to_string(level));
        return it->second;
    }

    int heads_at(int level) const {
        auto it = heads.find(level);
        if (it == heads.end()) throw ConfigError("config: no head count for level " + std::to_string(level));
        return it->second;
    }

    // Number of dilation doublings available at a level: 8 -> 1, 16 -> 2, ...
    static int doublings(int level) { return int_log2(level) - 2; }

    std::vector<int> dilations_at(int level) const {
        if (level == 4) throw ConfigError("config: level 4 uses MHSA, no dilations");
        if (design == "2split") {
            return {1, std::max(1, level / 8)};
        }
        int n = std::min(doublings(level), heads_at(level));
        auto cap = splits_cap.find(level);
        if (cap != splits_cap.end()) n = std::min(n, cap->second);
        std::vector<int> out;
        for (int p = 0, d = 1; p < n; ++p, d *= 2) out.push_back(d);
        return out;
    }

    // Largest odd kernel <= 7 whose dilated extent fits the level.
    int kernel_at(int level) const {
        const auto dil = dilations_at(level);
        const int dmax = *std::max_element(dil.begin(), dil.end());
        int k = std::min(7, level / dmax);
        if (k % 2 == 0) --k;
        if (k < 1) throw ConfigError("config: no valid kernel at level " + std::to_string(level));
        return k;
    }

    PartitionPlan plan_at(int level) const {
        if (level == 4) throw ConfigError("config: level 4 uses MHSA, no plan");
        const int k = kernel_at(level);
        std::vector<NeighborhoodSpec> specs;
        for (int d : dilations_at(level)) specs.emplace_back(k, d);
        return PartitionPlan::make(heads_at(level), specs);
    }

    void validate() const {
        if (!is_power_of_two(target) || target < 8 || target > 1024) {
            throw ConfigError("config: target must be a power of two in [8, 1024], got " + std::to_string(target));
        }
        if (design != "2split" && design != "pyramid") throw ConfigError("config: unknown design '" + design + "'");
        for (int L : levels()) {
            const int dim = channels_at(L);
            const int nh = heads_at(L);
            if (nh < 1 || dim % nh != 0) {
                throw ConfigError("config: level " + std::to_string(L) + " channels " + std::to_string(dim) +
                                  " not divisible by " + std::to_string(nh) + " heads");
            }
            if (L > 4) {
                auto plan = plan_at(L);
                if (plan.num_splits() > nh) throw InvalidPlanError("config: more splits than heads");
                plan.validate(L, L);
            }
        }
    }
};

namespace detail {

inline int next_pow2(int v) {
    int p = 1;
    while (p < v) p *= 2;
    return p;
}

// Toy-scale channel defaults; full-scale maps are caller-configurable.
inline int default_channels(int level) {
    switch (level) {
        case 4:
        case 8: return 128;
        case 16:
        case 32: return 64;
        case 64: return 32;
        default: return 16;  // levels 128..1024
    }
}

}  // namespace detail

// The two published designs. 2split gives every attention level two equal
// head partitions at dilations (1, L/8); pyramid gives progressively
// doubling dilations 1, 2, 4, ..., L/8 with the count capped by the head
// count (and optionally per level).
inline GeneratorConfig build_config_2split(int target, int min_heads = 4) {
    GeneratorConfig cfg;
    cfg.target = target;
    cfg.design = "2split";
    cfg.min_heads = min_heads;
    if (!is_power_of_two(target) || target < 8 || target > 1024) {
        throw ConfigError("build_config_2split: target must be a power of two in [8, 1024]");
    }
    for (int L : cfg.levels()) {
        cfg.channels[L] = detail::default_channels(L);
        cfg.heads[L] = std::max(min_heads, 2);
    }
    cfg.validate();
    return cfg;
}

inline GeneratorConfig build_config_pyramid(int target, std::map<int, int> splits_cap = {}, int min_heads = 4) {
    GeneratorConfig cfg;
    cfg.target = target;
    cfg.design = "pyramid";
    cfg.min_heads = min_heads;
    cfg.splits_cap = std::move(splits_cap);
    if (!is_power_of_two(target) || target < 8 || target > 1024) {
        throw ConfigError("build_config_pyramid: target must be a power of two in [8, 1024]");
    }
    for (int L : cfg.levels()) {
        cfg.channels[L] = detail::default_channels(L);
        // head counts stay powers of two so they divide the channel maps
        cfg.heads[L] = L == 4 ? std::max(min_heads, 1)
                              : std::max(min_heads, detail::next_pow2(GeneratorConfig::doublings(L)));
    }
    cfg.validate();
    return cfg;
}

template <typename T>
struct LinearParams {
    Tensor<T> w;
    Tensor<T> b;
    bool present() const { return !w.empty(); }
};

// All parameters of the synthesis stack, in the traversal order used for
// seeding, counting and serialization.
template <typename T>
struct GeneratorParams {
    std::vector<LinearParams<T>> mapping;  // latent_dim -> latent_dim blocks

    Tensor<T> constant;  // [C4, 4, 4], broadcast over batch at level 4

    struct Level {
        int resolution = 0;
        LinearParams<T> input_proj;  // only when the channel count changes
        Tensor<T> pos_embed;         // level 4 only: [4, 4, dim]
        LinearParams<T> affine_scale[2], affine_shift[2];  // style -> per-channel s, b
        HydraParams<T> attn[2];
        LinearParams<T> to_rgb;  // [3, dim]
    };
    std::vector<Level> levels;
};

// Applies fn(name, tensor) to every parameter tensor in a fixed order.
template <typename T, typename Fn>
void visit_params(GeneratorParams<T>& params, Fn&& fn) {
    for (std::size_t i = 0; i < params.mapping.size(); ++i) {
        fn("mapping." + std::to_string(i) + ".w", params.mapping[i].w);
        fn("mapping." + std::to_string(i) + ".b", params.mapping[i].b);
    }
    fn("constant", params.constant);
    for (auto& level : params.levels) {
        const std::string base = "level" + std::to_string(level.resolution) + ".";
        if (level.input_proj.present()) {
            fn(base + "input_proj.w", level.input_proj.w);
            fn(base + "input_proj.b", level.input_proj.b);
        }
        if (!level.pos_embed.empty()) fn(base + "pos_embed", level.pos_embed);
        for (int blk = 0; blk < 2; ++blk) {
            const std::string attn = base + "attn" + std::to_string(blk + 1) + ".";
            fn(attn + "affine_scale.w", level.affine_scale[blk].w);
            fn(attn + "affine_scale.b", level.affine_scale[blk].b);
            fn(attn + "affine_shift.w", level.affine_shift[blk].w);
            fn(attn + "affine_shift.b", level.affine_shift[blk].b);
            fn(attn + "qkv.w", level.attn[blk].qkv_weight);
            fn(attn + "qkv.b", level.attn[blk].qkv_bias);
            for (std::size_t p = 0; p < level.attn[blk].rpb.size(); ++p)
                fn(attn + "rpb" + std::to_string(p), level.attn[blk].rpb[p]);
            fn(attn + "proj.w", level.attn[blk].proj_weight);
            fn(attn + "proj.b", level.attn[blk].proj_bias);
        }
        fn(base + "to_rgb.w", level.to_rgb.w);
        fn(base + "to_rgb.b", level.to_rgb.b);
    }
}

// Fresh parameters from one seed: linear weights trunc_normal(std 0.02,
// bounds +-2) with zero biases, the 4x4 constant from unit normal noise.
template <typename T>
GeneratorParams<T> init_generator_params(const GeneratorConfig& cfg, Rng& rng) {
    cfg.validate();
    GeneratorParams<T> params;
    const std::size_t zdim = static_cast<std::size_t>(cfg.latent_dim);

    auto init_linear = [&](std::size_t out, std::size_t in) {
        LinearParams<T> lin{Tensor<T>({out, in}), Tensor<T>({out}, T(0))};
        trunc_normal_fill(lin.w, rng, 0.0, 0.02, -2.0, 2.0);
        return lin;
    };

    for (int i = 0; i < cfg.mapping_layers; ++i) params.mapping.push_back(init_linear(zdim, zdim));

    const std::size_t c4 = static_cast<std::size_t>(cfg.channels_at(4));
    params.constant = Tensor<T>({c4, 4, 4});
    normal_fill(params.constant, rng);

    int prev_channels = cfg.channels_at(4);
    for (int L : cfg.levels()) {
        typename GeneratorParams<T>::Level level;
        level.resolution = L;
        const int dim = cfg.channels_at(L);
        const std::size_t d = static_cast<std::size_t>(dim);
        if (L > 4 && dim != prev_channels) {
            level.input_proj = init_linear(d, static_cast<std::size_t>(prev_channels));
        }
        if (L == 4) {
            level.pos_embed = Tensor<T>({4, 4, d});
            trunc_normal_fill(level.pos_embed, rng, 0.0, 0.02, -2.0, 2.0);
        }
        for (int blk = 0; blk < 2; ++blk) {
            level.affine_scale[blk] = init_linear(d, zdim);
            level.affine_shift[blk] = init_linear(d, zdim);
            if (L == 4) {
                // MHSA shares the qkv/proj layout but carries no RPB
                HydraParams<T>& attn = level.attn[blk];
                attn.qkv_weight = Tensor<T>({3 * d, d});
                trunc_normal_fill(attn.qkv_weight, rng, 0.0, 0.02, -2.0, 2.0);
                attn.qkv_bias = Tensor<T>({3 * d}, T(0));
                attn.proj_weight = Tensor<T>({d, d});
                trunc_normal_fill(attn.proj_weight, rng, 0.0, 0.02, -2.0, 2.0);
                attn.proj_bias = Tensor<T>({d}, T(0));
                attn.scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dim) / cfg.heads_at(4)));
            } else {
                level.attn[blk] = init_hydra_params<T>(dim, cfg.plan_at(L), true, rng);
            }
        }
        level.to_rgb = init_linear(3, d);
        params.levels.push_back(std::move(level));
        prev_channels = dim;
    }
    return params;
}

// Mapping network: pixel-norm of z, then mapping_layers blocks of
// (linear -> leaky_relu 0.2), all latent_dim wide.
template <typename T>
Tensor<T> mapping_forward(const Tensor<T>& z, const GeneratorParams<T>& params) {
    if (z.ndim() != 2) throw DimensionError("mapping_forward: need [B, latent], got " + shape_str(z.shape()));
    const std::size_t B = z.extent(0), D = z.extent(1);
    Tensor<T> x(z.shape());
    for (std::size_t b = 0; b < B; ++b) {
        double ss = 0.0;
        for (std::size_t i = 0; i < D; ++i) ss += static_cast<double>(z(b, i)) * z(b, i);
        const double inv = 1.0 / std::sqrt(ss / static_cast<double>(D) + 1e-8);
        for (std::size_t i = 0; i < D; ++i) x(b, i) = static_cast<T>(z(b, i) * inv);
    }
    for (const auto& layer : params.mapping) x = leaky_relu(linear(x, layer.w, layer.b), 0.2);
    return x;
}

// Adaptive layer norm: per-pixel channel normalization of x, then
// y = norm(x) * (1 + s(w)) + b(w) with s, b per-channel affine maps of the
// style vector.
template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& w, const LinearParams<T>& scale_affine,
                   const LinearParams<T>& shift_affine) {
    if (x.ndim() != 4) throw DimensionError("modulate: need [B,H,W,dim], got " + shape_str(x.shape()));
    const std::size_t B = x.extent(0), H = x.extent(1), W = x.extent(2), dim = x.extent(3);
    if (w.ndim() != 2 || w.extent(0) != B) throw DimensionError("modulate: style shape " + shape_str(w.shape()));
    Tensor<T> s = linear(w, scale_affine.w, scale_affine.b);  // [B, dim]
    Tensor<T> b = linear(w, shift_affine.w, shift_affine.b);
    Tensor<T> y(x.shape());
    for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t p = 0; p < H * W; ++p) {
            const T* xp = x.data() + (bi * H * W + p) * dim;
            T* yp = y.data() + (bi * H * W + p) * dim;
            double mean = 0.0;
            for (std::size_t c = 0; c < dim; ++c) mean += xp[c];
            mean /= static_cast<double>(dim);
            double var = 0.0;
            for (std::size_t c = 0; c < dim; ++c) var += (xp[c] - mean) * (xp[c] - mean);
            var /= static_cast<double>(dim);
            const double inv = 1.0 / std::sqrt(var + 1e-5);
            for (std::size_t c = 0; c < dim; ++c) {
                const double norm = (xp[c] - mean) * inv;
                yp[c] = static_cast<T>(norm * (1.0 + s(bi, c)) + b(bi, c));
            }
        }
    return y;
}

namespace detail {

template <typename T>
Tensor<T> bhwc_to_bchw(const Tensor<T>& x) {
    const std::size_t B = x.extent(0), H = x.extent(1), W = x.extent(2), C = x.extent(3);
    Tensor<T> out({B, C, H, W});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx)
                for (std::size_t c = 0; c < C; ++c) out(b, c, y, xx) = x(b, y, xx, c);
    return out;
}

template <typename T>
Tensor<T> bchw_to_bhwc(const Tensor<T>& x) {
    const std::size_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    Tensor<T> out({B, H, W, C});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx)
                for (std::size_t c = 0; c < C; ++c) out(b, y, xx, c) = x(b, c, y, xx);
    return out;
}

}  // namespace detail

// Attention capture request for one (level, layer) of a synthesis run.
template <typename T>
struct SynthCapture {
    int level = 0;
    int layer = 1;  // 1 or 2
    AttnCapture<T> attn;
    bool filled = false;
};

// Fig-2 style synthesis: learned 4x4 constant, two pre-norm style-modulated
// attention blocks with residuals per level (MHSA at 4x4, Hydra-NA above),
// bilinear feature upsampling between levels and an upsampled running RGB
// skip fed by a per-level 1x1 toRGB.
template <typename T>
Tensor<T> synthesis_forward(const Tensor<T>& w, const GeneratorConfig& cfg, const GeneratorParams<T>& params,
                            SynthCapture<T>* capture = nullptr) {
    cfg.validate();
    if (w.ndim() != 2 || w.extent(1) != static_cast<std::size_t>(cfg.latent_dim)) {
        throw DimensionError("synthesis_forward: style shape " + shape_str(w.shape()));
    }
    const std::size_t B = w.extent(0);
    const auto levels = cfg.levels();
    if (params.levels.size() != levels.size()) {
        throw ConfigError("synthesis_forward: params cover " + std::to_string(params.levels.size()) +
                          " levels, config has " + std::to_string(levels.size()));
    }

    // broadcast the learned constant to [B, 4, 4, C4]
    const std::size_t c4 = params.constant.extent(0);
    Tensor<T> x({B, 4, 4, c4});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t xx = 0; xx < 4; ++xx)
                for (std::size_t c = 0; c < c4; ++c) x(b, y, xx, c) = params.constant(c, y, xx);

    Tensor<T> rgb;
    for (std::size_t li = 0; li < levels.size(); ++li) {
        const int L = levels[li];
        const auto& lv = params.levels[li];
        const int dim = cfg.channels_at(L);
        if (L > 4) {
            x = detail::bchw_to_bhwc(upsample_bilinear_2x(detail::bhwc_to_bchw(x)));
            if (lv.input_proj.present()) {
                x = linear(x, lv.input_proj.w, lv.input_proj.b);
            } else if (x.extent(3) != static_cast<std::size_t>(dim)) {
                throw ConfigError("synthesis_forward: missing input projection at level " + std::to_string(L));
            }
        }
        for (int blk = 0; blk < 2; ++blk) {
            Tensor<T> a = modulate(x, w, lv.affine_scale[blk], lv.affine_shift[blk]);
            if (L == 4) {
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t i = 0; i < lv.pos_embed.size(); ++i)
                        a[b * lv.pos_embed.size() + i] += lv.pos_embed[i];
            }
            AttnCapture<T>* cap = nullptr;
            if (capture && capture->level == L && capture->layer == blk + 1) {
                cap = &capture->attn;
                capture->filled = true;
            }
            Tensor<T> attn_out;
            if (L == 4) {
                attn_out = mhsa_forward(a, cfg.heads_at(4), lv.attn[blk], cap);
            } else {
                HydraOptions<T> opt;
                opt.capture = cap;
                attn_out = hydra_forward(a, cfg.plan_at(L), lv.attn[blk], opt);
            }
            add_inplace(x, attn_out);
        }
        Tensor<T> rgb_l = detail::bhwc_to_bchw(linear(x, lv.to_rgb.w, lv.to_rgb.b));
        if (li == 0) {
            rgb = std::move(rgb_l);
        } else {
            rgb = upsample_bilinear_2x(rgb);
            add_inplace(rgb, rgb_l);
        }
    }
    return rgb;  // [B, 3, target, target], unsquashed
}

// Forward multiply-accumulate count of one synthesis pass at batch B:
// the mapping network, per-level style affines, attention layers (via
// count_macs; dense attention at the 4x4 level), toRGB and input
// projections. Interpolation and normalizations carry no weights and are
// excluded.
inline std::int64_t count_generator_macs(const GeneratorConfig& cfg, int B) {
    cfg.validate();
    const std::int64_t zdim = cfg.latent_dim;
    std::int64_t total = static_cast<std::int64_t>(B) * cfg.mapping_layers * zdim * zdim;
    int prev = cfg.channels_at(4);
    for (int L : cfg.levels()) {
        const std::int64_t dim = cfg.channels_at(L);
        const std::int64_t pixels = static_cast<std::int64_t>(B) * L * L;
        if (L > 4 && dim != prev) total += pixels * dim * prev;
        total += 2 * 2 * static_cast<std::int64_t>(B) * dim * zdim;  // style affines per block
        if (L == 4) {
            const std::int64_t heads = cfg.heads_at(4), cprime = dim / heads, tokens = 16;
            total += 2 * (pixels * 4 * dim * dim + 2 * B * heads * tokens * tokens * cprime);
        } else {
            total += 2 * count_macs(static_cast<int>(dim), cfg.plan_at(L), L, L, B);
        }
        total += pixels * 3 * dim;  // toRGB
        prev = static_cast<int>(dim);
    }
    return total;
}

// Exact closed-form parameter count of the stack described by cfg.
inline std::int64_t count_generator_params(const GeneratorConfig& cfg) {
    cfg.validate();
    const std::int64_t zdim = cfg.latent_dim;
    std::int64_t total = cfg.mapping_layers * (zdim * zdim + zdim);
    total += static_cast<std::int64_t>(cfg.channels_at(4)) * 4 * 4;  // constant
    int prev = cfg.channels_at(4);
    for (int L : cfg.levels()) {
        const std::int64_t dim = cfg.channels_at(L);
        if (L > 4 && dim != prev) total += dim * prev + dim;  // input projection
        if (L == 4) total += 4 * 4 * dim;                     // positional embedding
        for (int blk = 0; blk < 2; ++blk) {
            total += 2 * (dim * zdim + dim);  // style affines (scale, shift)
            if (L == 4) {
                total += 3 * dim * dim + 3 * dim + dim * dim + dim;  // MHSA qkv + proj, no rpb
            } else {
                total += count_params(static_cast<int>(dim), cfg.plan_at(L), true);
            }
        }
        total += 3 * dim + 3;  // toRGB
        prev = static_cast<int>(dim);
    }
    return total;
}

}  // namespace hnat
