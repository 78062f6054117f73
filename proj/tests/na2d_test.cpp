#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>
#include <vector>

#include "hydranat/na2d.hpp"
#include "hydranat/ops.hpp"
#include "testutil.hpp"

using hnat::NeighborhoodSpec;
using hnat::Shape;
using hnat::Tensor;
using testutil::random_uniform;

namespace {

// NA attention core as composed by the hydra layer: scaled-q QK gather,
// softmax over the neighborhood, AV gather.
template <typename T>
Tensor<T> na_core(const Tensor<T>& q, const Tensor<T>& kt, const Tensor<T>& v,
                  const hnat::NeighborhoodIndexMap& map, const Tensor<T>& rpb, double scale) {
    auto logits = hnat::na2d_qk(hnat::scaled(q, static_cast<T>(scale)), kt, map, rpb);
    return hnat::na2d_av(hnat::softmax_last(logits), v, map);
}

}  // namespace

TEST(Na2dQk, ZeroQueryZeroRpbGivesZeroLogits) {
    auto map = hnat::build_index_map(5, 5, {3, 1});
    Tensor<double> q({1, 2, 5, 5, 4}, 0.0);
    hnat::Rng rng(1);
    auto kt = random_uniform<double>({1, 2, 5, 5, 4}, rng);
    Tensor<double> rpb({2, 5, 5}, 0.0);
    auto logits = hnat::na2d_qk(q, kt, map, rpb);
    for (std::size_t i = 0; i < logits.size(); ++i) EXPECT_DOUBLE_EQ(logits[i], 0.0);
}

TEST(Na2dQk, ZeroQueryReproducesRpbGather) {
    auto map = hnat::build_index_map(6, 7, {3, 2});
    Tensor<double> q({1, 1, 6, 7, 3}, 0.0);
    hnat::Rng rng(2);
    auto kt = random_uniform<double>({1, 1, 6, 7, 3}, rng);
    auto rpb = random_uniform<double>({1, 5, 5}, rng);
    auto logits = hnat::na2d_qk(q, kt, map, rpb);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 7; ++x) {
            auto ns = map.neighbors(y, x);
            for (std::size_t t = 0; t < ns.size(); ++t)
                EXPECT_DOUBLE_EQ((logits(0, 0, y, x, static_cast<int>(t))), rpb(0, ns[t].ry, ns[t].rx));
        }
}

TEST(Na2dQk, MatchesBruteForceDotProducts) {
    const int H = 8, W = 9;
    auto map = hnat::build_index_map(H, W, {3, 2});
    hnat::Rng rng(3);
    auto q = random_uniform<double>({2, 2, H, W, 5}, rng);
    auto kt = random_uniform<double>({2, 2, H, W, 5}, rng);
    auto rpb = random_uniform<double>({2, 5, 5}, rng);
    auto logits = hnat::na2d_qk(q, kt, map, rpb);
    for (int b = 0; b < 2; ++b)
        for (int h = 0; h < 2; ++h)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    auto ns = map.neighbors(y, x);
                    for (std::size_t t = 0; t < ns.size(); ++t) {
                        double want = rpb(h, ns[t].ry, ns[t].rx);
                        for (int c = 0; c < 5; ++c) want += q(b, h, y, x, c) * kt(b, h, ns[t].ny, ns[t].nx, c);
                        EXPECT_NEAR((logits(b, h, y, x, static_cast<int>(t))), want, 1e-12);
                    }
                }
}

TEST(Na2dAv, OneHotCenterSelectsValue) {
    const int k = 3;
    auto map = hnat::build_index_map(7, 7, {k, 1});
    hnat::Rng rng(4);
    auto v = random_uniform<double>({1, 1, 7, 7, 4}, rng);
    Tensor<double> attn({1, 1, 7, 7, 9}, 0.0);
    const int y = 3, x = 3;  // interior: centered window, center offset t = 4
    attn(0, 0, y, x, 4) = 1.0;
    auto out = hnat::na2d_av(attn, v, map);
    for (int c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ((out(0, 0, y, x, c)), (v(0, 0, y, x, c)));
}

TEST(Na2dAv, UniformAttentionOnConstantValue) {
    auto map = hnat::build_index_map(6, 6, {3, 1});
    Tensor<double> v({1, 2, 6, 6, 3}, 2.75);
    Tensor<double> attn({1, 2, 6, 6, 9}, 1.0 / 9.0);
    auto out = hnat::na2d_av(attn, v, map);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], 2.75, 1e-12);
}

TEST(Na2dAv, MatchesBruteForceGather) {
    const int H = 7, W = 7;
    auto map = hnat::build_index_map(H, W, {3, 2});
    hnat::Rng rng(5);
    auto v = random_uniform<double>({1, 2, H, W, 4}, rng);
    auto attn = random_uniform<double>({1, 2, H, W, 9}, rng, 0.0, 1.0);
    auto out = hnat::na2d_av(attn, v, map);
    for (int h = 0; h < 2; ++h)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                auto ns = map.neighbors(y, x);
                for (int c = 0; c < 4; ++c) {
                    double want = 0.0;
                    for (std::size_t t = 0; t < ns.size(); ++t)
                        want += attn(0, h, y, x, static_cast<int>(t)) * v(0, h, ns[t].ny, ns[t].nx, c);
                    EXPECT_NEAR((out(0, h, y, x, c)), want, 1e-12);
                }
            }
}

TEST(DenseOracle, ComposedPathMatchesOracle) {
    hnat::Rng rng(6);
    for (int k : {1, 3, 5}) {
        for (int d : {1, 2}) {
            const int H = 10, W = 11;
            if (k * d > std::min(H, W)) continue;
            auto map = hnat::build_index_map(H, W, {k, d});
            const double scale = 0.37;
            auto q = random_uniform<double>({1, 2, H, W, 4}, rng);
            auto kt = random_uniform<double>({1, 2, H, W, 4}, rng);
            auto v = random_uniform<double>({1, 2, H, W, 4}, rng);
            auto rpb = random_uniform<double>({2, static_cast<std::size_t>(2 * k - 1),
                                               static_cast<std::size_t>(2 * k - 1)}, rng);
            auto got = na_core(q, kt, v, map, rpb, scale);
            auto want = hnat::dense_masked_attention(q, kt, v, map, rpb, scale);
            EXPECT_LE(hnat::max_abs_diff(got, want), 1e-12) << "k=" << k << " d=" << d;
        }
    }
}

TEST(DenseOracle, KernelOneReturnsValues) {
    auto map = hnat::build_index_map(6, 6, {1, 1});
    hnat::Rng rng(7);
    auto q = random_uniform<double>({1, 2, 6, 6, 3}, rng);
    auto kt = random_uniform<double>({1, 2, 6, 6, 3}, rng);
    auto v = random_uniform<double>({1, 2, 6, 6, 3}, rng);
    Tensor<double> rpb({2, 1, 1}, 0.0);
    auto out = hnat::dense_masked_attention(q, kt, v, map, rpb, 0.5);
    EXPECT_LE(hnat::max_abs_diff(out, v), 1e-12);
}

TEST(DenseOracle, SaturatedEqualsUnmaskedSelfAttention) {
    const int L = 7;
    auto map = hnat::build_index_map(L, L, {L, 1});
    hnat::Rng rng(8);
    const double scale = 1.0 / std::sqrt(3.0);
    auto q = random_uniform<double>({1, 2, L, L, 3}, rng);
    auto kt = random_uniform<double>({1, 2, L, L, 3}, rng);
    auto v = random_uniform<double>({1, 2, L, L, 3}, rng);
    Tensor<double> rpb({2, 2 * L - 1, 2 * L - 1}, 0.0);
    auto got = hnat::dense_masked_attention(q, kt, v, map, rpb, scale);

    // independent unmasked reference over all L*L tokens
    const int N = L * L;
    for (int h = 0; h < 2; ++h)
        for (int i = 0; i < N; ++i) {
            std::vector<double> logits(N);
            for (int j = 0; j < N; ++j) {
                double dot = 0.0;
                for (int c = 0; c < 3; ++c)
                    dot += q(0, h, i / L, i % L, c) * kt(0, h, j / L, j % L, c);
                logits[j] = scale * dot;
            }
            double mx = *std::max_element(logits.begin(), logits.end());
            double sum = 0.0;
            for (auto& l : logits) {
                l = std::exp(l - mx);
                sum += l;
            }
            for (int c = 0; c < 3; ++c) {
                double want = 0.0;
                for (int j = 0; j < N; ++j) want += logits[j] / sum * v(0, h, j / L, j % L, c);
                EXPECT_NEAR((got(0, h, i / L, i % L, c)), want, 1e-6);
            }
        }
}

TEST(Na2d, InteriorTranslationEquivariance) {
    // Crop two overlapping frames out of one larger field; outputs must
    // agree wherever both queries' windows are unclamped.
    const int H = 12, W = 12, sy = 2, sx = 3;
    for (auto [k, d] : {std::pair{3, 1}, std::pair{3, 2}, std::pair{5, 1}}) {
        const NeighborhoodSpec spec{k, d};
        auto map = hnat::build_index_map(H, W, spec);
        hnat::Rng rng(9);
        auto Q = random_uniform<float>({1, 2, H + sy, W + sx, 4}, rng);
        auto K = random_uniform<float>({1, 2, H + sy, W + sx, 4}, rng);
        auto V = random_uniform<float>({1, 2, H + sy, W + sx, 4}, rng);
        auto rpb = random_uniform<float>({2, static_cast<std::size_t>(2 * k - 1),
                                          static_cast<std::size_t>(2 * k - 1)}, rng);
        auto crop = [&](const Tensor<float>& t, int oy, int ox) {
            Tensor<float> out({1, 2, H, W, 4});
            for (int h = 0; h < 2; ++h)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x)
                        for (int c = 0; c < 4; ++c) out(0, h, y, x, c) = t(0, h, y + oy, x + ox, c);
            return out;
        };
        auto out1 = na_core(crop(Q, 0, 0), crop(K, 0, 0), crop(V, 0, 0), map, rpb, 0.5);
        auto out2 = na_core(crop(Q, sy, sx), crop(K, sy, sx), crop(V, sy, sx), map, rpb, 0.5);
        int compared = 0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                // frame-2 query (y,x) is frame-1 query (y+sy,x+sx)
                if (y + sy >= H || x + sx >= W) continue;
                const bool ok1 = hnat::window_unclamped(H, spec, y + sy) && hnat::window_unclamped(W, spec, x + sx);
                const bool ok2 = hnat::window_unclamped(H, spec, y) && hnat::window_unclamped(W, spec, x);
                if (!ok1 || !ok2) continue;
                ++compared;
                for (int h = 0; h < 2; ++h)
                    for (int c = 0; c < 4; ++c)
                        ASSERT_NEAR((out1(0, h, y + sy, x + sx, c)), (out2(0, h, y, x, c)), 1e-6f);
            }
        EXPECT_GT(compared, 0) << "k=" << k << " d=" << d;
    }
}

TEST(Na2d, ParallelWorkersMatchSequentialBitwise) {
    const auto& map = hnat::cached_index_map(9, 9, {3, 2});
    hnat::Rng rng(99);
    auto q = random_uniform<float>({2, 3, 9, 9, 4}, rng);
    auto kt = random_uniform<float>({2, 3, 9, 9, 4}, rng);
    auto v = random_uniform<float>({2, 3, 9, 9, 4}, rng);
    auto rpb = random_uniform<float>({3, 5, 5}, rng);
    auto seq_logits = hnat::na2d_qk(q, kt, map, rpb);
    auto seq_out = hnat::na2d_av(hnat::softmax_last(seq_logits), v, map);
    hnat::set_thread_cap(4);
    auto par_logits = hnat::na2d_qk(q, kt, map, rpb);
    auto par_out = hnat::na2d_av(hnat::softmax_last(par_logits), v, map);
    hnat::set_thread_cap(1);
    EXPECT_EQ(par_logits.vec(), seq_logits.vec());
    EXPECT_EQ(par_out.vec(), seq_out.vec());
}

TEST(Na2dVjp, ZeroUpstreamGivesZeroCotangents) {
    auto map = hnat::build_index_map(5, 5, {3, 1});
    hnat::Rng rng(10);
    auto q = random_uniform<double>({1, 1, 5, 5, 3}, rng);
    auto kt = random_uniform<double>({1, 1, 5, 5, 3}, rng);
    auto rpb = random_uniform<double>({1, 5, 5}, rng);
    Tensor<double> zero({1, 1, 5, 5, 9}, 0.0);
    auto grads = hnat::na2d_qk_vjp(q, kt, map, rpb, zero);
    for (std::size_t i = 0; i < grads.q.size(); ++i) EXPECT_DOUBLE_EQ(grads.q[i], 0.0);
    for (std::size_t i = 0; i < grads.kt.size(); ++i) EXPECT_DOUBLE_EQ(grads.kt[i], 0.0);
    for (std::size_t i = 0; i < grads.rpb.size(); ++i) EXPECT_DOUBLE_EQ(grads.rpb[i], 0.0);
}

TEST(Na2dVjp, SinglePixelUpstreamTouchesOnlyItsNeighborhood) {
    const int H = 9, W = 9, k = 3;
    auto map = hnat::build_index_map(H, W, {k, 2});
    hnat::Rng rng(11);
    auto q = random_uniform<double>({1, 1, H, W, 3}, rng);
    auto kt = random_uniform<double>({1, 1, H, W, 3}, rng);
    auto rpb = random_uniform<double>({1, 5, 5}, rng);
    Tensor<double> up({1, 1, H, W, 9}, 0.0);
    const int qy = 4, qx = 5;
    for (int t = 0; t < 9; ++t) up(0, 0, qy, qx, t) = 1.0;
    auto grads = hnat::na2d_qk_vjp(q, kt, map, rpb, up);
    std::set<std::pair<int, int>> allowed;
    for (const auto& n : map.neighbors(qy, qx)) allowed.insert({n.ny, n.nx});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const bool in_hood = allowed.count({y, x}) > 0;
            double mag = 0.0;
            for (int c = 0; c < 3; ++c) mag += std::abs(grads.kt(0, 0, y, x, c));
            if (!in_hood) { EXPECT_DOUBLE_EQ(mag, 0.0); }
        }
    // the query grad is confined to the query pixel itself
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (y == qy && x == qx) continue;
            for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ((grads.q(0, 0, y, x, c)), 0.0);
        }
}

TEST(Na2dVjp, QkMatchesFiniteDifferences) {
    auto map = hnat::build_index_map(6, 7, {3, 2});
    hnat::Rng rng(12);
    auto q = random_uniform<double>({1, 2, 6, 7, 3}, rng);
    auto kt = random_uniform<double>({1, 2, 6, 7, 3}, rng);
    auto rpb = random_uniform<double>({2, 5, 5}, rng);
    auto up = random_uniform<double>({1, 2, 6, 7, 9}, rng);
    auto grads = hnat::na2d_qk_vjp(q, kt, map, rpb, up);
    auto loss = [&] { return testutil::inner(hnat::na2d_qk(q, kt, map, rpb), up); };
    EXPECT_LT(testutil::max_fd_rel_err(q, grads.q, loss), 1e-6);
    EXPECT_LT(testutil::max_fd_rel_err(kt, grads.kt, loss), 1e-6);
    EXPECT_LT(testutil::max_fd_rel_err(rpb, grads.rpb, loss), 1e-6);
}

TEST(Na2dVjp, AvMatchesFiniteDifferences) {
    auto map = hnat::build_index_map(6, 7, {3, 2});
    hnat::Rng rng(13);
    auto attn = random_uniform<double>({1, 2, 6, 7, 9}, rng, 0.0, 1.0);
    auto v = random_uniform<double>({1, 2, 6, 7, 3}, rng);
    auto up = random_uniform<double>({1, 2, 6, 7, 3}, rng);
    auto grads = hnat::na2d_av_vjp(attn, v, map, up);
    auto loss = [&] { return testutil::inner(hnat::na2d_av(attn, v, map), up); };
    EXPECT_LT(testutil::max_fd_rel_err(attn, grads.attn, loss), 1e-6);
    EXPECT_LT(testutil::max_fd_rel_err(v, grads.v, loss), 1e-6);
}

TEST(Na2dVjp, AdjointIdentityAgainstJvp) {
    // <VJP(U), tangent> == directional derivative of <f, U> along tangent
    auto map = hnat::build_index_map(5, 5, {3, 1});
    hnat::Rng rng(14);
    auto q = random_uniform<double>({1, 1, 5, 5, 3}, rng);
    auto kt = random_uniform<double>({1, 1, 5, 5, 3}, rng);
    auto rpb = random_uniform<double>({1, 5, 5}, rng);
    auto up = random_uniform<double>({1, 1, 5, 5, 9}, rng);
    auto tangent = random_uniform<double>({1, 1, 5, 5, 3}, rng);
    auto grads = hnat::na2d_qk_vjp(q, kt, map, rpb, up);
    const double lhs = testutil::inner(grads.q, tangent);
    const double h = 1e-6;
    auto qp = q, qm = q;
    for (std::size_t i = 0; i < q.size(); ++i) {
        qp[i] += h * tangent[i];
        qm[i] -= h * tangent[i];
    }
    const double rhs = (testutil::inner(hnat::na2d_qk(qp, kt, map, rpb), up) -
                        testutil::inner(hnat::na2d_qk(qm, kt, map, rpb), up)) /
                       (2.0 * h);
    EXPECT_LT(testutil::rel_err(lhs, rhs), 1e-5);
}

// ---- windowed (Swin-style) baseline ----

TEST(WindowOps, PartitionReverseRoundTrip) {
    hnat::Rng rng(15);
    auto x = random_uniform<float>({2, 3, 8, 8, 5}, rng);
    auto xw = hnat::window_partition(x, 4);
    EXPECT_EQ(xw.shape(), (Shape{2 * 2 * 2, 3, 16, 5}));
    auto back = hnat::window_reverse(xw, 4, 2, 8, 8);
    EXPECT_EQ(back.vec(), x.vec());
}

TEST(WindowOps, ShiftRoundTrip) {
    hnat::Rng rng(16);
    auto x = random_uniform<float>({1, 2, 6, 6, 3}, rng);
    auto shifted = hnat::cyclic_shift(x, -2, -2);
    auto back = hnat::cyclic_shift(shifted, 2, 2);
    EXPECT_EQ(back.vec(), x.vec());
    EXPECT_EQ((shifted(0, 0, 0, 0, 0)), (x(0, 0, 2, 2, 0)));
}

TEST(WindowAttention, SingleWindowEqualsSaturatedDense) {
    const int L = 5;
    hnat::Rng rng(17);
    auto q = random_uniform<double>({1, 2, L, L, 3}, rng);
    auto kt = random_uniform<double>({1, 2, L, L, 3}, rng);
    auto v = random_uniform<double>({1, 2, L, L, 3}, rng);
    auto rpb = random_uniform<double>({2, 2 * L - 1, 2 * L - 1}, rng);
    auto got = hnat::window_attention(q, kt, v, L, false, rpb);
    auto map = hnat::build_index_map(L, L, {L, 1});
    auto want = hnat::dense_masked_attention(q, kt, v, map, rpb, 1.0);
    EXPECT_LE(hnat::max_abs_diff(got, want), 1e-12);
}

TEST(WindowAttention, ConstantValuePassesThrough) {
    hnat::Rng rng(18);
    auto q = random_uniform<double>({1, 1, 8, 8, 3}, rng);
    auto kt = random_uniform<double>({1, 1, 8, 8, 3}, rng);
    Tensor<double> v({1, 1, 8, 8, 3}, -1.25);
    auto rpb = random_uniform<double>({1, 7, 7}, rng);
    auto out = hnat::window_attention(q, kt, v, 4, false, rpb);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], -1.25, 1e-12);
}

TEST(WindowAttention, PerWindowMatchesDenseOracle) {
    const int H = 4, W = 4, ws = 2;
    hnat::Rng rng(19);
    auto q = random_uniform<double>({1, 2, H, W, 3}, rng);
    auto kt = random_uniform<double>({1, 2, H, W, 3}, rng);
    auto v = random_uniform<double>({1, 2, H, W, 3}, rng);
    auto rpb = random_uniform<double>({2, 3, 3}, rng);
    auto got = hnat::window_attention(q, kt, v, ws, false, rpb);
    // every ws x ws tile, run standalone as a saturated dense instance
    auto tile = [&](const Tensor<double>& t, int wy, int wx) {
        Tensor<double> out({1, 2, ws, ws, 3});
        for (int h = 0; h < 2; ++h)
            for (int py = 0; py < ws; ++py)
                for (int px = 0; px < ws; ++px)
                    for (int c = 0; c < 3; ++c)
                        out(0, h, py, px, c) = t(0, h, wy * ws + py, wx * ws + px, c);
        return out;
    };
    auto wmap = hnat::build_index_map(ws, ws, {ws, 1});  // saturated even kernel
    for (int wy = 0; wy < H / ws; ++wy)
        for (int wx = 0; wx < W / ws; ++wx) {
            auto want = hnat::dense_masked_attention(tile(q, wy, wx), tile(kt, wy, wx), tile(v, wy, wx),
                                                     wmap, rpb, 1.0);
            for (int h = 0; h < 2; ++h)
                for (int py = 0; py < ws; ++py)
                    for (int px = 0; px < ws; ++px)
                        for (int c = 0; c < 3; ++c)
                            EXPECT_NEAR((got(0, h, wy * ws + py, wx * ws + px, c)),
                                        (want(0, h, py, px, c)), 1e-12);
        }
}

TEST(WindowAttention, ShiftedRunsAndUnshifts) {
    hnat::Rng rng(20);
    auto q = random_uniform<double>({1, 1, 8, 8, 3}, rng);
    auto kt = random_uniform<double>({1, 1, 8, 8, 3}, rng);
    auto v = random_uniform<double>({1, 1, 8, 8, 3}, rng);
    auto rpb = random_uniform<double>({1, 7, 7}, rng);
    auto out = hnat::window_attention(q, kt, v, 4, true, rpb);
    EXPECT_EQ(out.shape(), q.shape());
    // shifting all inputs by the window shift and disabling `shifted`
    // reproduces the shifted output rolled by the same amount
    auto qs = hnat::cyclic_shift(q, -2, -2);
    auto ks = hnat::cyclic_shift(kt, -2, -2);
    auto vs = hnat::cyclic_shift(v, -2, -2);
    auto manual = hnat::cyclic_shift(hnat::window_attention(qs, ks, vs, 4, false, rpb), 2, 2);
    EXPECT_LE(hnat::max_abs_diff(out, manual), 0.0);
    EXPECT_THROW(hnat::window_attention(q, kt, v, 3, false, rpb), hnat::DimensionError);
}
