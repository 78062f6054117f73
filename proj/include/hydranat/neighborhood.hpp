#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

#include "hydranat/errors.hpp"

namespace hnat {

// Kernel size and dilation of one attention partition.
struct NeighborhoodSpec {
    int kernel;
    int dilation;

    NeighborhoodSpec(int k, int d) : kernel(k), dilation(d) {
        if (k < 1) throw InvalidSpecError("NeighborhoodSpec: kernel must be >= 1, got " + std::to_string(k));
        if (d < 1) throw InvalidSpecError("NeighborhoodSpec: dilation must be >= 1, got " + std::to_string(d));
    }

    bool operator==(const NeighborhoodSpec& o) const = default;
};

// A spec is usable on an axis of extent L when the dilated window fits
// (k*d <= L). Kernels are odd; an even kernel is accepted only when it
// saturates the axis (k == L), where the window degenerates to full
// attention along that axis.
inline void validate_axis(int L, const NeighborhoodSpec& spec) {
    if (spec.kernel * spec.dilation > L) {
        throw InvalidSpecError("neighborhood: kernel*dilation = " + std::to_string(spec.kernel) + "*" +
                               std::to_string(spec.dilation) + " exceeds extent " + std::to_string(L));
    }
    if (spec.kernel % 2 == 0 && spec.kernel != L) {
        throw InvalidSpecError("neighborhood: even kernel " + std::to_string(spec.kernel) +
                               " only allowed when it saturates the axis");
    }
}

inline void validate_spec(const NeighborhoodSpec& spec, int H, int W) {
    validate_axis(H, spec);
    validate_axis(W, spec);
}

struct AxisWindow {
    std::vector<int> indices;      // k in-bounds neighbor coordinates
    std::vector<int> rpb_offsets;  // k offsets into the RPB axis, in [0, 2k-1)
};

// Clamped dilated window around coordinate i on an axis of extent L.
// The window lives on i's residue class modulo d: with r = i mod d the
// class has m = ceil((L-r)/d) members and the query is its j-th member;
// the window start within the class is s = clamp(j - k/2, 0, m - k), so
// windows slide at interior queries and pin to the class ends at borders.
inline AxisWindow neighborhood_1d(int L, const NeighborhoodSpec& spec, int i) {
    validate_axis(L, spec);
    if (i < 0 || i >= L) throw ContractError("neighborhood_1d: index out of range");
    const int k = spec.kernel, d = spec.dilation;
    const int r = i % d;
    const int m = (L - r + d - 1) / d;
    const int j = (i - r) / d;
    const int s = std::clamp(j - k / 2, 0, m - k);
    AxisWindow win;
    win.indices.resize(k);
    win.rpb_offsets.resize(k);
    for (int t = 0; t < k; ++t) {
        win.indices[t] = r + (s + t) * d;
        win.rpb_offsets[t] = (s + t) - j + (k - 1);
    }
    return win;
}

// True when the centered window fits without clamping on this axis.
inline bool window_unclamped(int L, const NeighborhoodSpec& spec, int i) {
    const int k = spec.kernel, d = spec.dilation;
    const int r = i % d;
    const int m = (L - r + d - 1) / d;
    const int j = (i - r) / d;
    return j - k / 2 >= 0 && j - k / 2 <= m - k;
}

// Precomputed per-axis windows for every pixel of an (H, W) map. The 2-d
// neighborhood of (y, x) is the Cartesian product of the two axis windows;
// neighbor t = ty*k + tx has coordinates (row y window[ty], col x
// window[tx]) and RPB cell (row rpb[ty], col rpb[tx]).
class NeighborhoodIndexMap {
public:
    NeighborhoodIndexMap(int H, int W, const NeighborhoodSpec& spec) : H_(H), W_(W), spec_(spec) {
        validate_spec(spec, H, W);
        const int k = spec.kernel;
        row_idx_.resize(static_cast<std::size_t>(H) * k);
        row_rpb_.resize(static_cast<std::size_t>(H) * k);
        col_idx_.resize(static_cast<std::size_t>(W) * k);
        col_rpb_.resize(static_cast<std::size_t>(W) * k);
        for (int y = 0; y < H; ++y) {
            auto win = neighborhood_1d(H, spec, y);
            std::copy(win.indices.begin(), win.indices.end(), row_idx_.begin() + static_cast<std::size_t>(y) * k);
            std::copy(win.rpb_offsets.begin(), win.rpb_offsets.end(),
                      row_rpb_.begin() + static_cast<std::size_t>(y) * k);
        }
        for (int x = 0; x < W; ++x) {
            auto win = neighborhood_1d(W, spec, x);
            std::copy(win.indices.begin(), win.indices.end(), col_idx_.begin() + static_cast<std::size_t>(x) * k);
            std::copy(win.rpb_offsets.begin(), win.rpb_offsets.end(),
                      col_rpb_.begin() + static_cast<std::size_t>(x) * k);
        }
    }

    int height() const { return H_; }
    int width() const { return W_; }
    int kernel() const { return spec_.kernel; }
    int dilation() const { return spec_.dilation; }
    const NeighborhoodSpec& spec() const { return spec_; }
    int neighborhood_size() const { return spec_.kernel * spec_.kernel; }

    int neighbor_y(int y, int ty) const { return row_idx_[static_cast<std::size_t>(y) * spec_.kernel + ty]; }
    int rpb_y(int y, int ty) const { return row_rpb_[static_cast<std::size_t>(y) * spec_.kernel + ty]; }
    int neighbor_x(int x, int tx) const { return col_idx_[static_cast<std::size_t>(x) * spec_.kernel + tx]; }
    int rpb_x(int x, int tx) const { return col_rpb_[static_cast<std::size_t>(x) * spec_.kernel + tx]; }

    const int* row_indices(int y) const { return row_idx_.data() + static_cast<std::size_t>(y) * spec_.kernel; }
    const int* row_rpb(int y) const { return row_rpb_.data() + static_cast<std::size_t>(y) * spec_.kernel; }
    const int* col_indices(int x) const { return col_idx_.data() + static_cast<std::size_t>(x) * spec_.kernel; }
    const int* col_rpb(int x) const { return col_rpb_.data() + static_cast<std::size_t>(x) * spec_.kernel; }

    struct Neighbor {
        int ny, nx;  // neighbor pixel
        int ry, rx;  // RPB table cell
    };

    // Materialized k*k neighborhood of one query, in t order.
    std::vector<Neighbor> neighbors(int y, int x) const {
        const int k = spec_.kernel;
        std::vector<Neighbor> out;
        out.reserve(static_cast<std::size_t>(k) * k);
        for (int ty = 0; ty < k; ++ty)
            for (int tx = 0; tx < k; ++tx)
                out.push_back({neighbor_y(y, ty), neighbor_x(x, tx), rpb_y(y, ty), rpb_x(x, tx)});
        return out;
    }

private:
    int H_, W_;
    NeighborhoodSpec spec_;
    std::vector<int> row_idx_, row_rpb_, col_idx_, col_rpb_;
};

inline NeighborhoodIndexMap build_index_map(int H, int W, const NeighborhoodSpec& spec) {
    return NeighborhoodIndexMap(H, W, spec);
}

// Immutable process-wide cache; maps are reused across layers and batches.
inline const NeighborhoodIndexMap& cached_index_map(int H, int W, const NeighborhoodSpec& spec) {
    using Key = std::tuple<int, int, int, int>;
    static std::mutex mu;
    static std::map<Key, std::unique_ptr<NeighborhoodIndexMap>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto key = Key{H, W, spec.kernel, spec.dilation};
    auto it = cache.find(key);
    if (it == cache.end()) {
        it = cache.emplace(key, std::make_unique<NeighborhoodIndexMap>(H, W, spec)).first;
    }
    return *it->second;
}

}  // namespace hnat
