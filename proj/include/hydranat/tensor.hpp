#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "hydranat/errors.hpp"

namespace hnat {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

// Dense row-major n-d array of f32 or f64. Strides are derived from the
// shape alone; the flat buffer always holds exactly product(shape) scalars.
template <typename T>
class Tensor {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                  "Tensor element type must be float or double");

public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)) {
        for (auto e : shape_) {
            if (e == 0) throw DimensionError("Tensor extents must be >= 1, got shape " + shape_str(shape_));
        }
        init_strides();
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        for (auto e : shape_) {
            if (e == 0) throw DimensionError("Tensor extents must be >= 1, got shape " + shape_str(shape_));
        }
        init_strides();
        if (data_.size() != shape_numel(shape_)) {
            throw DimensionError("Tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
        }
    }

    const Shape& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::size_t extent(std::size_t axis) const { return shape_[axis]; }
    std::size_t stride(std::size_t axis) const { return strides_[axis]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t flat) { return data_[flat]; }
    const T& operator[](std::size_t flat) const { return data_[flat]; }

    template <typename... Ix>
    T& operator()(Ix... ix) {
        return data_[offset(ix...)];
    }
    template <typename... Ix>
    const T& operator()(Ix... ix) const {
        return data_[offset(ix...)];
    }

    // Same buffer under a new shape; element count must be preserved.
    Tensor reshaped(Shape new_shape) const {
        if (shape_numel(new_shape) != data_.size()) {
            throw DimensionError("reshape from " + shape_str(shape_) + " to " + shape_str(new_shape) +
                                 " changes element count");
        }
        return Tensor(std::move(new_shape), data_);
    }

    void fill(T v) { data_.assign(data_.size(), v); }

private:
    template <typename... Ix>
    std::size_t offset(Ix... ix) const {
        static_assert((std::is_integral_v<Ix> && ...));
        const std::size_t idx[] = {static_cast<std::size_t>(ix)...};
        std::size_t off = 0;
        for (std::size_t a = 0; a < sizeof...(Ix); ++a) off += idx[a] * strides_[a];
        return off;
    }

    void init_strides() {
        strides_.assign(shape_.size(), 1);
        for (std::size_t a = shape_.size(); a-- > 1;) strides_[a - 1] = strides_[a] * shape_[a];
    }

    Shape shape_;
    std::vector<std::size_t> strides_;
    std::vector<T> data_;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "sub");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "hadamard");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

template <typename T>
Tensor<T> scaled(const Tensor<T>& a, T s) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    return out;
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add_inplace");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T, typename U>
Tensor<U> cast(const Tensor<T>& a) {
    Tensor<U> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<U>(a[i]);
    return out;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "max_abs_diff");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        T d = a[i] - b[i];
        if (d < 0) d = -d;
        if (d > m) m = d;
    }
    return m;
}

}  // namespace hnat
