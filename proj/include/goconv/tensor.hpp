#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace goconv {

/// Raised on any extent/shape disagreement between operands.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Up to four extents, outermost first.
class Shape {
public:
    static constexpr std::size_t kMaxRank = 4;

    Shape() = default;
    Shape(std::initializer_list<std::size_t> dims) {
        if (dims.size() > kMaxRank) {
            throw ShapeError("tensor rank exceeds 4");
        }
        for (auto d : dims) {
            push(d);
        }
    }
    template <typename It>
    Shape(It first, It last) {
        for (; first != last; ++first) {
            if (rank_ == kMaxRank) {
                throw ShapeError("tensor rank exceeds 4");
            }
            push(static_cast<std::size_t>(*first));
        }
    }

    std::size_t rank() const { return rank_; }
    std::size_t operator[](std::size_t i) const { return dims_.at(i); }
    std::size_t numel() const {
        std::size_t n = 1;
        for (std::size_t i = 0; i < rank_; ++i) {
            n *= dims_[i];
        }
        return n;
    }
    std::span<const std::size_t> dims() const { return {dims_.data(), rank_}; }

    bool operator==(const Shape& o) const {
        return rank_ == o.rank_ && std::equal(dims_.begin(), dims_.begin() + rank_, o.dims_.begin());
    }

    std::string str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < rank_; ++i) {
            os << (i ? "," : "") << dims_[i];
        }
        os << ']';
        return os.str();
    }

private:
    void push(std::size_t d) {
        if (d == 0) {
            throw ShapeError("tensor extents must be >= 1");
        }
        dims_[rank_++] = d;
    }

    std::array<std::size_t, kMaxRank> dims_{};
    std::size_t rank_ = 0;
};

/// Dense row-major tensor. T is float for training, double for verification.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.numel()) {
            throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_.str());
        }
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.rank(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t a, std::size_t b) { return data_[a * shape_[1] + b]; }
    const T& at(std::size_t a, std::size_t b) const { return data_[a * shape_[1] + b]; }
    T& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
        return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }
    const T& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
        return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }

    /// Same storage viewed under a new shape of equal element count.
    Tensor reshaped(Shape s) const& { return Tensor(s, data_); }
    Tensor reshaped(Shape s) && { return Tensor(s, std::move(data_)); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

inline void require(bool cond, const std::string& what) {
    if (!cond) {
        throw ShapeError(what);
    }
}

inline void require_rank(const Shape& s, std::size_t r, const char* who) {
    if (s.rank() != r) {
        throw ShapeError(std::string(who) + ": expected rank " + std::to_string(r) + ", got " + s.str());
    }
}

}  // namespace goconv
