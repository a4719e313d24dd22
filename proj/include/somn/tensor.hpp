#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "somn/common.hpp"

namespace somn {

// Dense row-major tensor. 32-bit floats carry training, 64-bit the
// verification paths (finite differences, analytic oracles).
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        v_.assign(static_cast<size_t>(count(shape_)), T(0));
    }

    Tensor(std::vector<int> shape, std::vector<T> values)
        : shape_(std::move(shape)), v_(std::move(values)) {
        if (static_cast<int64_t>(v_.size()) != count(shape_))
            throw ShapeError("tensor: value count " + std::to_string(v_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    static int64_t count(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw ShapeError("tensor: negative dimension in " + shape_str(shape));
            n *= d;
        }
        return n;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t numel() const { return static_cast<int64_t>(v_.size()); }
    bool empty() const { return v_.empty(); }

    T* data() { return v_.data(); }
    const T* data() const { return v_.data(); }
    std::vector<T>& values() { return v_; }
    const std::vector<T>& values() const { return v_; }

    T& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

    // (row, col) into a rank-2 tensor.
    T& at2(int64_t r, int64_t c) { return v_[static_cast<size_t>(r * shape_[1] + c)]; }
    const T& at2(int64_t r, int64_t c) const { return v_[static_cast<size_t>(r * shape_[1] + c)]; }

    // (n, c, l) into a rank-3 tensor.
    T& at3(int64_t n, int64_t c, int64_t l) {
        return v_[static_cast<size_t>((n * shape_[1] + c) * shape_[2] + l)];
    }
    const T& at3(int64_t n, int64_t c, int64_t l) const {
        return v_[static_cast<size_t>((n * shape_[1] + c) * shape_[2] + l)];
    }

    void fill(T value) { std::fill(v_.begin(), v_.end(), value); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    static std::string shape_str(const std::vector<int>& shape) {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ")";
        return os.str();
    }

    std::string shape_str() const { return shape_str(shape_); }

private:
    std::vector<int> shape_;
    std::vector<T> v_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
    Tensor<To> out(src.shape());
    for (int64_t i = 0; i < src.numel(); ++i) out[i] = static_cast<To>(src[i]);
    return out;
}

}  // namespace somn
