#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace neurove {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

/// Dense row-major n-d array of doubles. Deliberately minimal: the heavy
/// linear algebra is done by mapping the flat storage into Eigen inside the
/// tape primitives.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}
    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_))
            throw std::invalid_argument("Tensor: data size does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = v;
        return t;
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor from_vector(std::vector<double> v) {
        Shape s{v.size()};
        return Tensor(std::move(s), std::move(v));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Same storage under a new shape; sizes must agree.
    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != data_.size())
            throw std::invalid_argument("Tensor::reshaped: size mismatch " + shape_str(shape_) + " -> " + shape_str(s));
        return Tensor(std::move(s), data_);
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    Shape shape_;
    std::vector<double> data_;
};

}  // namespace neurove
