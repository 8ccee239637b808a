#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace arlk {

// Dense row-major double tensor with an optional gradient buffer of the same
// shape. This is the currency of the NN core; shapes are fixed at
// construction.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
        v_.assign(static_cast<std::size_t>(numel_of(shape_)), 0.0);
    }

    Tensor(std::initializer_list<std::int64_t> shape) : Tensor(std::vector<std::int64_t>(shape)) {}

    static std::int64_t numel_of(const std::vector<std::int64_t>& shape) {
        std::int64_t n = 1;
        for (auto d : shape) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::int64_t numel() const { return static_cast<std::int64_t>(v_.size()); }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    std::vector<double>& values() { return v_; }
    const std::vector<double>& values() const { return v_; }

    double& operator[](std::int64_t i) { return v_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return v_[static_cast<std::size_t>(i)]; }

    // 2-D accessors (row-major).
    double& at(std::int64_t r, std::int64_t c) { return v_[static_cast<std::size_t>(r * shape_[1] + c)]; }
    double at(std::int64_t r, std::int64_t c) const { return v_[static_cast<std::size_t>(r * shape_[1] + c)]; }

    bool has_grad() const { return !g_.empty(); }

    std::vector<double>& grad() {
        if (g_.empty()) g_.assign(v_.size(), 0.0);
        return g_;
    }
    const std::vector<double>& grad() const { return g_; }
    double* grad_data() { return grad().data(); }

    void zero_grad() {
        if (!g_.empty()) std::fill(g_.begin(), g_.end(), 0.0);
    }

    void fill(double x) { std::fill(v_.begin(), v_.end(), x); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

  private:
    std::vector<std::int64_t> shape_;
    std::vector<double> v_;
    std::vector<double> g_;
};

inline void check_shape(const Tensor& t, const std::vector<std::int64_t>& want, const char* what) {
    if (t.shape() != want)
        throw std::invalid_argument(std::string(what) + ": shape mismatch, got " + t.shape_str());
}

}  // namespace arlk
