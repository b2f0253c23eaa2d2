#ifndef S2AP_TENSOR_HPP
#define S2AP_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace s2ap {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

struct AutodiffError : std::runtime_error {
    explicit AutodiffError(const std::string& what) : std::runtime_error(what) {}
};

/// Dense n-dimensional array of doubles with an optional gradient buffer.
/// The single numeric carrier for inputs, weights, scores, masks and
/// perturbation buffers.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // same length as data when requires_grad
    bool requires_grad = false;

    Tensor() = default;

    Tensor(std::vector<int64_t> shape_, std::vector<double> data_, bool requires_grad_ = false)
        : shape(std::move(shape_)), data(std::move(data_)), requires_grad(requires_grad_) {
        if (static_cast<int64_t>(data.size()) != numel(shape)) {
            throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_string(shape));
        }
        if (requires_grad) grad.assign(data.size(), 0.0);
    }

    static int64_t numel(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_string(shape));
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false) {
        int64_t n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor({1}, {v}, requires_grad);
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }

    bool is_scalar() const { return data.size() == 1; }

    void set_requires_grad(bool on) {
        requires_grad = on;
        if (on)
            grad.assign(data.size(), 0.0);
        else
            grad.clear();
    }

    void zero_grad() {
        if (requires_grad) grad.assign(data.size(), 0.0);
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    static std::string shape_string(const std::vector<int64_t>& s) {
        std::string out = "(";
        for (size_t i = 0; i < s.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(s[i]);
        }
        out += ")";
        return out;
    }

    std::string shape_string() const { return shape_string(shape); }

    /// Debug pass over data and grad; NaN/Inf anywhere is a contract violation.
    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        for (double v : grad)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace s2ap

#endif  // S2AP_TENSOR_HPP
