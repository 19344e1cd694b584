#include "zecon/tensor.hpp"

#include "zecon/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace zecon {

std::size_t numel(std::span<const std::size_t> shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(std::span<const std::size_t> shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_)) {
        throw Error("tensor", "data size " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
    }
}

double Tensor::item() const {
    if (data_.size() != 1) throw Error("tensor", "item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw Error(what, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

Tensor& Tensor::operator+=(const Tensor& o) {
    require_same_shape(*this, o, "tensor");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
    require_same_shape(*this, o, "tensor");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }
Tensor operator*(double s, Tensor a) { return a *= s; }

Tensor axpby(double a, const Tensor& x, double b, const Tensor& y) {
    require_same_shape(x, y, "tensor");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw Error("tensor", "dot of unequal sizes");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "tensor");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double relative_l2(const Tensor& a, const Tensor& b) {
    return l2_norm(a - b) / l2_norm(b);
}

Tensor clamp(Tensor t, double lo, double hi) {
    for (double& v : t.values()) v = std::clamp(v, lo, hi);
    return t;
}

} // namespace zecon
