#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace zecon {

/// Dense row-major tensor of doubles. Images are stored as [C, H, W].
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // [C, H, W] accessors
    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }

    double item() const;
    Tensor reshaped(std::vector<std::size_t> shape) const;

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;

    Tensor& operator+=(const Tensor& o);
    Tensor& operator-=(const Tensor& o);
    Tensor& operator*=(double s);

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);
Tensor operator*(double s, Tensor a);

/// a*x + b*y, elementwise.
Tensor axpby(double a, const Tensor& x, double b, const Tensor& y);

double dot(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
/// ||a - b|| / ||b||
double relative_l2(const Tensor& a, const Tensor& b);
Tensor clamp(Tensor t, double lo, double hi);

std::size_t numel(std::span<const std::size_t> shape);
std::string shape_str(std::span<const std::size_t> shape);
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

} // namespace zecon
