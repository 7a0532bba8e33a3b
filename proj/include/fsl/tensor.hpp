#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace fsl {

class Rng;

// Dense row-major array of doubles with an explicit shape. The one value
// carrier for features, parameters and gradients.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor filled(std::vector<std::size_t> shape, double v);
    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D accessors (row-major).
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shape_str() const;

    // Same data, new shape; element count must match.
    Tensor reshaped(std::vector<std::size_t> shape) const;

    void fill(double v);
    void add_scaled(const Tensor& o, double s);  // *this += s * o
    void scale(double s);
    double dot(const Tensor& o) const;
    double squared_norm() const;
    bool all_finite() const;

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

}  // namespace fsl
