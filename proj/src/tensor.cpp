#include "fsl/tensor.hpp"

#include <cmath>
#include <sstream>

#include "fsl/error.hpp"
#include "fsl/rng.hpp"

namespace fsl {

namespace {
std::size_t product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (product(shape_) != data_.size()) {
        throw InputError("tensor: shape " + shape_str() + " does not match buffer of " +
                         std::to_string(data_.size()) + " elements");
    }
}

Tensor Tensor::filled(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

Tensor Tensor::randn(std::vector<std::size_t> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t.data_[i] = stddev * rng.normal();
    return t;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << 'x';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    if (product(shape) != data_.size()) {
        throw InputError("tensor: cannot reshape " + shape_str() + " to new element count");
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

void Tensor::add_scaled(const Tensor& o, double s) {
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
}

void Tensor::scale(double s) {
    for (double& x : data_) x *= s;
}

double Tensor::dot(const Tensor& o) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < data_.size(); ++i) acc += data_[i] * o.data_[i];
    return acc;
}

double Tensor::squared_norm() const { return dot(*this); }

bool Tensor::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace fsl
