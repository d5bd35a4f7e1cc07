#include "vla/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace vla {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    for (std::size_t d : shape_) {
        if (d == 0) throw std::invalid_argument("Tensor: zero dimension in shape " + shape_str());
    }
    data_.assign(shape_product(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    for (std::size_t d : shape_) {
        if (d == 0) throw std::invalid_argument("Tensor: zero dimension in shape " + shape_str());
    }
    if (data_.size() != shape_product(shape_)) {
        throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_str());
    }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    if (r == 0) throw std::invalid_argument("Tensor::matrix: no rows");
    const std::size_t c = rows.begin()->size();
    Tensor t({r, c});
    std::size_t i = 0;
    for (const auto& row : rows) {
        if (row.size() != c) throw std::invalid_argument("Tensor::matrix: ragged rows");
        for (double v : row) t.data_[i++] = v;
    }
    return t;
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw std::out_of_range("Tensor::dim: axis " + std::to_string(axis) +
                                " out of range for shape " + shape_str());
    }
    return shape_[axis];
}

double& Tensor::at(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
}
double Tensor::at(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
}
double& Tensor::at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
}
double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << 'x';
        os << shape_[i];
    }
    if (shape_.empty()) os << "scalar";
    return os.str();
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::require_finite(const std::string& context) const {
    if (!all_finite()) {
        throw std::runtime_error(context + ": tensor of shape " + shape_str() +
                                 " contains a non-finite value");
    }
}

void Tensor::fill(double value) {
    for (double& v : data_) v = value;
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    if (shape_product(shape) != data_.size()) {
        Tensor probe;
        probe.shape_ = shape;
        throw std::invalid_argument("Tensor::reshaped: cannot view " + shape_str() + " as " +
                                    probe.shape_str());
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

std::size_t Tensor::rows() const {
    if (rank() < 2) throw std::invalid_argument("Tensor::rows: rank < 2");
    std::size_t r = 1;
    for (std::size_t a = 0; a + 1 < rank(); ++a) r *= shape_[a];
    return r;
}

std::size_t Tensor::cols() const {
    if (rank() < 1) throw std::invalid_argument("Tensor::cols: rank 0");
    return shape_.back();
}

std::span<double> Tensor::row(std::size_t i) {
    const std::size_t c = cols();
    return {data_.data() + i * c, c};
}

std::span<const double> Tensor::row(std::size_t i) const {
    const std::size_t c = cols();
    return {data_.data() + i * c, c};
}

}  // namespace vla
