#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace vla {

/// Dense rank-N array, row-major, the numeric carrier for the whole engine.
/// Values are IEEE doubles in memory; the on-disk VLT format stores float32.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double value);
    /// 2-D convenience: rows given as nested initializer lists.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t i, std::size_t j);
    double at(std::size_t i, std::size_t j) const;
    double& at(std::size_t i, std::size_t j, std::size_t k);
    double at(std::size_t i, std::size_t j, std::size_t k) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    /// "2x3x4" style rendering for error messages.
    std::string shape_str() const;

    /// Throws if any element is NaN or infinite.
    void require_finite(const std::string& context) const;
    bool all_finite() const;

    void fill(double value);
    Tensor reshaped(std::vector<std::size_t> shape) const;

    /// Row view helpers for rank-2 tensors (and rank>=2, last axis = row width).
    std::size_t rows() const;
    std::size_t cols() const;
    std::span<double> row(std::size_t i);
    std::span<const double> row(std::size_t i) const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

}  // namespace vla
