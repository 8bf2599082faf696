#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace vpfnet {

/// Dense row-major tensor of doubles. Rank is dynamic (0-4 used in practice).
/// Value semantics (deep copy); uninitialized() skips the zero fill for
/// buffers that are fully overwritten.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : shape_(std::move(shape)), size_(count(shape_)),
          data_(new double[size_ == 0 ? 1 : size_]) {
        std::fill(data_.get(), data_.get() + size_, fill);
    }

    static Tensor uninitialized(std::vector<std::size_t> shape) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.size_ = count(t.shape_);
        t.data_.reset(new double[t.size_ == 0 ? 1 : t.size_]);
        return t;
    }

    Tensor(const Tensor& o) : shape_(o.shape_), size_(o.size_) {
        if (o.data_) {
            data_.reset(new double[size_ == 0 ? 1 : size_]);
            std::copy_n(o.data_.get(), size_, data_.get());
        }
    }
    Tensor& operator=(const Tensor& o) {
        if (this != &o) {
            shape_ = o.shape_;
            size_ = o.size_;
            if (o.data_) {
                data_.reset(new double[size_ == 0 ? 1 : size_]);
                std::copy_n(o.data_.get(), size_, data_.get());
            } else {
                data_.reset();
            }
        }
        return *this;
    }
    Tensor(Tensor&&) = default;
    Tensor& operator=(Tensor&&) = default;

    static Tensor scalar(double v) {
        Tensor t(std::vector<std::size_t>{});
        t.data_[0] = v;
        return t;
    }

    static Tensor from(std::vector<std::size_t> shape, std::vector<double> data) {
        if (data.size() != count(shape))
            throw std::invalid_argument("Tensor::from: data size does not match shape");
        Tensor t = uninitialized(std::move(shape));
        std::copy(data.begin(), data.end(), t.data_.get());
        return t;
    }

    static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape_); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return size_; }
    bool empty() const { return data_ == nullptr; }

    double* data() { return data_.get(); }
    const double* data() const { return data_.get(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Indexed access; caller is responsible for matching rank.
    double& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at3(std::size_t c, std::size_t i, std::size_t j) {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }
    double at3(std::size_t c, std::size_t i, std::size_t j) const {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }
    double& at4(std::size_t n, std::size_t c, std::size_t i, std::size_t j) {
        return data_[((n * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
    }
    double at4(std::size_t n, std::size_t c, std::size_t i, std::size_t j) const {
        return data_[((n * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(double v) { std::fill(data_.get(), data_.get() + size_, v); }

    bool all_finite() const {
        for (std::size_t i = 0; i < size_; ++i)
            if (!std::isfinite(data_[i])) return false;
        return true;
    }

    double sum() const {
        double s = 0.0;
        for (std::size_t i = 0; i < size_; ++i) s += data_[i];
        return s;
    }
    double mean() const { return size_ == 0 ? 0.0 : sum() / static_cast<double>(size_); }
    double min() const {
        double m = size_ == 0 ? 0.0 : data_[0];
        for (std::size_t i = 0; i < size_; ++i) m = std::min(m, data_[i]);
        return m;
    }
    double max() const {
        double m = size_ == 0 ? 0.0 : data_[0];
        for (std::size_t i = 0; i < size_; ++i) m = std::max(m, data_[i]);
        return m;
    }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }

    static std::string shape_string(const std::vector<std::size_t>& shape) {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

private:
    std::vector<std::size_t> shape_;
    std::size_t size_ = 0;
    std::unique_ptr<double[]> data_;
};

/// Integer map (label/category data). Same layout conventions as Tensor.
class IntTensor {
public:
    IntTensor() = default;
    explicit IntTensor(std::vector<std::size_t> shape, std::int32_t fill = 0)
        : shape_(std::move(shape)), data_(Tensor::count(shape_), fill) {}

    static IntTensor from(std::vector<std::size_t> shape, std::vector<std::int32_t> data) {
        IntTensor t;
        t.shape_ = std::move(shape);
        if (data.size() != Tensor::count(t.shape_))
            throw std::invalid_argument("IntTensor::from: data size does not match shape");
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }

    std::int32_t* data() { return data_.data(); }
    const std::int32_t* data() const { return data_.data(); }

    std::int32_t& operator[](std::size_t i) { return data_[i]; }
    std::int32_t operator[](std::size_t i) const { return data_[i]; }

    std::int32_t& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    std::int32_t at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    std::int32_t& at3(std::size_t n, std::size_t i, std::size_t j) {
        return data_[(n * shape_[1] + i) * shape_[2] + j];
    }
    std::int32_t at3(std::size_t n, std::size_t i, std::size_t j) const {
        return data_[(n * shape_[1] + i) * shape_[2] + j];
    }

    bool same_shape(const IntTensor& o) const { return shape_ == o.shape_; }

private:
    std::vector<std::size_t> shape_;
    std::vector<std::int32_t> data_;
};

} // namespace vpfnet
