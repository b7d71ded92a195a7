#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "elf/error.hpp"

namespace elf {

using Dims = std::vector<std::size_t>;

inline std::size_t product(const Dims& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Dims& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
    os << ']';
    return os.str();
}

/// Dense row-major array of doubles.
///
/// Images and feature maps are laid out channels x height x width, convolution
/// weights out x in x kh x kw. Every extent is at least one and the data length
/// always equals the product of the extents.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Dims dims, double fill = 0.0) : dims_(std::move(dims)) {
        validate_dims();
        data_.assign(product(dims_), fill);
    }

    Tensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
        validate_dims();
        if (data_.size() != product(dims_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match dims " + to_string(dims_));
    }

    const Dims& dims() const noexcept { return dims_; }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double* raw() noexcept { return data_.data(); }
    const double* raw() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 3-D (channel, row, column) access for images and feature maps.
    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * dims_[1] + y) * dims_[2] + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * dims_[1] + y) * dims_[2] + x];
    }

    // 4-D (out, in, row, column) access for convolution weights.
    double& at(std::size_t o, std::size_t c, std::size_t y, std::size_t x) {
        return data_[((o * dims_[1] + c) * dims_[2] + y) * dims_[3] + x];
    }
    double at(std::size_t o, std::size_t c, std::size_t y, std::size_t x) const {
        return data_[((o * dims_[1] + c) * dims_[2] + y) * dims_[3] + x];
    }

    std::size_t channels() const { return dims_.at(0); }
    std::size_t height() const { return dims_.at(1); }
    std::size_t width() const { return dims_.at(2); }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    void validate_dims() const {
        if (dims_.empty()) throw ShapeError("tensor needs at least one dimension");
        for (auto d : dims_)
            if (d == 0) throw ShapeError("tensor extents must be positive, got " + to_string(dims_));
    }

    Dims dims_;
    std::vector<double> data_;
};

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(t.dims()));
}

inline void require_same_dims(const Tensor& a, const Tensor& b, const char* what) {
    if (a.dims() != b.dims())
        throw ShapeError(std::string(what) + ": dims " + to_string(a.dims()) + " vs " + to_string(b.dims()));
}

/// Gaussian blur parameters: odd kernel width in pixels and standard deviation.
struct GaussianSpec {
    int size = 1;
    double sigma = 1.0;

    void validate() const {
        if (size < 1 || size % 2 == 0)
            throw std::invalid_argument("gaussian size must be odd and >= 1, got " + std::to_string(size));
        if (!(sigma > 0.0)) throw std::invalid_argument("gaussian sigma must be positive");
    }

    friend bool operator==(const GaussianSpec&, const GaussianSpec&) = default;
};

}  // namespace elf
