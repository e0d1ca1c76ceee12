#pragma once
// Row-major dense matrix of doubles. Deliberately minimal: storage, shape,
// element access. All arithmetic goes through the kernel backends or the
// autodiff tape.

#include "mtms/errors.hpp"

#include <cstddef>
#include <vector>

namespace mtms {

class Array2 {
public:
    Array2() = default;
    Array2(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Array2 from_rows(std::size_t rows, std::size_t cols, std::vector<double> flat) {
        if (flat.size() != rows * cols) throw UsageError("Array2::from_rows: size mismatch");
        Array2 a;
        a.rows_ = rows;
        a.cols_ = cols;
        a.data_ = std::move(flat);
        return a;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    std::vector<double>& flat() { return data_; }
    const std::vector<double>& flat() const { return data_; }

    void fill(double v) { data_.assign(data_.size(), v); }

    bool same_shape(const Array2& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

} // namespace mtms

