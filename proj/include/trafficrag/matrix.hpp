#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace trafficrag {

struct KernelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major double matrix. Immutable by convention: operations return
// fresh values and never write through their inputs.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw KernelError("matrix data length " + std::to_string(data_.size()) +
                              " does not match " + std::to_string(rows_) + "x" +
                              std::to_string(cols_));
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Naive triple-loop multiply, accumulation in index order.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw KernelError("matmul shape mismatch: " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()));
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
            out.at(i, j) = acc;
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out.at(j, i) = m.at(i, j);
    return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw KernelError("matrix add shape mismatch");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

// Singular values of m, descending, via one-sided Jacobi: rotate column
// pairs until mutually orthogonal, then the column norms are the singular
// values. Operates on the matrix directly so tiny singular values stay
// accurate.
inline std::vector<double> singular_values(const Matrix& m) {
    Matrix w = m;
    const std::size_t rows = w.rows();
    const std::size_t n = w.cols();
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t k = 0; k < rows; ++k) {
                    app += w.at(k, p) * w.at(k, p);
                    aqq += w.at(k, q) * w.at(k, q);
                    apq += w.at(k, p) * w.at(k, q);
                }
                if (apq == 0.0 || std::fabs(apq) <= 1e-30 * std::sqrt(app * aqq)) continue;
                rotated = true;
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < rows; ++k) {
                    const double wp = w.at(k, p);
                    const double wq = w.at(k, q);
                    w.at(k, p) = c * wp - s * wq;
                    w.at(k, q) = s * wp + c * wq;
                }
            }
        }
        if (!rotated) break;
    }
    std::vector<double> sv(n);
    for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < rows; ++k) acc += w.at(k, j) * w.at(k, j);
        sv[j] = std::sqrt(acc);
    }
    std::sort(sv.begin(), sv.end(), std::greater<double>());
    return sv;
}

}  // namespace trafficrag
