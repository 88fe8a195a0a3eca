#include "wbfuse/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wbfuse {

void require(bool condition, const std::string& what)
{
    if (!condition) {
        throw ContractViolation(what);
    }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill)
{
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data))
{
    require(data_.size() == rows * cols, "Matrix: data length " + std::to_string(data_.size()) +
                                             " does not match " + std::to_string(rows) + "x" +
                                             std::to_string(cols));
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
{
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        require(r.size() == cols_, "Matrix: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n)
{
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Matrix Matrix::transposed() const
{
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
            t(c, r) = (*this)(r, c);
        }
    }
    return t;
}

bool Matrix::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix& Matrix::operator+=(const Matrix& other)
{
    require(rows_ == other.rows_ && cols_ == other.cols_, "Matrix +=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += other.data_[i];
    }
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other)
{
    require(rows_ == other.rows_ && cols_ == other.cols_, "Matrix -=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] -= other.data_[i];
    }
    return *this;
}

Matrix& Matrix::operator*=(double s)
{
    for (double& v : data_) {
        v *= s;
    }
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b)
{
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out_row = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) {
                continue;
            }
            auto b_row = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out_row[j] += aik * b_row[j];
            }
        }
    }
    return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b)
{
    require(a.cols() == b.cols(), "matmul_bt: inner dimensions differ");
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto a_row = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            auto b_row = b.row(j);
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                s += a_row[k] * b_row[k];
            }
            out(i, j) = s;
        }
    }
    return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b)
{
    require(a.rows() == b.rows(), "matmul_at: inner dimensions differ");
    Matrix out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        auto a_row = a.row(k);
        auto b_row = b.row(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a_row[i];
            if (aki == 0.0) {
                continue;
            }
            auto out_row = out.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out_row[j] += aki * b_row[j];
            }
        }
    }
    return out;
}

std::vector<double> matvec(const Matrix& a, std::span<const double> x)
{
    require(a.cols() == x.size(), "matvec: dimension mismatch");
    std::vector<double> y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto r = a.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            s += r[j] * x[j];
        }
        y[i] = s;
    }
    return y;
}

Matrix hadamard(const Matrix& a, const Matrix& b)
{
    require(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard: shape mismatch");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.data()[i] = a.data()[i] * b.data()[i];
    }
    return out;
}

std::vector<double> row_sums(const Matrix& a)
{
    std::vector<double> s(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto r = a.row(i);
        s[i] = std::accumulate(r.begin(), r.end(), 0.0);
    }
    return s;
}

std::vector<double> col_sums(const Matrix& a)
{
    std::vector<double> s(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto r = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) {
            s[j] += r[j];
        }
    }
    return s;
}

double total(const Matrix& a)
{
    return std::accumulate(a.data().begin(), a.data().end(), 0.0);
}

double frobenius_dot(const Matrix& a, const Matrix& b)
{
    require(a.rows() == b.rows() && a.cols() == b.cols(), "frobenius_dot: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a.data()[i] * b.data()[i];
    }
    return s;
}

double frobenius_norm(const Matrix& a)
{
    return std::sqrt(frobenius_dot(a, a));
}

double max_abs(const Matrix& a)
{
    double m = 0.0;
    for (double v : a.data()) {
        m = std::max(m, std::abs(v));
    }
    return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b)
{
    require(a.rows() == b.rows() && a.cols() == b.cols(), "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    }
    return m;
}

double l1_diff(const Matrix& a, const Matrix& b)
{
    require(a.rows() == b.rows() && a.cols() == b.cols(), "l1_diff: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += std::abs(a.data()[i] - b.data()[i]);
    }
    return s;
}

Matrix kron(const Matrix& a, const Matrix& b)
{
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double aij = a(i, j);
            if (aij == 0.0) {
                continue;
            }
            for (std::size_t k = 0; k < b.rows(); ++k) {
                for (std::size_t l = 0; l < b.cols(); ++l) {
                    out(i * b.rows() + k, j * b.cols() + l) = aij * b(k, l);
                }
            }
        }
    }
    return out;
}

Histogram::Histogram(std::vector<double> weights) : weights_(std::move(weights))
{
    require(!weights_.empty(), "Histogram: empty");
    double sum = 0.0;
    for (double w : weights_) {
        require(std::isfinite(w) && w >= 0.0, "Histogram: weights must be finite and nonnegative");
        sum += w;
    }
    require(std::abs(sum - 1.0) <= kSumTolerance,
            "Histogram: weights sum to " + std::to_string(sum) + ", expected 1");
}

Histogram Histogram::uniform(std::size_t n)
{
    require(n >= 1, "Histogram::uniform: n must be positive");
    return Histogram(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

FilterBank::FilterBank(std::size_t out_channels, std::size_t in_channels, std::size_t kernel, double fill)
    : out_(out_channels), in_(in_channels), k_(kernel),
      data_(out_channels * in_channels * kernel * kernel, fill)
{
}

FilterBank::FilterBank(std::size_t out_channels, std::size_t in_channels, std::size_t kernel,
                       std::vector<double> data)
    : out_(out_channels), in_(in_channels), k_(kernel), data_(std::move(data))
{
    require(data_.size() == out_ * in_ * k_ * k_, "FilterBank: data length does not match shape");
}

Matrix FilterBank::slice(std::size_t p) const
{
    require(p < k_ * k_, "FilterBank::slice: tap out of range");
    Matrix m(out_, in_);
    for (std::size_t o = 0; o < out_; ++o) {
        for (std::size_t i = 0; i < in_; ++i) {
            m(o, i) = data_[(o * in_ + i) * k_ * k_ + p];
        }
    }
    return m;
}

void FilterBank::set_slice(std::size_t p, const Matrix& m)
{
    require(p < k_ * k_ && m.rows() == out_ && m.cols() == in_, "FilterBank::set_slice: shape mismatch");
    for (std::size_t o = 0; o < out_; ++o) {
        for (std::size_t i = 0; i < in_; ++i) {
            data_[(o * in_ + i) * k_ * k_ + p] = m(o, i);
        }
    }
}

} // namespace wbfuse
