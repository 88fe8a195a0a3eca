#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wbfuse {

/// Raised when an operation's preconditions (shapes, finiteness, simplex
/// membership) are not met by its arguments.
class ContractViolation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    Matrix transposed() const;
    bool all_finite() const;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s);

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T without materializing the transpose.
Matrix matmul_bt(const Matrix& a, const Matrix& b);
/// a^T * b
Matrix matmul_at(const Matrix& a, const Matrix& b);
std::vector<double> matvec(const Matrix& a, std::span<const double> x);

Matrix hadamard(const Matrix& a, const Matrix& b);
std::vector<double> row_sums(const Matrix& a);
std::vector<double> col_sums(const Matrix& a);
double total(const Matrix& a);
double frobenius_dot(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
/// Sum of absolute entrywise differences.
double l1_diff(const Matrix& a, const Matrix& b);

/// Kronecker product a (x) b.
Matrix kron(const Matrix& a, const Matrix& b);

/// Throws ContractViolation with `what` prefixed when the condition fails.
void require(bool condition, const std::string& what);

/// A point of the probability simplex: nonnegative weights summing to one.
class Histogram {
public:
    static constexpr double kSumTolerance = 1e-12;

    Histogram() = default;
    explicit Histogram(std::vector<double> weights);

    static Histogram uniform(std::size_t n);

    std::size_t size() const { return weights_.size(); }
    double operator[](std::size_t i) const { return weights_[i]; }
    std::span<const double> weights() const { return weights_; }

    friend bool operator==(const Histogram&, const Histogram&) = default;

private:
    std::vector<double> weights_;
};

/// Convolution filters laid out as out_channels x in_channels x k x k, row-major.
class FilterBank {
public:
    FilterBank() = default;
    FilterBank(std::size_t out_channels, std::size_t in_channels, std::size_t kernel, double fill = 0.0);
    FilterBank(std::size_t out_channels, std::size_t in_channels, std::size_t kernel, std::vector<double> data);

    std::size_t out_channels() const { return out_; }
    std::size_t in_channels() const { return in_; }
    std::size_t kernel() const { return k_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t o, std::size_t i, std::size_t r, std::size_t c)
    {
        return data_[((o * in_ + i) * k_ + r) * k_ + c];
    }
    double operator()(std::size_t o, std::size_t i, std::size_t r, std::size_t c) const
    {
        return data_[((o * in_ + i) * k_ + r) * k_ + c];
    }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    /// The out x in matrix of weights at spatial tap p = r * k + c.
    Matrix slice(std::size_t p) const;
    void set_slice(std::size_t p, const Matrix& m);

    friend bool operator==(const FilterBank&, const FilterBank&) = default;

private:
    std::size_t out_ = 0;
    std::size_t in_ = 0;
    std::size_t k_ = 0;
    std::vector<double> data_;
};

} // namespace wbfuse
