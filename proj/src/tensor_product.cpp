#include "wbfuse/tensor_product.hpp"

#include <algorithm>
#include <vector>

namespace wbfuse {

namespace {

void check_coupling_shape(const Matrix& a, const Matrix& b, const Matrix& pi, const char* who)
{
    require(pi.rows() == a.cols() && pi.cols() == b.cols(),
            std::string(who) + ": Pi is " + std::to_string(pi.rows()) + "x" + std::to_string(pi.cols()) +
                " but A has " + std::to_string(a.cols()) + " and B has " + std::to_string(b.cols()) +
                " columns");
    const bool nonnegative = std::all_of(pi.data().begin(), pi.data().end(), [](double v) { return v >= 0.0; });
    require(nonnegative, std::string(who) + ": Pi must be nonnegative");
}

// Accumulates the unclamped contraction into out.
void accumulate_sq_loss(const Matrix& a, const Matrix& b, const Matrix& pi, Matrix& out)
{
    const std::vector<double> r = row_sums(pi);
    const std::vector<double> c = col_sums(pi);

    std::vector<double> a_term(a.rows(), 0.0);
    for (std::size_t j = 0; j < a.rows(); ++j) {
        auto row = a.row(j);
        double s = 0.0;
        for (std::size_t q = 0; q < a.cols(); ++q) {
            s += row[q] * row[q] * r[q];
        }
        a_term[j] = s;
    }
    std::vector<double> b_term(b.rows(), 0.0);
    for (std::size_t g = 0; g < b.rows(); ++g) {
        auto row = b.row(g);
        double s = 0.0;
        for (std::size_t q = 0; q < b.cols(); ++q) {
            s += row[q] * row[q] * c[q];
        }
        b_term[g] = s;
    }

    // cross = A Pi B^T
    const Matrix cross = matmul_bt(matmul(a, pi), b);
    for (std::size_t j = 0; j < a.rows(); ++j) {
        for (std::size_t g = 0; g < b.rows(); ++g) {
            out(j, g) += a_term[j] + b_term[g] - 2.0 * cross(j, g);
        }
    }
}

void clamp_nonnegative(Matrix& m)
{
    for (double& v : m.data()) {
        v = std::max(v, 0.0);
    }
}

} // namespace

Matrix sq_loss_tensor_apply(const Matrix& a, const Matrix& b, const Matrix& pi)
{
    check_coupling_shape(a, b, pi, "sq_loss_tensor_apply");
    Matrix out(a.rows(), b.rows());
    accumulate_sq_loss(a, b, pi, out);
    clamp_nonnegative(out);
    return out;
}

Matrix sliced_sq_loss_tensor_apply(std::span<const Matrix> a, std::span<const Matrix> b, const Matrix& pi)
{
    require(!a.empty() && a.size() == b.size(), "sliced_sq_loss_tensor_apply: slice counts differ");
    Matrix out(a.front().rows(), b.front().rows());
    for (std::size_t p = 0; p < a.size(); ++p) {
        require(a[p].rows() == out.rows() && b[p].rows() == out.cols(),
                "sliced_sq_loss_tensor_apply: slice row counts differ");
        check_coupling_shape(a[p], b[p], pi, "sliced_sq_loss_tensor_apply");
        accumulate_sq_loss(a[p], b[p], pi, out);
    }
    clamp_nonnegative(out);
    return out;
}

Matrix frobenius_loss_tensor_apply(const FilterBank& a, const FilterBank& b, const Matrix& pi)
{
    require(a.kernel() == b.kernel(), "frobenius_loss_tensor_apply: filter sizes differ (" +
                                          std::to_string(a.kernel()) + " vs " + std::to_string(b.kernel()) + ")");
    require(a.kernel() >= 1, "frobenius_loss_tensor_apply: empty filters");
    const std::size_t taps = a.kernel() * a.kernel();
    std::vector<Matrix> sa;
    std::vector<Matrix> sb;
    sa.reserve(taps);
    sb.reserve(taps);
    for (std::size_t p = 0; p < taps; ++p) {
        sa.push_back(a.slice(p));
        sb.push_back(b.slice(p));
    }
    return sliced_sq_loss_tensor_apply(sa, sb, pi);
}

} // namespace wbfuse
