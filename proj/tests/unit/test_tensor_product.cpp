#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "wbfuse/tensor_product.hpp"

namespace wbfuse {
namespace {

TEST(SqLoss, SelfCouplingHasZeroDiagonal)
{
    std::mt19937_64 rng(3);
    const Matrix a = oracle::random_matrix(5, 5, rng);
    const Matrix out = sq_loss_tensor_apply(a, a, Matrix::identity(5) * 0.2);
    for (std::size_t j = 0; j < 5; ++j) {
        EXPECT_NEAR(out(j, j), 0.0, 1e-12);
    }
}

TEST(SqLoss, ZeroInputsGiveZero)
{
    std::mt19937_64 rng(4);
    const Matrix out = sq_loss_tensor_apply(Matrix(2, 2), Matrix(2, 2), oracle::random_nonnegative(2, 2, rng));
    EXPECT_EQ(max_abs(out), 0.0);
}

TEST(SqLoss, MatchesQuadrupleLoop)
{
    std::mt19937_64 rng(5);
    const Matrix a = oracle::random_matrix(3, 2, rng);
    const Matrix b = oracle::random_matrix(4, 2, rng);
    const Matrix pi(2, 2, 0.25);
    EXPECT_LE(oracle::max_relative_error(sq_loss_tensor_apply(a, b, pi), oracle::naive_sq_loss(a, b, pi)), 1e-10);
}

TEST(SqLoss, RandomShapesMatchAndAreNonnegativeAndSymmetric)
{
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<std::size_t> dim(1, 12);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t j = dim(rng), g = dim(rng), q = dim(rng), s = dim(rng);
        const Matrix a = oracle::random_matrix(j, q, rng);
        const Matrix b = oracle::random_matrix(g, s, rng);
        const Matrix pi = oracle::random_nonnegative(q, s, rng);
        const Matrix fast = sq_loss_tensor_apply(a, b, pi);
        EXPECT_LE(oracle::max_relative_error(fast, oracle::naive_sq_loss(a, b, pi)), 1e-10);
        for (double v : fast.data()) {
            EXPECT_GE(v, 0.0);
        }
        EXPECT_LE(max_abs_diff(fast, sq_loss_tensor_apply(b, a, pi.transposed()).transposed()), 1e-10);
    }
}

TEST(SqLoss, RejectsBadCoupling)
{
    EXPECT_THROW(sq_loss_tensor_apply(Matrix(2, 3), Matrix(2, 2), Matrix(2, 2)), ContractViolation);
    EXPECT_THROW(sq_loss_tensor_apply(Matrix(2, 2), Matrix(2, 2), Matrix{{1, -1}, {0, 0}}), ContractViolation);
}

TEST(FrobeniusLoss, MatchesQuadrupleLoop)
{
    std::mt19937_64 rng(7);
    const FilterBank a = oracle::random_filters(2, 2, 2, rng);
    const FilterBank b = oracle::random_filters(2, 2, 2, rng);
    const Matrix pi = oracle::random_nonnegative(2, 2, rng);
    EXPECT_LE(oracle::max_relative_error(frobenius_loss_tensor_apply(a, b, pi), oracle::naive_frobenius_loss(a, b, pi)),
              1e-10);
}

TEST(FrobeniusLoss, UnitKernelReducesToScalarCase)
{
    std::mt19937_64 rng(8);
    const FilterBank a = oracle::random_filters(3, 4, 1, rng);
    const FilterBank b = oracle::random_filters(5, 2, 1, rng);
    const Matrix pi = oracle::random_nonnegative(4, 2, rng);
    EXPECT_EQ(frobenius_loss_tensor_apply(a, b, pi), sq_loss_tensor_apply(a.slice(0), b.slice(0), pi));
}

TEST(FrobeniusLoss, SelfCouplingHasZeroDiagonal)
{
    std::mt19937_64 rng(9);
    const FilterBank a = oracle::random_filters(3, 3, 3, rng);
    const Matrix out = frobenius_loss_tensor_apply(a, a, Matrix::identity(3) * (1.0 / 3.0));
    for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_NEAR(out(j, j), 0.0, 1e-12);
    }
}

TEST(FrobeniusLoss, MismatchedKernelThrows)
{
    EXPECT_THROW(frobenius_loss_tensor_apply(FilterBank(2, 2, 3), FilterBank(2, 2, 1), Matrix(2, 2)),
                 ContractViolation);
}

} // namespace
} // namespace wbfuse
