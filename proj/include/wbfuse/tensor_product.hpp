#pragma once

#include <span>

#include "wbfuse/matrix.hpp"

namespace wbfuse {

/// Contracts the squared-difference tensor L(A, B)_{jgqs} = (A_jq - B_gs)^2
/// against a nonnegative matrix Pi (q x s):
///
///   out_{jg} = sum_{q,s} (A_jq - B_gs)^2 Pi_qs
///
/// Evaluated in O(j q s + j s g) through
///   (A o A) r 1^T + 1 ((B o B) c)^T - 2 A Pi B^T,   r = Pi 1, c = Pi^T 1.
/// Results are clamped at zero to absorb cancellation round-off.
Matrix sq_loss_tensor_apply(const Matrix& a, const Matrix& b, const Matrix& pi);

/// Sum of sq_loss_tensor_apply over paired slices: the contraction used when a
/// node's weight function takes values in R^P (e.g. flattened k x k filters).
Matrix sliced_sq_loss_tensor_apply(std::span<const Matrix> a, std::span<const Matrix> b, const Matrix& pi);

/// Same contraction with (A_jq - B_gs)^2 replaced by the squared Frobenius norm
/// of the difference of the k x k filters A[j,q] and B[g,s].
Matrix frobenius_loss_tensor_apply(const FilterBank& a, const FilterBank& b, const Matrix& pi);

} // namespace wbfuse
