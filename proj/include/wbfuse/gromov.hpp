#pragma once

#include <cstddef>
#include <span>

#include "wbfuse/matrix.hpp"
#include "wbfuse/sinkhorn.hpp"

namespace wbfuse {

/// A pair of similarity matrices supported on the two node sets being
/// coupled (n1 x n1 and n2 x n2). Several pairs sum their GW terms.
struct StructurePair {
    const Matrix* source;  // sim_A: the side indexed by coupling rows
    const Matrix* target;  // sim_B: the side indexed by coupling columns
};

struct GwSolveResult {
    Coupling coupling;
    std::size_t outer_iterations = 0;
    bool converged = false;
    /// l1 change of the plan over the last outer iteration.
    double last_change = 0.0;
};

/// Entropic (fused) Gromov-Wasserstein fixed-point iteration:
///
///   Pi <- sinkhorn(fixed_cost + alpha * sum_k L(A_k, B_k) (x) Pi, p, q)
///
/// started from the product coupling p q^T and stopped when the plan moves by
/// at most params.tol in l1 or after inner_max solves. With alpha == 0 the
/// structure term vanishes and the result is one Sinkhorn solve.
GwSolveResult entropic_gw_solve(const Matrix& fixed_cost, std::span<const StructurePair> structure,
                                const Histogram& p, const Histogram& q, double alpha,
                                const SinkhornParams& params, std::size_t inner_max);

GwSolveResult entropic_gw_solve(const Matrix& fixed_cost, const Matrix& sim_a, const Matrix& sim_b,
                                const Histogram& p, const Histogram& q, double alpha,
                                const SinkhornParams& params, std::size_t inner_max);

/// The GW energy sum_k <L(A_k, B_k) (x) Pi, Pi>.
double gw_energy(std::span<const StructurePair> structure, const Matrix& plan);

/// Outer product p q^T.
Matrix product_coupling(const Histogram& p, const Histogram& q);

} // namespace wbfuse
