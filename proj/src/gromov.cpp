#include "wbfuse/gromov.hpp"

#include <cmath>

#include "wbfuse/tensor_product.hpp"

namespace wbfuse {

namespace {

Matrix structure_cost(std::span<const StructurePair> structure, const Matrix& plan)
{
    Matrix out(plan.rows(), plan.cols());
    for (const StructurePair& pair : structure) {
        out += sq_loss_tensor_apply(*pair.source, *pair.target, plan);
    }
    return out;
}

} // namespace

Matrix product_coupling(const Histogram& p, const Histogram& q)
{
    Matrix out(p.size(), q.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        for (std::size_t j = 0; j < q.size(); ++j) {
            out(i, j) = p[i] * q[j];
        }
    }
    return out;
}

double gw_energy(std::span<const StructurePair> structure, const Matrix& plan)
{
    return frobenius_dot(structure_cost(structure, plan), plan);
}

GwSolveResult entropic_gw_solve(const Matrix& fixed_cost, std::span<const StructurePair> structure,
                                const Histogram& p, const Histogram& q, double alpha,
                                const SinkhornParams& params, std::size_t inner_max)
{
    require(alpha >= 0.0 && std::isfinite(alpha), "entropic_gw_solve: alpha must be nonnegative");
    require(inner_max >= 1, "entropic_gw_solve: inner_max must be at least 1");
    require(fixed_cost.rows() == p.size() && fixed_cost.cols() == q.size(),
            "entropic_gw_solve: fixed cost does not match marginals");
    for (const StructurePair& pair : structure) {
        require(pair.source != nullptr && pair.target != nullptr, "entropic_gw_solve: null structure matrix");
        require(pair.source->rows() == pair.source->cols() && pair.source->rows() == p.size(),
                "entropic_gw_solve: sim_A must be square and match the row marginal");
        require(pair.target->rows() == pair.target->cols() && pair.target->rows() == q.size(),
                "entropic_gw_solve: sim_B must be square and match the column marginal");
    }

    GwSolveResult result;
    if (alpha == 0.0 || structure.empty()) {
        result.coupling = sinkhorn(fixed_cost, p, q, params);
        result.outer_iterations = 1;
        result.converged = true;
        return result;
    }

    Matrix plan = product_coupling(p, q);
    for (std::size_t it = 1; it <= inner_max; ++it) {
        Matrix cost = fixed_cost + alpha * structure_cost(structure, plan);
        Coupling next = sinkhorn(cost, p, q, params);
        result.last_change = l1_diff(next.plan, plan);
        plan = next.plan;
        result.coupling = std::move(next);
        result.outer_iterations = it;
        if (result.last_change <= params.tol) {
            result.converged = true;
            break;
        }
    }
    return result;
}

GwSolveResult entropic_gw_solve(const Matrix& fixed_cost, const Matrix& sim_a, const Matrix& sim_b,
                                const Histogram& p, const Histogram& q, double alpha,
                                const SinkhornParams& params, std::size_t inner_max)
{
    const StructurePair pair{&sim_a, &sim_b};
    return entropic_gw_solve(fixed_cost, std::span<const StructurePair>(&pair, 1), p, q, alpha, params,
                             inner_max);
}

} // namespace wbfuse
