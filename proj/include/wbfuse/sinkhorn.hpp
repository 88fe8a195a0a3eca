#pragma once

#include <cstddef>
#include <iosfwd>
#include <stdexcept>

#include "wbfuse/matrix.hpp"

namespace wbfuse {

/// Failure inside an OT solver that the caller can act on (e.g. switch to
/// log-domain iterations).
class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SinkhornParams {
    /// Log-domain iterations are the default at or below this epsilon.
    static constexpr double kLogDomainThreshold = 5e-3;

    double epsilon = 5e-3;
    std::size_t max_iter = 20000;
    double tol = 1e-9;
    bool log_domain = true;

    static SinkhornParams for_epsilon(double epsilon);
    void validate() const;
};

/// A transport plan together with the marginals it was solved for.
struct Coupling {
    Matrix plan;
    Histogram row_marginal;
    Histogram col_marginal;
    /// l1 marginal violation (rows + columns) of `plan` at return.
    double violation = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

/// One row of an optional per-iteration Sinkhorn trace. Objectives are in
/// the units of the caller's (un-normalized) cost matrix.
struct SinkhornTraceRow {
    std::size_t iteration = 0;
    /// <C, Pi> - eps H(Pi) on the current (possibly infeasible) iterate.
    double primal = 0.0;
    /// Dual objective <f, p> + <g, q> - eps sum Pi; non-decreasing.
    double dual = 0.0;
    double violation = 0.0;
};

/// Receives trace rows; a null sink disables tracing.
class SinkhornTraceSink {
public:
    virtual ~SinkhornTraceSink() = default;
    virtual void record(const SinkhornTraceRow& row) = 0;
};

/// Writes rows as tab-separated `iteration primal dual violation` lines.
class TsvSinkhornTrace final : public SinkhornTraceSink {
public:
    explicit TsvSinkhornTrace(std::ostream& out, bool header = true);
    void record(const SinkhornTraceRow& row) override;

private:
    std::ostream& out_;
};

/// Entropic OT: argmin_{Pi in Gamma(p,q)} <C,Pi> - eps H(Pi), solved by
/// Sinkhorn scaling on the Gibbs kernel exp(-C/eps). The cost is divided by
/// its largest entry (when positive) before solving, so eps is relative to
/// the cost range. Iterates until the l1 marginal violation is <= tol or
/// max_iter is hit; the returned Coupling reports which. Log-domain solves
/// warm-start through a geometric epsilon schedule; only the final stage is
/// traced, but every iteration counts against max_iter.
Coupling sinkhorn(const Matrix& cost, const Histogram& p, const Histogram& q, const SinkhornParams& params,
                  SinkhornTraceSink* trace = nullptr);

/// <C, Pi>
double transport_cost(const Matrix& cost, const Matrix& plan);

/// Entropy H(Pi) = -sum Pi (log Pi - 1), with 0 log 0 = 0.
double entropy(const Matrix& plan);

/// l1 distance of the plan's row and column sums from the given marginals.
double marginal_violation(const Matrix& plan, const Histogram& p, const Histogram& q);

} // namespace wbfuse
