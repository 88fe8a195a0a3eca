#include "wbfuse/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

namespace wbfuse {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Scalings are folded back into the duals once |log u| or |log v| exceeds this.
constexpr double kAbsorbThreshold = 50.0;
// Epsilon-scaling schedule for log-domain solves: start here (the cost is
// normalized to max 1), shrink by kScalingFactor per stage, and leave a stage
// once rows are within kStageTol or after kStageIters iterations.
constexpr double kScalingStart = 0.5;
constexpr double kScalingFactor = 0.5;
constexpr double kStageTol = 1e-4;
constexpr std::size_t kStageIters = 200;

// Shared state of one Sinkhorn solve on a normalized cost.
struct Scaling {
    const Matrix& cost;
    std::span<const double> p;
    std::span<const double> q;
    double eps;

    std::vector<double> f;  // dual potentials, already absorbed into kernel
    std::vector<double> g;
    std::vector<double> u;  // pending scalings on top of the kernel
    std::vector<double> v;
    Matrix kernel;

    Scaling(const Matrix& c, const Histogram& hp, const Histogram& hq, double epsilon)
        : cost(c), p(hp.weights()), q(hq.weights()), eps(epsilon), f(c.rows(), 0.0), g(c.cols(), 0.0),
          u(c.rows(), 1.0), v(c.cols(), 1.0), kernel(c.rows(), c.cols())
    {
    }

    std::size_t n1() const { return cost.rows(); }
    std::size_t n2() const { return cost.cols(); }

    void rebuild_kernel()
    {
        for (std::size_t i = 0; i < n1(); ++i) {
            for (std::size_t j = 0; j < n2(); ++j) {
                const double e = f[i] + g[j] - cost(i, j);
                kernel(i, j) = (f[i] == kNegInf || g[j] == kNegInf) ? 0.0 : std::exp(e / eps);
            }
        }
    }

    // Exact log-sum-exp updates of both potentials; resets the scalings.
    void log_step()
    {
        absorb();
        for (std::size_t i = 0; i < n1(); ++i) {
            if (p[i] == 0.0) {
                f[i] = kNegInf;
                continue;
            }
            double m = kNegInf;
            for (std::size_t j = 0; j < n2(); ++j) {
                m = std::max(m, g[j] - cost(i, j));
            }
            double s = 0.0;
            for (std::size_t j = 0; j < n2(); ++j) {
                if (g[j] != kNegInf) {
                    s += std::exp((g[j] - cost(i, j) - m) / eps);
                }
            }
            f[i] = eps * std::log(p[i]) - (m + eps * std::log(s));
        }
        for (std::size_t j = 0; j < n2(); ++j) {
            if (q[j] == 0.0) {
                g[j] = kNegInf;
                continue;
            }
            double m = kNegInf;
            for (std::size_t i = 0; i < n1(); ++i) {
                m = std::max(m, f[i] - cost(i, j));
            }
            double s = 0.0;
            for (std::size_t i = 0; i < n1(); ++i) {
                if (f[i] != kNegInf) {
                    s += std::exp((f[i] - cost(i, j) - m) / eps);
                }
            }
            g[j] = eps * std::log(q[j]) - (m + eps * std::log(s));
        }
        rebuild_kernel();
    }

    void set_epsilon(double e)
    {
        absorb();
        eps = e;
        rebuild_kernel();
    }

    void absorb()
    {
        for (std::size_t i = 0; i < n1(); ++i) {
            f[i] = (f[i] == kNegInf || u[i] == 0.0) ? kNegInf : f[i] + eps * std::log(u[i]);
            u[i] = 1.0;
        }
        for (std::size_t j = 0; j < n2(); ++j) {
            g[j] = (g[j] == kNegInf || v[j] == 0.0) ? kNegInf : g[j] + eps * std::log(v[j]);
            v[j] = 1.0;
        }
    }

    // One pair of scaling updates. Returns false when a kernel row or column
    // carrying mass has underflowed to zero.
    bool scaling_step()
    {
        const std::vector<double> kv = matvec(kernel, v);
        for (std::size_t i = 0; i < n1(); ++i) {
            if (p[i] == 0.0) {
                u[i] = 0.0;
            } else if (kv[i] > 0.0) {
                u[i] = p[i] / kv[i];
            } else {
                return false;
            }
        }
        std::vector<double> ktu(n2(), 0.0);
        for (std::size_t i = 0; i < n1(); ++i) {
            if (u[i] == 0.0) {
                continue;
            }
            auto row = kernel.row(i);
            for (std::size_t j = 0; j < n2(); ++j) {
                ktu[j] += row[j] * u[i];
            }
        }
        for (std::size_t j = 0; j < n2(); ++j) {
            if (q[j] == 0.0) {
                v[j] = 0.0;
            } else if (ktu[j] > 0.0) {
                v[j] = q[j] / ktu[j];
            } else {
                return false;
            }
        }
        return std::all_of(u.begin(), u.end(), [](double x) { return std::isfinite(x); }) &&
               std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    }

    bool scalings_large() const
    {
        auto large = [](double x) { return x > 0.0 && std::abs(std::log(x)) > kAbsorbThreshold; };
        return std::any_of(u.begin(), u.end(), large) || std::any_of(v.begin(), v.end(), large);
    }

    Matrix plan() const
    {
        Matrix out(n1(), n2());
        for (std::size_t i = 0; i < n1(); ++i) {
            for (std::size_t j = 0; j < n2(); ++j) {
                out(i, j) = u[i] * kernel(i, j) * v[j];
            }
        }
        return out;
    }

    double row_violation() const
    {
        const std::vector<double> kv = matvec(kernel, v);
        double s = 0.0;
        for (std::size_t i = 0; i < n1(); ++i) {
            s += std::abs(u[i] * kv[i] - p[i]);
        }
        return s;
    }

    double dual(const Matrix& pi) const
    {
        double d = 0.0;
        for (std::size_t i = 0; i < n1(); ++i) {
            if (p[i] > 0.0) {
                d += p[i] * (f[i] + eps * std::log(u[i]));
            }
        }
        for (std::size_t j = 0; j < n2(); ++j) {
            if (q[j] > 0.0) {
                d += q[j] * (g[j] + eps * std::log(v[j]));
            }
        }
        return d - eps * total(pi);
    }
};

void emit_trace(SinkhornTraceSink* trace, const Scaling& s, std::size_t iteration, double violation, double scale)
{
    if (trace == nullptr) {
        return;
    }
    const Matrix pi = s.plan();
    SinkhornTraceRow row;
    row.iteration = iteration;
    row.primal = scale * (transport_cost(s.cost, pi) - s.eps * entropy(pi));
    row.dual = scale * s.dual(pi);
    row.violation = violation;
    trace->record(row);
}

} // namespace

SinkhornParams SinkhornParams::for_epsilon(double epsilon)
{
    SinkhornParams params;
    params.epsilon = epsilon;
    params.log_domain = epsilon <= kLogDomainThreshold;
    return params;
}

void SinkhornParams::validate() const
{
    require(epsilon > 0.0 && std::isfinite(epsilon), "SinkhornParams: epsilon must be positive");
    require(max_iter >= 1, "SinkhornParams: max_iter must be at least 1");
    require(tol > 0.0, "SinkhornParams: tol must be positive");
}

TsvSinkhornTrace::TsvSinkhornTrace(std::ostream& out, bool header) : out_(out)
{
    if (header) {
        out_ << "iteration\tprimal\tdual\tviolation\n";
    }
}

void TsvSinkhornTrace::record(const SinkhornTraceRow& row)
{
    out_ << row.iteration << '\t' << row.primal << '\t' << row.dual << '\t' << row.violation << '\n';
}

double transport_cost(const Matrix& cost, const Matrix& plan)
{
    return frobenius_dot(cost, plan);
}

double entropy(const Matrix& plan)
{
    double h = 0.0;
    for (double x : plan.data()) {
        if (x > 0.0) {
            h -= x * (std::log(x) - 1.0);
        }
    }
    return h;
}

double marginal_violation(const Matrix& plan, const Histogram& p, const Histogram& q)
{
    require(plan.rows() == p.size() && plan.cols() == q.size(), "marginal_violation: shape mismatch");
    const std::vector<double> r = row_sums(plan);
    const std::vector<double> c = col_sums(plan);
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        s += std::abs(r[i] - p[i]);
    }
    for (std::size_t j = 0; j < c.size(); ++j) {
        s += std::abs(c[j] - q[j]);
    }
    return s;
}

Coupling sinkhorn(const Matrix& cost, const Histogram& p, const Histogram& q, const SinkhornParams& params,
                  SinkhornTraceSink* trace)
{
    params.validate();
    require(cost.rows() == p.size() && cost.cols() == q.size(),
            "sinkhorn: cost is " + std::to_string(cost.rows()) + "x" + std::to_string(cost.cols()) +
                " but marginals have sizes " + std::to_string(p.size()) + " and " + std::to_string(q.size()));
    require(cost.all_finite(), "sinkhorn: cost matrix has non-finite entries");

    double scale = 0.0;
    for (double c : cost.data()) {
        scale = std::max(scale, c);
    }
    if (scale <= 0.0) {
        scale = 1.0;
    }
    const Matrix normalized = cost * (1.0 / scale);

    Scaling s(normalized, p, q, params.epsilon);
    std::size_t it = 0;
    // One scaling iteration; false when the standard domain has broken down.
    auto step = [&] {
        if (!s.scaling_step()) {
            if (!params.log_domain) {
                return false;
            }
            s.log_step();
        } else if (params.log_domain && s.scalings_large()) {
            s.absorb();
            s.rebuild_kernel();
        }
        return true;
    };

    if (params.log_domain) {
        double e = std::max(params.epsilon, kScalingStart);
        s.eps = e;
        s.log_step();
        while (e > params.epsilon) {
            for (std::size_t k = 0; k < kStageIters && it < params.max_iter; ++k) {
                ++it;
                step();
                if (s.row_violation() <= kStageTol) {
                    break;
                }
            }
            e = std::max(params.epsilon, e * kScalingFactor);
            s.set_epsilon(e);
        }
        s.log_step();
    } else {
        s.rebuild_kernel();
        for (std::size_t i = 0; i < s.n1(); ++i) {
            auto row = s.kernel.row(i);
            if (p[i] > 0.0 && std::all_of(row.begin(), row.end(), [](double k) { return k == 0.0; })) {
                throw SolverError("sinkhorn: Gibbs kernel row " + std::to_string(i) +
                                  " underflowed at epsilon " + std::to_string(params.epsilon) +
                                  "; enable log-domain iterations");
            }
        }
    }

    Coupling result;
    double violation = std::numeric_limits<double>::infinity();
    while (it < params.max_iter) {
        ++it;
        if (!step()) {
            throw SolverError("sinkhorn: scaling underflow/overflow at epsilon " + std::to_string(params.epsilon) +
                              "; enable log-domain iterations");
        }
        violation = s.row_violation();
        emit_trace(trace, s, it, violation, scale);
        if (violation <= params.tol) {
            result.converged = true;
            break;
        }
    }

    result.plan = s.plan();
    if (!result.plan.all_finite()) {
        throw SolverError("sinkhorn: non-finite transport plan");
    }
    result.row_marginal = p;
    result.col_marginal = q;
    result.violation = marginal_violation(result.plan, p, q);
    result.iterations = it;
    return result;
}

} // namespace wbfuse
