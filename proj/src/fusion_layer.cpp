#include <cmath>
#include <future>
#include <string>

#include "wbfuse/fusion.hpp"
#include "wbfuse/tensor_product.hpp"

namespace wbfuse {

namespace {

// Coupling of the bias pseudo-node with itself: one extra input node carrying
// the mass of an ordinary node of the previous layer.
Matrix bias_coupling(const Matrix& prev)
{
    return Matrix(1, 1, 1.0 / static_cast<double>(prev.rows()));
}

Matrix sliced_cost(std::span<const Matrix> a, std::span<const Matrix> b, const Matrix& pi)
{
    return a.empty() ? Matrix(0, 0) : sliced_sq_loss_tensor_apply(a, b, pi);
}

void check_layer(const LayerParams& target, const LayerParams& input, const Matrix& prev, std::size_t index)
{
    const std::string who = "fusion input " + std::to_string(index);
    require(!target.weights.empty(), "fusion: layer has no incoming weights");
    require(input.weights.size() == target.weights.size() && input.biases.size() == target.biases.size() &&
                input.hidden.size() == target.hidden.size(),
            who + ": parameter groups differ from the target");
    require(prev.rows() == target.weights.front().cols() && prev.cols() == input.weights.front().cols(),
            who + ": previous coupling is " + std::to_string(prev.rows()) + "x" + std::to_string(prev.cols()) +
                " but weights have " + std::to_string(target.weights.front().cols()) + " and " +
                std::to_string(input.weights.front().cols()) + " columns");
    for (std::size_t p = 0; p < input.weights.size(); ++p) {
        require(input.weights[p].rows() == input.nodes() && input.weights[p].cols() == prev.cols(),
                who + ": weight slices disagree in shape");
    }
    for (const Matrix& b : input.biases) {
        require(b.rows() == input.nodes() && b.cols() == 1, who + ": bias shape");
    }
    for (const Matrix& h : input.hidden) {
        require(h.rows() == input.nodes() && h.cols() == input.nodes(), who + ": hidden weights must be square");
    }
}

std::vector<double> resolve_lambda(const FusionConfig& cfg, std::size_t n)
{
    if (cfg.lambda.empty()) {
        return std::vector<double>(n, 1.0 / static_cast<double>(n));
    }
    return cfg.lambda;
}

std::vector<StructurePair> structure(const LayerParams& target, const LayerParams& input)
{
    std::vector<StructurePair> pairs;
    for (std::size_t g = 0; g < target.hidden.size(); ++g) {
        pairs.push_back({&target.hidden[g], &input.hidden[g]});
    }
    return pairs;
}

// Exact minimizer of B over the target parameters for fixed couplings:
// sum_i lambda_i Pi_i M_i Q_i^T divided elementwise by
// sum_i lambda_i (Pi_i 1)(Q_i 1)^T.
class BarycenterUpdate {
public:
    BarycenterUpdate(std::size_t rows, std::size_t cols) : num_(rows, cols), den_(rows, cols) {}

    void add(double lambda, const Matrix& pi, const Matrix& m, const Matrix& q)
    {
        if (lambda == 0.0) {
            return;
        }
        num_ += lambda * matmul_bt(matmul(pi, m), q);
        const std::vector<double> r = row_sums(pi);
        const std::vector<double> c = row_sums(q);
        for (std::size_t j = 0; j < num_.rows(); ++j) {
            for (std::size_t k = 0; k < num_.cols(); ++k) {
                den_(j, k) += lambda * r[j] * c[k];
            }
        }
    }

    Matrix result(const Matrix& previous) const
    {
        Matrix out = num_;
        for (std::size_t j = 0; j < out.rows(); ++j) {
            for (std::size_t k = 0; k < out.cols(); ++k) {
                // A node no input sends mass to keeps its value.
                out(j, k) = den_(j, k) > 0.0 ? num_(j, k) / den_(j, k) : previous(j, k);
            }
        }
        return out;
    }

private:
    Matrix num_;
    Matrix den_;
};

LayerParams weight_update(const LayerParams& current, std::span<const LayerParams> inputs,
                          std::span<const Matrix> prev, std::span<const Matrix> couplings,
                          std::span<const double> lambda, bool update_hidden)
{
    LayerParams next = current;
    for (std::size_t p = 0; p < current.weights.size(); ++p) {
        BarycenterUpdate u(current.weights[p].rows(), current.weights[p].cols());
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            u.add(lambda[i], couplings[i], inputs[i].weights[p], prev[i]);
        }
        next.weights[p] = u.result(current.weights[p]);
    }
    const Matrix one(1, 1, 1.0);
    for (std::size_t p = 0; p < current.biases.size(); ++p) {
        BarycenterUpdate u(current.biases[p].rows(), 1);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            u.add(lambda[i], couplings[i], inputs[i].biases[p], one);
        }
        next.biases[p] = u.result(current.biases[p]);
    }
    if (update_hidden) {
        for (std::size_t p = 0; p < current.hidden.size(); ++p) {
            BarycenterUpdate u(current.hidden[p].rows(), current.hidden[p].cols());
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                u.add(lambda[i], couplings[i], inputs[i].hidden[p], couplings[i]);
            }
            next.hidden[p] = u.result(current.hidden[p]);
        }
    }
    return next;
}

double squared_norm(const LayerParams& a, bool with_hidden)
{
    double s = 0.0;
    auto add = [&](const std::vector<Matrix>& ms) {
        for (const Matrix& m : ms) {
            s += frobenius_dot(m, m);
        }
    };
    add(a.weights);
    add(a.biases);
    if (with_hidden) {
        add(a.hidden);
    }
    return s;
}

double relative_change(const LayerParams& before, const LayerParams& after, bool with_hidden)
{
    LayerParams diff = after;
    auto sub = [](std::vector<Matrix>& d, const std::vector<Matrix>& b) {
        for (std::size_t p = 0; p < d.size(); ++p) {
            d[p] -= b[p];
        }
    };
    sub(diff.weights, before.weights);
    sub(diff.biases, before.biases);
    sub(diff.hidden, before.hidden);
    const double base = std::sqrt(squared_norm(before, with_hidden));
    const double delta = std::sqrt(squared_norm(diff, with_hidden));
    return base > 0.0 ? delta / base : (delta > 0.0 ? INFINITY : 0.0);
}

struct Engine {
    std::span<const LayerParams> inputs;
    std::span<const Matrix> prev;
    const FusionConfig& cfg;
    double alpha;        // weight of the hidden term in the objective
    double alpha_inner;  // weight inside the coupling iteration
    std::size_t inner_max;
    std::vector<double> lambda;

    Coupling solve_one(const LayerParams& target, std::size_t i) const
    {
        const Matrix cost = wb_layer_cost(target, inputs[i], prev[i]);
        const std::vector<StructurePair> pairs = structure(target, inputs[i]);
        return entropic_gw_solve(cost, pairs, Histogram::uniform(target.nodes()), Histogram::uniform(inputs[i].nodes()),
                                 alpha_inner, cfg.sinkhorn, inner_max)
            .coupling;
    }

    std::vector<Matrix> solve_all(const LayerParams& target) const
    {
        std::vector<Matrix> out(inputs.size());
        if (cfg.threads <= 1 || inputs.size() == 1) {
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                out[i] = solve_one(target, i).plan;
            }
            return out;
        }
        for (std::size_t start = 0; start < inputs.size(); start += cfg.threads) {
            std::vector<std::future<Coupling>> jobs;
            for (std::size_t i = start; i < std::min(inputs.size(), start + cfg.threads); ++i) {
                jobs.push_back(std::async(std::launch::async, [this, &target, i] { return solve_one(target, i); }));
            }
            for (std::size_t k = 0; k < jobs.size(); ++k) {
                out[start + k] = jobs[k].get().plan;
            }
        }
        return out;
    }

    double objective(const LayerParams& target, std::span<const Matrix> couplings) const
    {
        return fusion_objective(target, inputs, prev, couplings, lambda, alpha);
    }

    LayerFusion run(const LayerParams& init, std::span<const Matrix> fixed) const
    {
        require(!inputs.empty(), "fusion: no inputs");
        require(prev.size() == inputs.size(), "fusion: need one previous coupling per input");
        require(fixed.empty() || fixed.size() == inputs.size(), "fusion: need one fixed coupling per input");
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            check_layer(init, inputs[i], prev[i], i);
            if (!fixed.empty()) {
                require(fixed[i].rows() == init.nodes() && fixed[i].cols() == inputs[i].nodes(),
                        "fusion: fixed coupling " + std::to_string(i) + " has the wrong shape");
            }
        }

        LayerFusion out;
        out.fused = init;
        const bool with_hidden = alpha > 0.0;
        for (std::size_t outer = 1; outer <= cfg.outer_max; ++outer) {
            if (fixed.empty()) {
                out.couplings = solve_all(out.fused);
            } else {
                out.couplings.assign(fixed.begin(), fixed.end());
            }
            TraceStep step;
            step.outer = outer;
            step.before_update = objective(out.fused, out.couplings);
            LayerParams next = weight_update(out.fused, inputs, prev, out.couplings, lambda, !init.hidden.empty());
            step.after_update = objective(next, out.couplings);
            if (!std::isfinite(step.before_update) || !std::isfinite(step.after_update)) {
                throw SolverError("fusion: objective became non-finite at outer iteration " + std::to_string(outer) +
                                  " (before " + std::to_string(step.before_update) + ", after " +
                                  std::to_string(step.after_update) + ")");
            }
            out.trace.steps.push_back(step);
            const double change = relative_change(out.fused, next, with_hidden);
            out.fused = std::move(next);
            if (!fixed.empty() || change <= cfg.outer_tol) {
                out.trace.converged = true;
                break;
            }
        }
        return out;
    }
};

LayerParams params_of(const Matrix& w)
{
    return LayerParams{{w}, {}, {}};
}

} // namespace

void FusionConfig::validate(std::size_t n_inputs) const
{
    sinkhorn.validate();
    require(n_inputs >= 1, "fusion: no inputs");
    require(outer_max >= 1, "fusion: outer_max must be at least 1");
    require(outer_tol >= 0.0, "fusion: outer_tol must be nonnegative");
    require(threads >= 1, "fusion: threads must be at least 1");
    if (!lambda.empty()) {
        require(lambda.size() == n_inputs, "fusion: lambda has " + std::to_string(lambda.size()) + " weights for " +
                                               std::to_string(n_inputs) + " inputs");
        static_cast<void>(Histogram(lambda));
    }
    for (std::size_t w : target_widths) {
        require(w >= 1, "fusion: target widths must be positive");
    }
    if (init.kind == InitPolicy::Kind::copy_model) {
        require(init.index < n_inputs, "fusion: copy_model index out of range");
    }
    require(init.std >= 0.0, "fusion: init std must be nonnegative");
}

std::vector<Matrix> first_layer_coupling(std::size_t input_dim, std::size_t n)
{
    require(input_dim >= 1, "first_layer_coupling: input_dim must be positive");
    return std::vector<Matrix>(n, Matrix::identity(input_dim) * (1.0 / static_cast<double>(input_dim)));
}

Matrix wb_layer_cost(const LayerParams& target, const LayerParams& input, const Matrix& prev)
{
    Matrix cost = sliced_sq_loss_tensor_apply(target.weights, input.weights, prev);
    if (!target.biases.empty()) {
        cost += sliced_cost(target.biases, input.biases, bias_coupling(prev));
    }
    return cost;
}

Matrix ot_baseline_layer_cost(const LayerParams& target, const LayerParams& input, const Matrix& prev)
{
    Matrix cost(target.nodes(), input.nodes());
    const std::vector<double> r = row_sums(prev);
    Matrix t = prev;
    for (std::size_t q = 0; q < t.rows(); ++q) {
        for (double& v : t.row(q)) {
            v = r[q] > 0.0 ? v / r[q] : 0.0;
        }
    }
    auto add_rows = [&](const Matrix& a, const Matrix& b) {
        for (std::size_t j = 0; j < a.rows(); ++j) {
            for (std::size_t g = 0; g < b.rows(); ++g) {
                double s = 0.0;
                for (std::size_t k = 0; k < a.cols(); ++k) {
                    const double d = a(j, k) - b(g, k);
                    s += d * d;
                }
                cost(j, g) += s;
            }
        }
    };
    for (std::size_t p = 0; p < target.weights.size(); ++p) {
        add_rows(target.weights[p], matmul_bt(input.weights[p], t));
    }
    for (std::size_t p = 0; p < target.biases.size(); ++p) {
        add_rows(target.biases[p], input.biases[p]);
    }
    return cost;
}

double fusion_objective(const LayerParams& target, std::span<const LayerParams> inputs, std::span<const Matrix> prev,
                        std::span<const Matrix> couplings, std::span<const double> lambda, double alpha)
{
    double b = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (lambda[i] == 0.0) {
            continue;
        }
        double term = frobenius_dot(wb_layer_cost(target, inputs[i], prev[i]), couplings[i]);
        if (alpha > 0.0) {
            const std::vector<StructurePair> pairs = structure(target, inputs[i]);
            term += alpha * gw_energy(pairs, couplings[i]);
        }
        b += lambda[i] * term;
    }
    return b;
}

LayerFusion wb_fuse_layer(const LayerParams& init, std::span<const LayerParams> inputs, std::span<const Matrix> prev,
                          const FusionConfig& cfg, std::span<const Matrix> fixed)
{
    cfg.validate(inputs.size());
    const Engine engine{inputs, prev, cfg, 0.0, 0.0, 1, resolve_lambda(cfg, inputs.size())};
    return engine.run(init, fixed);
}

LayerFusion wb_fuse_layer(const Matrix& init, std::span<const Matrix> inputs, std::span<const Matrix> prev,
                          const FusionConfig& cfg)
{
    std::vector<LayerParams> wrapped;
    for (const Matrix& m : inputs) {
        wrapped.push_back(params_of(m));
    }
    return wb_fuse_layer(params_of(init), wrapped, prev, cfg);
}

LayerFusion gwb_fuse_layer(const LayerParams& init, std::span<const LayerParams> inputs, std::span<const Matrix> prev,
                           const GwbConfig& cfg, std::span<const Matrix> fixed)
{
    cfg.base.validate(inputs.size());
    require(cfg.alpha_h >= 0.0 && std::isfinite(cfg.alpha_h), "gwb fusion: alpha_h must be nonnegative");
    require(cfg.inner_max >= 1, "gwb fusion: inner_max must be at least 1");
    const double inner = cfg.alpha_in_inner ? cfg.alpha_h : (cfg.alpha_h > 0.0 ? 1.0 : 0.0);
    const Engine engine{inputs, prev, cfg.base, cfg.alpha_h, inner, cfg.inner_max,
                        resolve_lambda(cfg.base, inputs.size())};
    return engine.run(init, fixed);
}

LayerParams layer_params(const LstmLayer& layer)
{
    LayerParams p;
    for (const RecurrentLayer& g : layer.gates) {
        p.weights.push_back(g.input_weight);
        p.biases.emplace_back(g.hidden(), 1, g.bias);
        p.hidden.push_back(g.hidden_weight);
    }
    return p;
}

LstmFusion lstm_fuse_layer(const LstmLayer& init, std::span<const LstmLayer> inputs, std::span<const Matrix> prev,
                           const GwbConfig& cfg)
{
    std::vector<LayerParams> wrapped;
    for (const LstmLayer& l : inputs) {
        wrapped.push_back(layer_params(l));
    }
    LayerFusion f = gwb_fuse_layer(layer_params(init), wrapped, prev, cfg);
    LstmFusion out;
    for (std::size_t g = 0; g < 4; ++g) {
        RecurrentLayer& gate = out.fused.gates[g];
        gate.input_weight = f.fused.weights[g];
        gate.hidden_weight = f.fused.hidden[g];
        gate.bias.assign(f.fused.biases[g].data().begin(), f.fused.biases[g].data().end());
    }
    out.couplings = std::move(f.couplings);
    out.trace = std::move(f.trace);
    return out;
}

} // namespace wbfuse
