#include <optional>
#include <random>
#include <string>

#include "wbfuse/fusion.hpp"

namespace wbfuse {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Matrix column(std::span<const double> v)
{
    return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
}

std::vector<double> values(const Matrix& m)
{
    return {m.data().begin(), m.data().end()};
}

LayerParams dense_params(const DenseLayer& d)
{
    return {{d.weight}, {column(d.bias)}, {}};
}

DenseLayer dense_from(const LayerParams& p)
{
    return {p.weights.at(0), values(p.biases.at(0))};
}

RecurrentLayer recurrent_from(const LayerParams& p, std::size_t g)
{
    return {p.weights.at(g), p.hidden.at(g), values(p.biases.at(g))};
}

// How one fused layer connects to the rest of the model.
struct UnitPlan {
    /// Dense layer fed by a flattened conv output: the previous channel
    /// coupling is expanded over this many spatial positions.
    std::size_t spatial = 0;
    /// Residual output layer: the coupling is that of this earlier unit.
    std::optional<std::size_t> shared_from;
    bool head = false;
};

std::vector<UnitPlan> plan_units(const Model& m)
{
    std::vector<UnitPlan> plan;
    std::vector<std::size_t> layer_out(m.layers.size());
    bool after_conv = false;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const Layer& layer = m.layers[l];
        if (const auto* block = std::get_if<ResidualBlock>(&layer)) {
            for (std::size_t k = 0; k < block->inner.size(); ++k) {
                UnitPlan u;
                if (k + 1 == block->inner.size()) {
                    u.shared_from = layer_out[block->skip_source];
                }
                plan.push_back(u);
            }
        } else {
            UnitPlan u;
            if (after_conv && std::holds_alternative<DenseLayer>(layer)) {
                u.spatial = m.input_shape.at(1) * m.input_shape.at(2);
            }
            plan.push_back(u);
        }
        after_conv = std::holds_alternative<ConvLayer>(layer);
        layer_out[l] = plan.size() - 1;
    }
    plan.back().head = true;
    return plan;
}

std::size_t input_nodes(const Model& m)
{
    return m.arch == ArchTag::cnn ? m.input_shape.at(0) : m.input_dim;
}

Matrix expand_spatial(const Matrix& channel_coupling, std::size_t spatial)
{
    return kron(channel_coupling, Matrix::identity(spatial)) * (1.0 / static_cast<double>(spatial));
}

// Coupling between the inputs of unit u of the target and of one input.
Matrix previous_coupling(const std::vector<UnitPlan>& plan, std::size_t u, std::size_t in_nodes,
                         const std::vector<Matrix>& couplings)
{
    if (u == 0) {
        return first_layer_coupling(in_nodes, 1).front();
    }
    return plan[u].spatial > 0 ? expand_spatial(couplings[u - 1], plan[u].spatial) : couplings[u - 1];
}

// Row-normalized coupling: the map sending an input's node values to the
// target's nodes.
Matrix transfer(const Matrix& pi)
{
    Matrix t = pi;
    const std::vector<double> r = row_sums(pi);
    for (std::size_t j = 0; j < t.rows(); ++j) {
        require(r[j] > 0.0, "align: coupling row " + std::to_string(j) + " carries no mass");
        for (double& v : t.row(j)) {
            v /= r[j];
        }
    }
    return t;
}

LayerParams transform(const LayerParams& p, const Matrix& t, const Matrix& t_prev)
{
    LayerParams out;
    for (const Matrix& w : p.weights) {
        out.weights.push_back(matmul_bt(matmul(t, w), t_prev));
    }
    for (const Matrix& b : p.biases) {
        out.biases.push_back(matmul(t, b));
    }
    for (const Matrix& h : p.hidden) {
        out.hidden.push_back(matmul_bt(matmul(t, h), t));
    }
    return out;
}

void check_compatible(std::span<const Model> inputs)
{
    require(!inputs.empty(), "fusion: no input models");
    const Model& a = inputs.front();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Model& b = inputs[i];
        const std::vector<Violation> report = validate(b);
        require(report.empty(), "fusion: input " + std::to_string(i) + " is invalid:\n" + format_report(report));
        const std::string who = "fusion: input " + std::to_string(i);
        require(b.arch == a.arch, who + " has arch " + std::string(to_string(b.arch)) + ", input 0 has " +
                                      std::string(to_string(a.arch)));
        require(b.input_dim == a.input_dim && b.input_shape == a.input_shape, who + " has a different input shape");
        require(b.layers.size() == a.layers.size(), who + " has a different depth");
        require(b.num_outputs() == a.num_outputs(), who + " has a different output width");
        for (std::size_t l = 0; l < a.layers.size(); ++l) {
            require(a.layers[l].index() == b.layers[l].index(),
                    who + " layer " + std::to_string(l) + " is a different kind of layer");
            if (const auto* ra = std::get_if<ResidualBlock>(&a.layers[l])) {
                const auto& rb = std::get<ResidualBlock>(b.layers[l]);
                require(ra->skip_source == rb.skip_source && ra->inner.size() == rb.inner.size(),
                        who + " layer " + std::to_string(l) + " has a different residual structure");
            }
            if (const auto* ca = std::get_if<ConvLayer>(&a.layers[l])) {
                require(ca->filters.kernel() == std::get<ConvLayer>(b.layers[l]).filters.kernel(),
                        who + " layer " + std::to_string(l) + " has a different kernel size");
            }
        }
    }
}

std::vector<std::size_t> widths_of(const std::vector<LayerParams>& units)
{
    std::vector<std::size_t> w;
    for (std::size_t u = 0; u + 1 < units.size(); ++u) {
        w.push_back(units[u].nodes());
    }
    return w;
}

// Initial target parameters per unit.
std::vector<LayerParams> initial_target(std::span<const Model> inputs, const std::vector<UnitPlan>& plan,
                                        const FusionConfig& cfg)
{
    std::vector<std::vector<LayerParams>> units;
    for (const Model& m : inputs) {
        units.push_back(layer_params(m));
    }
    std::vector<std::size_t> widths = cfg.target_widths;
    InitPolicy::Kind kind = cfg.init.kind;
    std::size_t index = cfg.init.index;
    if (kind == InitPolicy::Kind::automatic) {
        std::mt19937_64 rng(cfg.init.seed);
        index = std::uniform_int_distribution<std::size_t>(0, inputs.size() - 1)(rng);
        kind = (widths.empty() || widths == widths_of(units[index])) ? InitPolicy::Kind::copy_model
                                                                     : InitPolicy::Kind::random;
    }
    if (widths.empty()) {
        widths = widths_of(units[kind == InitPolicy::Kind::copy_model ? index : 0]);
    }
    require(widths.size() + 1 == plan.size(), "fusion: expected " + std::to_string(plan.size() - 1) +
                                                  " target widths, got " + std::to_string(widths.size()));
    if (kind == InitPolicy::Kind::copy_model) {
        require(widths == widths_of(units[index]),
                "fusion: copy_model init needs target widths equal to input " + std::to_string(index) + "'s");
        return units[index];
    }

    std::mt19937_64 rng(cfg.init.seed);
    std::normal_distribution<double> dist(0.0, cfg.init.std);
    auto fill = [&](std::size_t rows, std::size_t cols) {
        Matrix m(rows, cols);
        for (double& v : m.data()) {
            v = dist(rng);
        }
        return m;
    };
    widths.push_back(inputs.front().num_outputs());
    std::vector<LayerParams> out;
    std::size_t cols = input_nodes(inputs.front());
    for (std::size_t u = 0; u < plan.size(); ++u) {
        const LayerParams& shape = units[0][u];
        const std::size_t k = widths[u];
        if (plan[u].spatial > 0) {
            cols *= plan[u].spatial;
        }
        LayerParams p;
        for (std::size_t s = 0; s < shape.weights.size(); ++s) {
            p.weights.push_back(fill(k, cols));
        }
        for (std::size_t s = 0; s < shape.biases.size(); ++s) {
            p.biases.push_back(fill(k, 1));
        }
        for (std::size_t s = 0; s < shape.hidden.size(); ++s) {
            p.hidden.push_back(fill(k, k));
        }
        out.push_back(std::move(p));
        cols = k;
    }
    return out;
}

std::vector<Matrix> fixed_couplings(const std::vector<UnitPlan>& plan, std::size_t u,
                                    const std::vector<std::vector<Matrix>>& couplings, std::size_t target_nodes,
                                    std::span<const std::vector<LayerParams>> units, LastLayerPolicy policy)
{
    std::vector<Matrix> fixed;
    if (plan[u].shared_from) {
        for (const auto& c : couplings) {
            fixed.push_back(resnet_coupling_policy(target_nodes, c[*plan[u].shared_from]));
        }
    } else if (plan[u].head && policy == LastLayerPolicy::identity) {
        for (const auto& m : units) {
            require(m[u].nodes() == target_nodes, "fusion: identity head coupling needs equal output widths");
            fixed.push_back(Matrix::identity(target_nodes) * (1.0 / static_cast<double>(target_nodes)));
        }
    }
    return fixed;
}

template <class FuseLayer>
FusionResult fuse_units(std::span<const Model> inputs, const FusionConfig& cfg, FuseLayer fuse_layer)
{
    cfg.validate(inputs.size());
    check_compatible(inputs);
    const std::vector<UnitPlan> plan = plan_units(inputs.front());
    std::vector<std::vector<LayerParams>> units;
    for (const Model& m : inputs) {
        units.push_back(layer_params(m));
    }
    const std::vector<LayerParams> init = initial_target(inputs, plan, cfg);

    FusionResult result;
    result.couplings.assign(inputs.size(), {});
    std::vector<LayerParams> fused;
    const std::size_t in_nodes = input_nodes(inputs.front());
    for (std::size_t u = 0; u < plan.size(); ++u) {
        std::vector<LayerParams> layer_inputs;
        std::vector<Matrix> prev;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            layer_inputs.push_back(units[i][u]);
            prev.push_back(previous_coupling(plan, u, in_nodes, result.couplings[i]));
        }
        // Columns of the target's incoming weights follow the fused previous layer.
        LayerParams start = init[u];
        const std::vector<Matrix> fixed =
            fixed_couplings(plan, u, result.couplings, start.nodes(), units, cfg.last_layer);
        LayerFusion f = fuse_layer(start, layer_inputs, prev, fixed);
        f.trace.layer = u;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            result.couplings[i].push_back(std::move(f.couplings[i]));
        }
        fused.push_back(std::move(f.fused));
        result.trace.push_back(std::move(f.trace));
    }
    result.fused = with_layer_params(inputs.front(), fused);
    const std::vector<Violation> report = validate(result.fused);
    require(report.empty(), "fusion: fused model is invalid:\n" + format_report(report));
    return result;
}

std::vector<double> uniform_or(const std::vector<double>& lambda, std::size_t n)
{
    return lambda.empty() ? std::vector<double>(n, 1.0 / static_cast<double>(n)) : lambda;
}

} // namespace

std::vector<LayerParams> layer_params(const Model& model)
{
    std::vector<LayerParams> out;
    for (const Layer& layer : model.layers) {
        std::visit(Overloaded{
                       [&](const DenseLayer& d) { out.push_back(dense_params(d)); },
                       [&](const ConvLayer& c) {
                           LayerParams p;
                           const std::size_t taps = c.filters.kernel() * c.filters.kernel();
                           for (std::size_t t = 0; t < taps; ++t) {
                               p.weights.push_back(c.filters.slice(t));
                           }
                           p.biases.push_back(column(c.bias));
                           out.push_back(std::move(p));
                       },
                       [&](const RecurrentLayer& r) {
                           out.push_back({{r.input_weight}, {column(r.bias)}, {r.hidden_weight}});
                       },
                       [&](const LstmLayer& l) { out.push_back(layer_params(l)); },
                       [&](const ResidualBlock& b) {
                           for (const DenseLayer& d : b.inner) {
                               out.push_back(dense_params(d));
                           }
                       },
                   },
                   layer);
    }
    return out;
}

Model with_layer_params(const Model& skeleton, std::span<const LayerParams> params)
{
    Model out = skeleton;
    std::size_t u = 0;
    auto next = [&]() -> const LayerParams& {
        require(u < params.size(), "with_layer_params: too few layers");
        return params[u++];
    };
    for (Layer& layer : out.layers) {
        std::visit(Overloaded{
                       [&](DenseLayer& d) { d = dense_from(next()); },
                       [&](ConvLayer& c) {
                           const LayerParams& p = next();
                           const std::size_t k = c.filters.kernel();
                           require(p.weights.size() == k * k, "with_layer_params: conv tap count");
                           FilterBank f(p.nodes(), p.weights.front().cols(), k);
                           for (std::size_t t = 0; t < k * k; ++t) {
                               f.set_slice(t, p.weights[t]);
                           }
                           c = ConvLayer{std::move(f), values(p.biases.at(0))};
                       },
                       [&](RecurrentLayer& r) { r = recurrent_from(next(), 0); },
                       [&](LstmLayer& l) {
                           const LayerParams& p = next();
                           for (std::size_t g = 0; g < 4; ++g) {
                               l.gates[g] = recurrent_from(p, g);
                           }
                       },
                       [&](ResidualBlock& b) {
                           for (DenseLayer& d : b.inner) {
                               d = dense_from(next());
                           }
                       },
                   },
                   layer);
    }
    require(u == params.size(), "with_layer_params: too many layers");
    return out;
}

const Matrix& resnet_coupling_policy(std::size_t block_output_width, const Matrix& skip_source_coupling)
{
    require(skip_source_coupling.rows() == block_output_width,
            "resnet coupling: block output width " + std::to_string(block_output_width) +
                " differs from its skip source width " + std::to_string(skip_source_coupling.rows()));
    return skip_source_coupling;
}

FusionResult wb_fuse_model(std::span<const Model> inputs, const FusionConfig& cfg)
{
    return fuse_units(inputs, cfg,
                      [&](const LayerParams& init, std::span<const LayerParams> layer_inputs, std::span<const Matrix> prev,
                          std::span<const Matrix> fixed) { return wb_fuse_layer(init, layer_inputs, prev, cfg, fixed); });
}

FusionResult gwb_fuse_model(std::span<const Model> inputs, const GwbConfig& cfg)
{
    return fuse_units(inputs, cfg.base,
                      [&](const LayerParams& init, std::span<const LayerParams> layer_inputs, std::span<const Matrix> prev,
                          std::span<const Matrix> fixed) { return gwb_fuse_layer(init, layer_inputs, prev, cfg, fixed); });
}

FusionResult ot_fusion_baseline(std::span<const Model> inputs, const FusionConfig& cfg)
{
    const std::vector<double> lambda = uniform_or(cfg.lambda, inputs.size());
    return fuse_units(inputs, cfg,
                      [&](const LayerParams& init, std::span<const LayerParams> layer_inputs, std::span<const Matrix> prev,
                          std::span<const Matrix> fixed) {
                          LayerFusion out;
                          out.trace.converged = true;
                          LayerParams sum;
                          for (std::size_t i = 0; i < layer_inputs.size(); ++i) {
                              Matrix pi;
                              if (fixed.empty()) {
                                  pi = sinkhorn(ot_baseline_layer_cost(init, layer_inputs[i], prev[i]),
                                                Histogram::uniform(init.nodes()),
                                                Histogram::uniform(layer_inputs[i].nodes()), cfg.sinkhorn)
                                           .plan;
                              } else {
                                  pi = fixed[i];
                              }
                              const LayerParams aligned = transform(layer_inputs[i], transfer(pi), transfer(prev[i]));
                              if (i == 0) {
                                  sum = aligned;
                                  for (auto* group : {&sum.weights, &sum.biases, &sum.hidden}) {
                                      for (Matrix& m : *group) {
                                          m *= lambda[0];
                                      }
                                  }
                              } else {
                                  for (std::size_t p = 0; p < sum.weights.size(); ++p) {
                                      sum.weights[p] += lambda[i] * aligned.weights[p];
                                  }
                                  for (std::size_t p = 0; p < sum.biases.size(); ++p) {
                                      sum.biases[p] += lambda[i] * aligned.biases[p];
                                  }
                                  for (std::size_t p = 0; p < sum.hidden.size(); ++p) {
                                      sum.hidden[p] += lambda[i] * aligned.hidden[p];
                                  }
                              }
                              out.couplings.push_back(std::move(pi));
                          }
                          out.fused = std::move(sum);
                          return out;
                      });
}

Model vanilla_average(std::span<const Model> inputs, std::span<const double> lambda)
{
    require(!inputs.empty(), "vanilla_average: no inputs");
    require(lambda.size() == inputs.size(), "vanilla_average: one weight per input");
    static_cast<void>(Histogram(std::vector<double>(lambda.begin(), lambda.end())));
    std::vector<std::vector<std::size_t>> shapes;
    for_each_tensor(inputs.front(), [&](std::size_t, const std::string&, const std::vector<std::size_t>& shape,
                                        std::span<const double>) { shapes.push_back(shape); });
    std::vector<double> acc(parameter_count(inputs.front()), 0.0);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        std::size_t t = 0;
        for_each_tensor(inputs[i], [&](std::size_t, const std::string&, const std::vector<std::size_t>& shape,
                                       std::span<const double>) {
            require(t < shapes.size() && shapes[t] == shape,
                    "vanilla_average: input " + std::to_string(i) + " differs in shape from input 0");
            ++t;
        });
        require(t == shapes.size() && inputs[i].arch == inputs.front().arch,
                "vanilla_average: input " + std::to_string(i) + " differs in shape from input 0");
        const std::vector<double> flat = flatten(inputs[i]);
        for (std::size_t k = 0; k < acc.size(); ++k) {
            acc[k] += lambda[i] * flat[k];
        }
    }
    return unflatten(inputs.front(), acc);
}

Model align_model(const Model& model, std::span<const Matrix> couplings)
{
    const std::vector<UnitPlan> plan = plan_units(model);
    const std::vector<LayerParams> units = layer_params(model);
    require(couplings.size() == units.size(), "align: expected " + std::to_string(units.size()) +
                                                  " couplings, got " + std::to_string(couplings.size()));
    std::vector<LayerParams> aligned;
    Matrix t_prev = Matrix::identity(input_nodes(model));
    for (std::size_t u = 0; u < units.size(); ++u) {
        require(couplings[u].cols() == units[u].nodes(),
                "align: coupling " + std::to_string(u) + " has " + std::to_string(couplings[u].cols()) +
                    " columns for a layer of width " + std::to_string(units[u].nodes()));
        if (plan[u].spatial > 0) {
            t_prev = kron(t_prev, Matrix::identity(plan[u].spatial));
        }
        const Matrix t = transfer(couplings[u]);
        aligned.push_back(transform(units[u], t, t_prev));
        t_prev = t;
    }
    Model out = with_layer_params(model, aligned);
    const std::vector<Violation> report = validate(out);
    require(report.empty(), "align: aligned model is invalid:\n" + format_report(report));
    return out;
}

Model align_recurrent_model(const Model& model, std::span<const Matrix> couplings)
{
    require(model.arch == ArchTag::rnn || model.arch == ArchTag::lstm, "align_recurrent_model: not a recurrent model");
    return align_model(model, couplings);
}

namespace {

FusionConfig alignment_config(const FusionConfig& cfg)
{
    FusionConfig c = cfg;
    c.lambda = {1.0, 0.0};
    c.init = InitPolicy{InitPolicy::Kind::copy_model, 0, 0, 0.0};
    c.target_widths.clear();
    c.outer_max = 1;
    return c;
}

} // namespace

std::vector<Matrix> alignment_couplings(const Model& reference, const Model& model, const FusionConfig& cfg)
{
    const Model pair[] = {reference, model};
    return wb_fuse_model(pair, alignment_config(cfg)).couplings[1];
}

std::vector<Matrix> alignment_couplings(const Model& reference, const Model& model, const GwbConfig& cfg)
{
    GwbConfig c = cfg;
    c.base = alignment_config(cfg.base);
    const Model pair[] = {reference, model};
    return gwb_fuse_model(pair, c).couplings[1];
}

} // namespace wbfuse
