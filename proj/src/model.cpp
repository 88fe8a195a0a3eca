#include "wbfuse/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace wbfuse {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

bool finite(std::span<const double> xs)
{
    return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

std::string layer_name(std::size_t index)
{
    return "layer " + std::to_string(index);
}

struct Validator {
    const Model& model;
    std::vector<Violation> report;

    void add(std::string where, std::string message) { report.push_back({std::move(where), std::move(message)}); }

    void check_dense(const DenseLayer& d, const std::string& where)
    {
        if (d.out() == 0 || d.in() == 0) {
            add(where, "dense weight must be at least 1x1");
        }
        if (d.bias.size() != d.out()) {
            add(where, "bias length " + std::to_string(d.bias.size()) + " does not match " +
                           std::to_string(d.out()) + " outputs");
        }
        if (!finite(d.weight.data()) || !finite(d.bias)) {
            add(where, "non-finite values");
        }
    }

    void check_recurrent(const RecurrentLayer& r, const std::string& where)
    {
        if (r.hidden() == 0 || r.in() == 0) {
            add(where, "input weight must be at least 1x1");
        }
        if (r.hidden_weight.rows() != r.hidden_weight.cols()) {
            add(where, "hidden weight is not square");
        } else if (r.hidden_weight.rows() != r.hidden()) {
            add(where, "hidden weight size " + std::to_string(r.hidden_weight.rows()) +
                           " does not match hidden size " + std::to_string(r.hidden()));
        }
        if (r.bias.size() != r.hidden()) {
            add(where, "bias length does not match hidden size");
        }
        if (!finite(r.input_weight.data()) || !finite(r.hidden_weight.data()) || !finite(r.bias)) {
            add(where, "non-finite values");
        }
    }

    // Returns the input width this layer expects.
    std::size_t check_layer(std::size_t index)
    {
        const std::string where = layer_name(index);
        return std::visit(
            Overloaded{
                [&](const DenseLayer& d) {
                    check_dense(d, where);
                    return d.in();
                },
                [&](const ConvLayer& c) {
                    if (c.filters.kernel() == 0 || c.filters.kernel() % 2 == 0) {
                        add(where, "conv kernel must be odd and positive");
                    }
                    if (c.out() == 0 || c.in() == 0) {
                        add(where, "conv needs at least one input and output channel");
                    }
                    if (c.bias.size() != c.out()) {
                        add(where, "bias length does not match output channels");
                    }
                    if (!finite(c.filters.data()) || !finite(c.bias)) {
                        add(where, "non-finite values");
                    }
                    return c.in();
                },
                [&](const RecurrentLayer& r) {
                    check_recurrent(r, where);
                    return r.in();
                },
                [&](const LstmLayer& l) {
                    for (std::size_t g = 0; g < 4; ++g) {
                        check_recurrent(l.gates[g], where + " gate " + std::to_string(g));
                        const RecurrentLayer& a = l.gates[0];
                        const RecurrentLayer& b = l.gates[g];
                        if (g > 0 && (a.input_weight.rows() != b.input_weight.rows() ||
                                      a.input_weight.cols() != b.input_weight.cols() ||
                                      a.hidden_weight.rows() != b.hidden_weight.rows())) {
                            add(where + " gate " + std::to_string(g) + " (" + std::string(kGateNames[g]) + ")",
                                "gate dimensions differ from gate 0 (input)");
                        }
                    }
                    return l.in();
                },
                [&](const ResidualBlock& r) {
                    if (r.inner.empty()) {
                        add(where, "residual block has no inner layers");
                        return std::size_t{0};
                    }
                    for (std::size_t k = 0; k < r.inner.size(); ++k) {
                        check_dense(r.inner[k], where + " inner " + std::to_string(k));
                        if (k > 0 && r.inner[k].in() != r.inner[k - 1].out()) {
                            add(where + " inner " + std::to_string(k),
                                "input width " + std::to_string(r.inner[k].in()) + " does not match inner " +
                                    std::to_string(k - 1) + " output width " + std::to_string(r.inner[k - 1].out()));
                        }
                    }
                    if (r.skip_source >= index) {
                        add(where, "skip source " + std::to_string(r.skip_source) + " is not an earlier layer");
                    } else {
                        const std::size_t skip_width = output_width(model.layers[r.skip_source]);
                        if (skip_width != r.inner.back().out()) {
                            add(where, "skip source " + layer_name(r.skip_source) + " width " +
                                           std::to_string(skip_width) + " does not match block output width " +
                                           std::to_string(r.inner.back().out()));
                        }
                    }
                    return r.inner.front().in();
                },
            },
            model.layers[index]);
    }

    bool kind_allowed(const Layer& layer) const
    {
        switch (model.arch) {
        case ArchTag::mlp:
            return std::holds_alternative<DenseLayer>(layer);
        case ArchTag::resmlp:
            return std::holds_alternative<DenseLayer>(layer) || std::holds_alternative<ResidualBlock>(layer);
        case ArchTag::cnn:
            return std::holds_alternative<DenseLayer>(layer) || std::holds_alternative<ConvLayer>(layer);
        case ArchTag::rnn:
            return std::holds_alternative<DenseLayer>(layer) || std::holds_alternative<RecurrentLayer>(layer);
        case ArchTag::lstm:
            return std::holds_alternative<DenseLayer>(layer) || std::holds_alternative<LstmLayer>(layer);
        }
        return false;
    }

    void run()
    {
        if (model.input_dim == 0) {
            add("model", "input_dim must be positive");
        }
        if (model.layers.empty()) {
            add("model", "model has no layers");
            return;
        }
        std::size_t spatial = 1;
        if (model.arch == ArchTag::cnn) {
            if (model.input_shape.size() != 3) {
                add("model", "cnn models need input_shape {channels, height, width}");
            } else {
                spatial = model.input_shape[1] * model.input_shape[2];
                if (model.input_shape[0] * spatial != model.input_dim) {
                    add("model", "input_shape does not multiply out to input_dim");
                }
            }
        }

        bool seen_head = false;
        std::size_t width = model.arch == ArchTag::cnn && model.input_shape.size() == 3 ? model.input_shape[0]
                                                                                          : model.input_dim;
        bool prev_conv = model.arch == ArchTag::cnn;
        for (std::size_t i = 0; i < model.layers.size(); ++i) {
            const Layer& layer = model.layers[i];
            if (!kind_allowed(layer)) {
                add(layer_name(i), std::string(layer_kind(layer)) + " layer not allowed in a " +
                                       std::string(to_string(model.arch)) + " model");
            }
            const bool is_dense = std::holds_alternative<DenseLayer>(layer);
            if (seen_head && !is_dense && model.arch != ArchTag::resmlp && model.arch != ArchTag::mlp) {
                add(layer_name(i), "feature layers must precede the dense head");
            }
            seen_head = seen_head || is_dense;

            const std::size_t expected_in = check_layer(i);
            std::size_t available = width;
            if (is_dense && prev_conv) {
                available = width * spatial;
            }
            if (expected_in != available) {
                const std::string from = i == 0 ? std::string("model input") : layer_name(i - 1);
                add(from + " -> " + layer_name(i), from + " provides width " + std::to_string(available) + " but " +
                                                       layer_name(i) + " expects " + std::to_string(expected_in));
            }
            width = output_width(layer);
            prev_conv = std::holds_alternative<ConvLayer>(layer);
        }
        const bool has_feature_layer = std::any_of(model.layers.begin(), model.layers.end(), [](const Layer& l) {
            return !std::holds_alternative<DenseLayer>(l);
        });
        if (model.arch != ArchTag::mlp && !has_feature_layer) {
            add("model", "a " + std::string(to_string(model.arch)) + " model needs at least one " +
                             std::string(to_string(model.arch) == "resmlp" ? "residual" : to_string(model.arch)) +
                             " layer");
        }
        if (!std::holds_alternative<DenseLayer>(model.layers.back())) {
            add(layer_name(model.layers.size() - 1), "the last layer must be a dense head");
        }
    }
};

} // namespace

std::string_view to_string(ArchTag tag)
{
    switch (tag) {
    case ArchTag::mlp:
        return "mlp";
    case ArchTag::cnn:
        return "cnn";
    case ArchTag::resmlp:
        return "resmlp";
    case ArchTag::rnn:
        return "rnn";
    case ArchTag::lstm:
        return "lstm";
    }
    return "?";
}

std::optional<ArchTag> parse_arch_tag(std::string_view s)
{
    for (ArchTag t : {ArchTag::mlp, ArchTag::cnn, ArchTag::resmlp, ArchTag::rnn, ArchTag::lstm}) {
        if (to_string(t) == s) {
            return t;
        }
    }
    return std::nullopt;
}

std::string_view layer_kind(const Layer& layer)
{
    return std::visit(Overloaded{
                          [](const DenseLayer&) { return std::string_view("dense"); },
                          [](const ConvLayer&) { return std::string_view("conv"); },
                          [](const RecurrentLayer&) { return std::string_view("rnn"); },
                          [](const LstmLayer&) { return std::string_view("lstm"); },
                          [](const ResidualBlock&) { return std::string_view("residual"); },
                      },
                      layer);
}

Activation Model::activation() const
{
    return (arch == ArchTag::rnn || arch == ArchTag::lstm) ? Activation::tanh : Activation::relu;
}

std::size_t Model::num_outputs() const
{
    return layers.empty() ? 0 : output_width(layers.back());
}

std::size_t output_width(const Layer& layer)
{
    return std::visit(Overloaded{
                          [](const DenseLayer& d) { return d.out(); },
                          [](const ConvLayer& c) { return c.out(); },
                          [](const RecurrentLayer& r) { return r.hidden(); },
                          [](const LstmLayer& l) { return l.hidden(); },
                          [](const ResidualBlock& r) { return r.inner.empty() ? std::size_t{0} : r.inner.back().out(); },
                      },
                      layer);
}

std::vector<Violation> validate(const Model& model)
{
    Validator v{model, {}};
    v.run();
    return std::move(v.report);
}

std::string format_report(std::span<const Violation> report)
{
    std::ostringstream out;
    for (const Violation& v : report) {
        out << v.where << ": " << v.message << '\n';
    }
    return out.str();
}

namespace {

template <class ModelT, class Visitor>
void visit_tensors(ModelT& model, const Visitor& visit)
{
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        auto dense = [&](auto& d, const std::string& prefix) {
            visit(li, prefix + "weight", std::vector<std::size_t>{d.weight.rows(), d.weight.cols()}, d.weight.data());
            visit(li, prefix + "bias", std::vector<std::size_t>{d.bias.size()}, std::span(d.bias));
        };
        auto recurrent = [&](auto& r, const std::string& prefix) {
            visit(li, prefix + "input_weight", std::vector<std::size_t>{r.input_weight.rows(), r.input_weight.cols()},
                  r.input_weight.data());
            visit(li, prefix + "hidden_weight",
                  std::vector<std::size_t>{r.hidden_weight.rows(), r.hidden_weight.cols()}, r.hidden_weight.data());
            visit(li, prefix + "bias", std::vector<std::size_t>{r.bias.size()}, std::span(r.bias));
        };
        std::visit(Overloaded{
                       [&](auto& layer) {
                           using T = std::decay_t<decltype(layer)>;
                           if constexpr (std::is_same_v<T, DenseLayer>) {
                               dense(layer, "");
                           } else if constexpr (std::is_same_v<T, ConvLayer>) {
                               const FilterBank& f = layer.filters;
                               visit(li, "weight",
                                     std::vector<std::size_t>{f.out_channels(), f.in_channels(), f.kernel(), f.kernel()},
                                     layer.filters.data());
                               visit(li, "bias", std::vector<std::size_t>{layer.bias.size()}, std::span(layer.bias));
                           } else if constexpr (std::is_same_v<T, RecurrentLayer>) {
                               recurrent(layer, "");
                           } else if constexpr (std::is_same_v<T, LstmLayer>) {
                               for (std::size_t g = 0; g < 4; ++g) {
                                   recurrent(layer.gates[g], std::string(kGateNames[g]) + ".");
                               }
                           } else {
                               for (std::size_t k = 0; k < layer.inner.size(); ++k) {
                                   dense(layer.inner[k], "inner" + std::to_string(k) + ".");
                               }
                           }
                       },
                   },
                   model.layers[li]);
    }
}

} // namespace

void for_each_tensor(Model& model, const TensorVisitor& visit)
{
    visit_tensors(model, visit);
}

void for_each_tensor(const Model& model, const ConstTensorVisitor& visit)
{
    visit_tensors(model, visit);
}

std::size_t parameter_count(const Model& model)
{
    std::size_t n = 0;
    for_each_tensor(model, [&](std::size_t, const std::string&, const std::vector<std::size_t>&,
                               std::span<const double> v) { n += v.size(); });
    return n;
}

std::vector<double> flatten(const Model& model)
{
    std::vector<double> out;
    out.reserve(parameter_count(model));
    for_each_tensor(model, [&](std::size_t, const std::string&, const std::vector<std::size_t>&,
                               std::span<const double> v) { out.insert(out.end(), v.begin(), v.end()); });
    return out;
}

Model unflatten(const Model& shape_template, std::span<const double> values)
{
    require(values.size() == parameter_count(shape_template),
            "unflatten: expected " + std::to_string(parameter_count(shape_template)) + " values, got " +
                std::to_string(values.size()));
    Model out = shape_template;
    std::size_t offset = 0;
    for_each_tensor(out, [&](std::size_t, const std::string&, const std::vector<std::size_t>&, std::span<double> v) {
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), v.size(), v.begin());
        offset += v.size();
    });
    return out;
}

Model zeros_like(const Model& model)
{
    Model out = model;
    for_each_tensor(out, [](std::size_t, const std::string&, const std::vector<std::size_t>&, std::span<double> v) {
        std::fill(v.begin(), v.end(), 0.0);
    });
    return out;
}

} // namespace wbfuse

namespace wbfuse {

namespace {

class Initializer {
public:
    Initializer(std::mt19937_64& rng, InitParams init, Activation act) : rng_(rng), init_(init), act_(act) {}

    void fill(std::span<double> values, std::size_t fan_in)
    {
        double std = init_.std;
        if (std == 0.0) {
            const double gain = act_ == Activation::relu ? 2.0 : 1.0;
            std = std::sqrt(gain / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
        }
        std::normal_distribution<double> dist(0.0, std);
        for (double& v : values) {
            v = dist(rng_);
        }
    }

    DenseLayer dense(std::size_t out, std::size_t in)
    {
        DenseLayer d{Matrix(out, in), std::vector<double>(out, 0.0)};
        fill(d.weight.data(), in);
        return d;
    }

    RecurrentLayer recurrent(std::size_t hidden, std::size_t in)
    {
        RecurrentLayer r{Matrix(hidden, in), Matrix(hidden, hidden), std::vector<double>(hidden, 0.0)};
        fill(r.input_weight.data(), in);
        fill(r.hidden_weight.data(), hidden);
        return r;
    }

    bool fan_in_scaled() const { return init_.std == 0.0; }

private:
    std::mt19937_64& rng_;
    InitParams init_;
    Activation act_;
};

} // namespace

Model build_model(const ModelSpec& spec, std::mt19937_64& rng, InitParams init)
{
    require(spec.input_dim >= 1, "build_model: input_dim must be positive");
    require(spec.num_outputs >= 1, "build_model: num_outputs must be positive");
    require(init.std >= 0.0, "build_model: init std must be nonnegative");
    Model m;
    m.arch = spec.arch;
    m.input_dim = spec.input_dim;
    m.input_shape = spec.input_shape;
    Initializer ini(rng, init, m.activation());

    std::size_t width = spec.input_dim;
    switch (spec.arch) {
    case ArchTag::mlp:
    case ArchTag::resmlp:
        for (std::size_t h : spec.hidden) {
            m.layers.emplace_back(ini.dense(h, width));
            width = h;
        }
        if (spec.arch == ArchTag::resmlp) {
            require(!spec.hidden.empty(), "build_model: resmlp needs at least one stem layer");
            for (std::size_t b = 0; b < spec.residual_blocks; ++b) {
                ResidualBlock block;
                block.skip_source = m.layers.size() - 1;
                for (std::size_t k = 0; k < spec.block_depth; ++k) {
                    block.inner.push_back(ini.dense(width, width));
                }
                m.layers.emplace_back(std::move(block));
            }
        }
        break;
    case ArchTag::cnn: {
        require(spec.input_shape.size() == 3, "build_model: cnn needs input_shape {c, h, w}");
        width = spec.input_shape[0];
        for (std::size_t c : spec.hidden) {
            ConvLayer conv{FilterBank(c, width, spec.kernel), std::vector<double>(c, 0.0)};
            ini.fill(conv.filters.data(), width * spec.kernel * spec.kernel);
            m.layers.emplace_back(std::move(conv));
            width = c;
        }
        width *= spec.input_shape[1] * spec.input_shape[2];
        break;
    }
    case ArchTag::rnn:
        for (std::size_t h : spec.hidden) {
            m.layers.emplace_back(ini.recurrent(h, width));
            width = h;
        }
        break;
    case ArchTag::lstm:
        for (std::size_t h : spec.hidden) {
            LstmLayer l;
            for (std::size_t g = 0; g < 4; ++g) {
                l.gates[g] = ini.recurrent(h, width);
            }
            if (ini.fan_in_scaled()) {
                std::fill(l.gate(Gate::forget).bias.begin(), l.gate(Gate::forget).bias.end(), 1.0);
            }
            m.layers.emplace_back(std::move(l));
            width = h;
        }
        break;
    }
    m.layers.emplace_back(ini.dense(spec.num_outputs, width));

    const std::vector<Violation> report = validate(m);
    require(report.empty(), "build_model: invalid spec:\n" + format_report(report));
    return m;
}

} // namespace wbfuse
