#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "wbfuse/matrix.hpp"

namespace wbfuse {

struct DenseLayer {
    Matrix weight;  // out x in
    std::vector<double> bias;

    std::size_t out() const { return weight.rows(); }
    std::size_t in() const { return weight.cols(); }
    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Stride-1, zero-padded ("same") convolution.
struct ConvLayer {
    FilterBank filters;  // out_channels x in_channels x k x k
    std::vector<double> bias;

    std::size_t out() const { return filters.out_channels(); }
    std::size_t in() const { return filters.in_channels(); }
    friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

/// h_t = tanh(W x_t + H h_{t-1} + b)
struct RecurrentLayer {
    Matrix input_weight;   // hidden x in
    Matrix hidden_weight;  // hidden x hidden
    std::vector<double> bias;

    std::size_t hidden() const { return input_weight.rows(); }
    std::size_t in() const { return input_weight.cols(); }
    friend bool operator==(const RecurrentLayer&, const RecurrentLayer&) = default;
};

/// Gate order is part of the file format.
enum class Gate : std::size_t { input = 0, forget = 1, cell = 2, output = 3 };
inline constexpr std::array<std::string_view, 4> kGateNames = {"input", "forget", "cell", "output"};

struct LstmLayer {
    std::array<RecurrentLayer, 4> gates;

    const RecurrentLayer& gate(Gate g) const { return gates[static_cast<std::size_t>(g)]; }
    RecurrentLayer& gate(Gate g) { return gates[static_cast<std::size_t>(g)]; }
    std::size_t hidden() const { return gates[0].hidden(); }
    std::size_t in() const { return gates[0].in(); }
    friend bool operator==(const LstmLayer&, const LstmLayer&) = default;
};

/// Dense layers whose final pre-activation is summed with the output of
/// layer `skip_source` (an index into Model::layers, earlier than the block)
/// before the block's ReLU.
struct ResidualBlock {
    std::vector<DenseLayer> inner;
    std::size_t skip_source = 0;

    friend bool operator==(const ResidualBlock&, const ResidualBlock&) = default;
};

using Layer = std::variant<DenseLayer, ConvLayer, RecurrentLayer, LstmLayer, ResidualBlock>;

enum class ArchTag { mlp, cnn, resmlp, rnn, lstm };
enum class Activation { relu, tanh };

std::string_view to_string(ArchTag tag);
std::optional<ArchTag> parse_arch_tag(std::string_view s);
std::string_view layer_kind(const Layer& layer);

struct Model {
    ArchTag arch = ArchTag::mlp;
    /// Feature count per sample (per time step for recurrent models).
    std::size_t input_dim = 0;
    /// cnn only: {channels, height, width}; product equals input_dim.
    std::vector<std::size_t> input_shape;
    std::vector<Layer> layers;

    Activation activation() const;
    std::size_t num_outputs() const;

    friend bool operator==(const Model&, const Model&) = default;
};

/// Output width of a layer as seen by the next layer. Conv outputs are
/// reported per channel; spatial extent comes from Model::input_shape.
std::size_t output_width(const Layer& layer);

struct Violation {
    std::string where;
    std::string message;
};

/// Every broken invariant of the model; empty iff the model is valid.
std::vector<Violation> validate(const Model& model);
std::string format_report(std::span<const Violation> report);

/// Visits every parameter tensor in a fixed order (the on-disk order):
/// dense: weight, bias; conv: weight, bias; rnn: input_weight, hidden_weight,
/// bias; lstm: the same triple per gate; residual: each inner dense layer.
/// `name` is a stable tensor name, `shape` its logical shape.
using TensorVisitor =
    std::function<void(std::size_t layer, const std::string& name, const std::vector<std::size_t>& shape,
                       std::span<double> values)>;
using ConstTensorVisitor =
    std::function<void(std::size_t layer, const std::string& name, const std::vector<std::size_t>& shape,
                       std::span<const double> values)>;
void for_each_tensor(Model& model, const TensorVisitor& visit);
void for_each_tensor(const Model& model, const ConstTensorVisitor& visit);

std::size_t parameter_count(const Model& model);
/// Concatenation of all tensors in visiting order.
std::vector<double> flatten(const Model& model);
/// A copy of `shape_template` whose tensors are read from `values`.
Model unflatten(const Model& shape_template, std::span<const double> values);
/// Same architecture, every tensor zero.
Model zeros_like(const Model& model);

/// Shape of a freshly built model.
///   mlp:    dense layers of widths `hidden`, then a dense head
///   cnn:    conv layers with `hidden` channels (k x k, same padding), then a dense head
///   resmlp: dense layers of widths `hidden`, then `residual_blocks` blocks of
///           `block_depth` dense layers at width hidden.back(), each skipping
///           from the layer before it, then a dense head
///   rnn/lstm: recurrent layers of sizes `hidden`, then a dense head on h_T
struct ModelSpec {
    ArchTag arch = ArchTag::mlp;
    std::size_t input_dim = 0;
    std::vector<std::size_t> input_shape;
    std::vector<std::size_t> hidden;
    std::size_t num_outputs = 0;
    std::size_t kernel = 3;
    std::size_t residual_blocks = 1;
    std::size_t block_depth = 2;
};

/// Weight initialization: Gaussian with the given std, or fan-in scaled
/// (He for ReLU models, 1/sqrt(fan_in) for tanh models) when std is zero.
/// Biases start at zero except LSTM forget gates, which start at one under
/// fan-in scaling.
struct InitParams {
    double std = 0.0;
};

Model build_model(const ModelSpec& spec, std::mt19937_64& rng, InitParams init = {});

} // namespace wbfuse
