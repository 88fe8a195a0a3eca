#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "wbfuse/gromov.hpp"
#include "wbfuse/matrix.hpp"
#include "wbfuse/model.hpp"
#include "wbfuse/sinkhorn.hpp"

namespace wbfuse {

/// How the target weights are initialized before the first coupling solve.
struct InitPolicy {
    enum class Kind {
        /// copy_model of a seed-chosen input when target widths equal the
        /// input widths, random otherwise.
        automatic,
        copy_model,
        random,
    };
    Kind kind = Kind::automatic;
    std::size_t index = 0;   // copy_model
    std::uint64_t seed = 0;  // automatic and random
    double std = 0.01;       // random
};

enum class LastLayerPolicy {
    /// Output nodes correspond by label: the head coupling is fixed to I/k.
    identity,
    /// The head coupling is solved like any other layer.
    solve,
};

struct FusionConfig {
    SinkhornParams sinkhorn = SinkhornParams::for_epsilon(5e-3);
    std::size_t outer_max = 10;
    /// Stop when ||W_new - W_old||_F <= outer_tol * ||W_old||_F.
    double outer_tol = 1e-6;
    /// Barycenter weights over the inputs; empty means uniform.
    std::vector<double> lambda;
    /// Widths of every fused layer except the head; empty keeps the widths
    /// of the inputs.
    std::vector<std::size_t> target_widths;
    InitPolicy init;
    LastLayerPolicy last_layer = LastLayerPolicy::identity;
    /// Coupling solves of one layer run on up to this many threads.
    std::size_t threads = 1;

    void validate(std::size_t n_inputs) const;
};

struct GwbConfig {
    FusionConfig base;
    double alpha_h = 5.0;
    std::size_t inner_max = 10;
    /// Scale the hidden-structure term by alpha_h inside the coupling
    /// iteration (false: weight one there, alpha_h only in the objective).
    bool alpha_in_inner = true;
};

/// Parameters of one fused layer in node form. Every matrix has one row per
/// node of the layer.
///   weights: incoming slices, k x k_prev (dense: 1, conv: one per filter
///            tap, lstm: one per gate)
///   biases:  k x 1, one per weight group (lstm: one per gate)
///   hidden:  k x k recurrent slices (rnn: 1, lstm: one per gate)
struct LayerParams {
    std::vector<Matrix> weights;
    std::vector<Matrix> biases;
    std::vector<Matrix> hidden;

    std::size_t nodes() const { return weights.empty() ? 0 : weights.front().rows(); }
    friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// The objective B around one weight update of an outer iteration.
struct TraceStep {
    std::size_t outer = 0;
    double before_update = 0.0;
    double after_update = 0.0;
};

struct LayerTrace {
    std::size_t layer = 0;
    std::vector<TraceStep> steps;
    bool converged = false;
};

struct LayerFusion {
    LayerParams fused;
    /// One coupling per input, k x k_i.
    std::vector<Matrix> couplings;
    LayerTrace trace;
};

struct FusionResult {
    Model fused;
    /// couplings[i][u]: coupling between fused layer u and layer u of input i.
    std::vector<std::vector<Matrix>> couplings;
    std::vector<LayerTrace> trace;
};

/// n copies of I / input_dim.
std::vector<Matrix> first_layer_coupling(std::size_t input_dim, std::size_t n);

/// Alternates coupling solves against `init` with barycenter weight
/// updates. `prev` holds each input's coupling of the preceding layer (target
/// rows, input columns). When `fixed` is non-empty it supplies every input's
/// coupling, nothing is solved and a single weight update is made.
LayerFusion wb_fuse_layer(const LayerParams& init, std::span<const LayerParams> inputs, std::span<const Matrix> prev,
                          const FusionConfig& cfg, std::span<const Matrix> fixed = {});

/// Plain weight matrices without biases.
LayerFusion wb_fuse_layer(const Matrix& init, std::span<const Matrix> inputs, std::span<const Matrix> prev,
                          const FusionConfig& cfg);

/// As wb_fuse_layer with the hidden-to-hidden structure term alpha_h *
/// L(H, H_i) (x) Pi added to each coupling solve and H updated alongside W.
LayerFusion gwb_fuse_layer(const LayerParams& init, std::span<const LayerParams> inputs, std::span<const Matrix> prev,
                           const GwbConfig& cfg, std::span<const Matrix> fixed = {});

struct LstmFusion {
    LstmLayer fused;
    std::vector<Matrix> couplings;
    LayerTrace trace;
};

/// One shared coupling per input across the four gates; the coupling cost
/// sums the per-gate costs.
LstmFusion lstm_fuse_layer(const LstmLayer& init, std::span<const LstmLayer> inputs, std::span<const Matrix> prev,
                           const GwbConfig& cfg);

/// B(W, H; {Pi_i}) = sum_i lambda_i <L(W, W_i) (x) Pi*_prev,i + alpha L(H, H_i) (x) Pi_i, Pi_i>, with bias
/// columns included.
double fusion_objective(const LayerParams& target, std::span<const LayerParams> inputs, std::span<const Matrix> prev,
                        std::span<const Matrix> couplings, std::span<const double> lambda, double alpha);

/// Coupling cost of one input against the target (bias columns included).
Matrix wb_layer_cost(const LayerParams& target, const LayerParams& input, const Matrix& prev);
/// Squared row distance between the target and the input with its incoming
/// weights aligned by `prev`.
Matrix ot_baseline_layer_cost(const LayerParams& target, const LayerParams& input, const Matrix& prev);

/// Layers of a model in fusion order (residual blocks contribute one entry
/// per inner layer), and back. with_layer_params takes widths from `params`.
std::vector<LayerParams> layer_params(const Model& model);
LayerParams layer_params(const LstmLayer& layer);
Model with_layer_params(const Model& skeleton, std::span<const LayerParams> params);

/// Coupling for the output layer of a residual block: the coupling already
/// found for its skip source, shared by every layer of the skip-connected
/// set. Throws ContractViolation when the block's fused output width differs
/// from the skip source's.
const Matrix& resnet_coupling_policy(std::size_t block_output_width, const Matrix& skip_source_coupling);

FusionResult wb_fuse_model(std::span<const Model> inputs, const FusionConfig& cfg);
FusionResult gwb_fuse_model(std::span<const Model> inputs, const GwbConfig& cfg);

/// Single pass per layer: align incoming weights by the previous coupling,
/// couple rows by squared distance, average the aligned weights.
FusionResult ot_fusion_baseline(std::span<const Model> inputs, const FusionConfig& cfg);

/// Elementwise lambda-weighted average of identically shaped models.
Model vanilla_average(std::span<const Model> inputs, std::span<const double> lambda);

/// Rewrites `model` into the node order of the coupled target:
/// W <- T W T_prev^T with T = diag(Pi 1)^-1 Pi, biases by T, and recurrent
/// weights H <- T H T^T. couplings[u] couples fused layer u (rows) with
/// layer u of `model` (columns).
Model align_model(const Model& model, std::span<const Matrix> couplings);
Model align_recurrent_model(const Model& model, std::span<const Matrix> couplings);

/// Couplings that align `model` to `reference`: one coupling pass of WB
/// fusion with all barycenter weight on the reference.
std::vector<Matrix> alignment_couplings(const Model& reference, const Model& model, const FusionConfig& cfg);
std::vector<Matrix> alignment_couplings(const Model& reference, const Model& model, const GwbConfig& cfg);

} // namespace wbfuse
