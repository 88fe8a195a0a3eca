#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wbfuse/model.hpp"

namespace wbfuse {

enum class Split { train, val, test };

std::string_view to_string(Split s);

/// Labelled samples. Sequence samples are stored flat, time-step major:
/// step t occupies [t * input_dim, (t + 1) * input_dim).
struct Dataset {
    std::vector<std::vector<double>> inputs;
    std::vector<std::size_t> labels;
    /// Optional per-step labels of sequence samples (empty, or one vector
    /// per sample with one label per step).
    std::vector<std::vector<std::size_t>> step_labels;
    std::size_t num_classes = 2;
    Split split = Split::train;

    std::size_t size() const { return inputs.size(); }
    void validate() const;
};

/// Logits for one sample.
std::vector<double> forward(const Model& model, std::span<const double> input);

/// Index of the largest logit; ties go to the lowest index.
std::size_t argmax(std::span<const double> logits);

double accuracy(const Model& model, const Dataset& data);
double error_rate(const Model& model, const Dataset& data);

/// Mean softmax cross-entropy of one sample and its gradient with respect to
/// every parameter (a model of the same shape). With step labels every step
/// of a sequence is read out through the dense layers and the loss is the
/// mean over steps.
struct LossGradient {
    double loss = 0.0;
    Model gradient;
};
LossGradient loss_gradient(const Model& model, std::span<const double> input, std::size_t label,
                           std::span<const std::size_t> step_labels = {});

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::uint64_t seed = 0;
    std::size_t epochs = 50;
    double lr = 0.05;
    std::size_t batch = 16;
    /// Rescale each minibatch gradient to at most this norm; 0 disables.
    double clip = 0.0;
    /// Initial weight std; 0 means fan-in scaling.
    double init_std = 0.0;
};

/// Minibatch SGD on softmax cross-entropy from a seeded initialization.
/// Throws TrainingError when the loss becomes non-finite.
Model train(const ModelSpec& spec, const Dataset& data, const TrainConfig& cfg);
/// Same, starting from `init`.
Model train_from(Model init, const Dataset& data, const TrainConfig& cfg);

/// Two isotropic Gaussian blobs centred at (-d/2, 0) and (d/2, 0), unit
/// variance, balanced labels.
Dataset two_gaussians(std::size_t n, std::uint64_t seed, double separation = 4.0, Split split = Split::train);
/// Interleaved half circles with Gaussian noise, balanced labels.
Dataset two_moons(std::size_t n, std::uint64_t seed, double noise = 0.1, Split split = Split::train);
/// Sequences of +-1 values; the label is the parity of the number of -1
/// entries, the step labels the parity of each prefix.
Dataset sequence_parity(std::size_t n, std::size_t length, std::uint64_t seed, Split split = Split::train);

/// CSV with header label,f0..f(d-1)[,s0..s(T-1)].
void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path, Split split = Split::test);

} // namespace wbfuse
