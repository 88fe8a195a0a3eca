#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "wbfuse/matrix.hpp"
#include "wbfuse/model.hpp"

namespace wbfuse {

enum class MfirErrorCode {
    io,              // file missing or unreadable/unwritable
    parse,           // manifest is not the expected JSON
    version,         // unsupported format version
    missing_blob,    // blob file not found
    out_of_range,    // tensor extends past the end of the blob
    shape_mismatch,  // tensor shape disagrees with its layer
    non_finite,      // NaN or infinity in a tensor
    invalid_model,   // tensors load but the model breaks an invariant
};

std::string_view to_string(MfirErrorCode code);

class MfirError : public std::runtime_error {
public:
    MfirError(MfirErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    MfirErrorCode code() const { return code_; }

private:
    MfirErrorCode code_;
};

/// MFIR v1: a JSON manifest plus one blob of little-endian float32 tensors.
///
///   {"version": 1, "arch_tag": "mlp", "input_dim": 2, "blob": "m.mfir.bin",
///    "layers": [{"kind": "dense", "shape": [4, 2],
///                "tensors": [{"name": "weight", "offset": 0, "shape": [4, 2]},
///                            {"name": "bias", "offset": 32, "shape": [4]}]}]}
///
/// `blob` is relative to the manifest's directory and defaults to the
/// manifest file name with ".bin" appended. cnn models add "input_shape".
/// Residual layers use kind "residual" with "skip_source" and "inner" (the
/// inner layer count); their tensors are named inner<k>.weight / inner<k>.bias.
/// LSTM tensors are <gate>.<tensor> with gates in input, forget, cell, output
/// order.
Model load_model(const std::filesystem::path& manifest);

/// Writes the manifest and its blob next to it. Values are rounded to float32.
void save_model(const Model& model, const std::filesystem::path& manifest);

std::filesystem::path default_blob_path(const std::filesystem::path& manifest);

/// Couplings of one fusion run: couplings[model][layer].
using CouplingSet = std::vector<std::vector<Matrix>>;

/// Sidecar in the same manifest + float32 blob layout:
///   {"version": 1, "kind": "couplings", "blob": ..., "models": [[{"offset", "shape"}, ...], ...]}
void save_couplings(const CouplingSet& couplings, const std::filesystem::path& manifest);
CouplingSet load_couplings(const std::filesystem::path& manifest);

} // namespace wbfuse
