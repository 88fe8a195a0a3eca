#pragma once

// Hidden-node permutations of whole models.

#include <random>
#include <vector>

#include "oracles.hpp"
#include "wbfuse/fusion.hpp"

namespace wbfuse::testing {

struct PermutedCopy {
    Model model;
    /// perms[u][j]: node of the original that lands at node j of the copy,
    /// one entry per fused layer in fusion order.
    std::vector<std::vector<std::size_t>> perms;
};

/// Nodes of each fused layer in fusion order, with the residual constraint
/// applied: a block's output layer reuses its skip source's permutation and
/// the head keeps label order.
inline PermutedCopy permuted_copy(const Model& m, std::mt19937_64& rng)
{
    std::vector<std::vector<std::size_t>> perms;
    std::vector<std::size_t> layer_last(m.layers.size());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const Layer& layer = m.layers[l];
        const bool head = l + 1 == m.layers.size();
        if (const auto* block = std::get_if<ResidualBlock>(&layer)) {
            for (std::size_t k = 0; k < block->inner.size(); ++k) {
                if (k + 1 == block->inner.size()) {
                    perms.push_back(perms[layer_last[block->skip_source]]);
                } else {
                    perms.push_back(oracle::random_permutation(block->inner[k].out(), rng));
                }
            }
        } else {
            const std::size_t width = output_width(layer);
            std::vector<std::size_t> p(width);
            for (std::size_t j = 0; j < width; ++j) {
                p[j] = j;
            }
            perms.push_back(head ? p : oracle::random_permutation(width, rng));
        }
        layer_last[l] = perms.size() - 1;
    }
    std::vector<Matrix> couplings;
    for (const auto& p : perms) {
        couplings.push_back(oracle::permutation_matrix(p) * (1.0 / static_cast<double>(p.size())));
    }
    return {align_model(m, couplings), perms};
}

} // namespace wbfuse::testing
