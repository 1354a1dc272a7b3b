#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "ctxgen/model.hpp"
#include "ctxgen/tensor.hpp"

namespace ctxgen {

struct PromptConfig {
    int k = 4;  // prompt vectors per side; 2k total

    void validate(const ModelConfig& model) const {
        if (k < 1) {
            throw std::invalid_argument("PromptConfig: k must be >= 1");
        }
        if (2 * k >= model.max_positions) {
            throw std::invalid_argument("PromptConfig: 2k leaves no room for input tokens");
        }
    }
};

/// Input-derived prompt vectors. The vocabulary distributions that produced
/// each vector are kept so the convex-combination property stays checkable
/// and nearest-word probing stays cheap.
struct ContextualizedPrompts {
    Tensor prefix;               // (k x d_model)
    Tensor suffix;               // (k x d_model)
    Tensor vocab_distributions;  // (2k x vocab_size), rows sum to 1
};

/// Surrounds the input with k mask tokens on each side.
inline std::vector<int> build_masked_input(std::span<const int> input_ids, int k,
                                           int mask_id) {
    if (input_ids.empty()) {
        throw std::invalid_argument("build_masked_input: empty input");
    }
    if (k < 1) {
        throw std::invalid_argument("build_masked_input: k must be >= 1");
    }
    std::vector<int> out;
    out.reserve(2 * static_cast<std::size_t>(k) + input_ids.size());
    out.insert(out.end(), static_cast<std::size_t>(k), mask_id);
    out.insert(out.end(), input_ids.begin(), input_ids.end());
    out.insert(out.end(), static_cast<std::size_t>(k), mask_id);
    return out;
}

/// Per-slot vocabulary distribution: softmax of head . state for each row.
inline Tensor vocab_distribution(const Tensor& states, const Tensor& head) {
    if (states.cols() != head.cols()) {
        throw std::invalid_argument("vocab_distribution: state width mismatch");
    }
    return softmax(matmul(states, transpose(head)), 1);
}

/// Distribution-weighted average of embedding rows: out[i] = dist[i] . E.
inline Tensor semantic_map(const Tensor& distributions, const Tensor& embed_matrix) {
    if (distributions.cols() != embed_matrix.rows()) {
        throw std::invalid_argument("semantic_map: vocabulary dimension mismatch");
    }
    return matmul(distributions, embed_matrix);
}

/// Full prompt construction: mask placement, bidirectional encoding of the
/// masked sequence, per-slot vocabulary distributions, and the mapping back
/// into the generator's embedding space. Only the 2k mask positions feed the
/// distributions; the states over the input span are discarded.
inline ContextualizedPrompts contextualized_prompts(const MaskedEncoder& generator,
                                                    const Tensor& embed_matrix,
                                                    std::span<const int> input_ids,
                                                    int k, int mask_id) {
    const std::vector<int> masked = build_masked_input(input_ids, k, mask_id);
    const Tensor hidden = generator.encode(masked);
    const int len = static_cast<int>(input_ids.size());
    const Tensor mask_states = concat_rows(
        {slice_rows(hidden, 0, k), slice_rows(hidden, k + len, 2 * k + len)});
    ContextualizedPrompts prompts;
    prompts.vocab_distributions =
        vocab_distribution(mask_states, generator.prediction_head());
    const Tensor mapped = semantic_map(prompts.vocab_distributions, embed_matrix);
    prompts.prefix = slice_rows(mapped, 0, k);
    prompts.suffix = slice_rows(mapped, k, 2 * k);
    return prompts;
}

/// Generator input sequence: [prefix | embedded input | suffix].
inline Tensor assemble_generator_input(const ContextualizedPrompts& prompts,
                                       std::span<const int> input_ids,
                                       const Tensor& embed_matrix) {
    if (prompts.prefix.cols() != embed_matrix.cols()) {
        throw std::invalid_argument("assemble_generator_input: width mismatch");
    }
    return concat_rows(
        {prompts.prefix, embedding(embed_matrix, input_ids), prompts.suffix});
}

}  // namespace ctxgen
