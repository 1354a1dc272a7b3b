#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "ctxgen/model.hpp"
#include "ctxgen/tensor.hpp"

namespace ctxgen {

/// Static trainable prompts wrapped around each output sentence when scoring
/// the reconstruction of the input. Unlike contextualized prompts these do
/// not depend on the input: the same tensors are used for every example.
struct InversePrompts {
    Tensor prefix;  // (k x d_model)
    Tensor suffix;  // (k x d_model)

    /// Initialized from the embedding rows of the 2k most frequent
    /// non-special tokens, plus small noise.
    static InversePrompts init(const Tensor& embed_matrix, int k, int first_content_id,
                               Rng& rng) {
        if (k < 1) {
            throw std::invalid_argument("InversePrompts: k must be >= 1");
        }
        const int v = embed_matrix.rows();
        const int d = embed_matrix.cols();
        InversePrompts p;
        p.prefix = Tensor::zeros({k, d}, true);
        p.suffix = Tensor::zeros({k, d}, true);
        for (int i = 0; i < 2 * k; ++i) {
            const int row = first_content_id + (i % (v - first_content_id));
            Tensor& side = i < k ? p.prefix : p.suffix;
            const int dst = i < k ? i : i - k;
            for (int j = 0; j < d; ++j) {
                side.values()[static_cast<std::size_t>(dst) * d + j] =
                    embed_matrix.values()[static_cast<std::size_t>(row) * d + j] +
                    rng.normal(real(0), real(0.01));
            }
        }
        return p;
    }

    std::vector<NamedParam> named_parameters() const {
        return {{"prefix", prefix, false}, {"suffix", suffix, false}};
    }
};

namespace detail {

inline SeqForward inverse_forward(const Seq2SeqModel& inverse_model,
                                  const InversePrompts& prompts,
                                  std::span<const int> input_ids,
                                  std::span<const int> sentence, int bos, int eos) {
    if (sentence.empty()) {
        throw std::invalid_argument("inverse scoring: empty sentence");
    }
    const Tensor source = concat_rows(
        {prompts.prefix, inverse_model.embed(sentence), prompts.suffix});
    std::vector<int> target;
    target.reserve(input_ids.size() + 2);
    target.push_back(bos);
    target.insert(target.end(), input_ids.begin(), input_ids.end());
    target.push_back(eos);
    return inverse_model.forward(source, target, bos, eos);
}

}  // namespace detail

/// Total log-probability of reconstructing the input from one sentence
/// wrapped in the inverse prompts. Unnormalized by length; always <= 0.
inline real inverse_score(const Seq2SeqModel& inverse_model, const InversePrompts& prompts,
                          std::span<const int> input_ids, std::span<const int> sentence,
                          int bos, int eos) {
    const SeqForward fw =
        detail::inverse_forward(inverse_model, prompts, input_ids, sentence, bos, eos);
    // -(mean * n): the same product the loss tensor path computes, so
    // inverse_loss == -sum(inverse_score) holds exactly.
    return -(fw.loss.item() * static_cast<real>(fw.n_positions));
}

/// Reconstruction loss summed over sentences: each sentence independently
/// tries to predict the input. Differentiable; drives the inverse-side
/// parameters only.
inline Tensor inverse_loss(const Seq2SeqModel& inverse_model, const InversePrompts& prompts,
                           std::span<const int> input_ids,
                           const std::vector<std::vector<int>>& sentences, int bos,
                           int eos) {
    if (sentences.empty()) {
        throw std::invalid_argument("inverse_loss: empty sentence list");
    }
    Tensor total;
    bool first = true;
    for (const auto& sentence : sentences) {
        const SeqForward fw = detail::inverse_forward(inverse_model, prompts, input_ids,
                                                      sentence, bos, eos);
        const Tensor term = scale(fw.loss, static_cast<real>(fw.n_positions));
        total = first ? term : add(total, term);
        first = false;
    }
    return total;
}

}  // namespace ctxgen
