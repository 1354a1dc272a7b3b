#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxgen/data.hpp"
#include "ctxgen/inverse.hpp"
#include "ctxgen/model.hpp"
#include "ctxgen/prompt.hpp"
#include "ctxgen/rng.hpp"

namespace ctxgen {

/// The full generation system: the prompt generator plus forward generator
/// (parameter set theta_forward) and an independently parameterized inverse
/// model with its static prompts (theta_inverse). The two sets are disjoint;
/// each is driven only by its own objective.
struct System {
    ModelConfig model_cfg;
    PromptConfig prompt_cfg;
    Vocab vocab;
    std::unique_ptr<MaskedEncoder> prompt_generator;
    std::unique_ptr<Seq2SeqModel> generator;
    std::unique_ptr<Seq2SeqModel> inverse_model;
    InversePrompts inverse_prompts;

    static System init(const ModelConfig& model_cfg, const PromptConfig& prompt_cfg,
                       Vocab vocab, Rng& rng) {
        ModelConfig cfg = model_cfg;
        cfg.vocab_size = vocab.size();
        cfg.validate();
        prompt_cfg.validate(cfg);
        System s;
        s.model_cfg = cfg;
        s.prompt_cfg = prompt_cfg;
        s.vocab = std::move(vocab);
        s.prompt_generator = std::make_unique<MaskedEncoder>(cfg, rng);
        s.generator = std::make_unique<Seq2SeqModel>(cfg, rng);
        s.inverse_model = std::make_unique<Seq2SeqModel>(cfg, rng);
        const int first_content = static_cast<int>(Vocab::special_tokens().size());
        s.inverse_prompts = InversePrompts::init(s.inverse_model->embedding_matrix(),
                                                 prompt_cfg.k, first_content, rng);
        return s;
    }

    /// Contextualized prompts for one input, mapped into the generator's
    /// embedding space.
    ContextualizedPrompts prompts_for(std::span<const int> input_ids) const {
        return contextualized_prompts(*prompt_generator, generator->embedding_matrix(),
                                      input_ids, prompt_cfg.k, Vocab::kMask);
    }

    /// Generator source sequence for one input: prompts around the embedded
    /// input tokens.
    Tensor generator_source(std::span<const int> input_ids) const {
        return assemble_generator_input(prompts_for(input_ids), input_ids,
                                        generator->embedding_matrix());
    }

    /// theta_forward: prompt generator and generator parameters.
    std::vector<NamedParam> forward_parameters() const {
        std::vector<NamedParam> out;
        for (NamedParam& p : prompt_generator->named_parameters()) {
            out.push_back({"pg." + p.name, p.tensor, p.is_bias});
        }
        for (NamedParam& p : generator->named_parameters()) {
            out.push_back({"gen." + p.name, p.tensor, p.is_bias});
        }
        return out;
    }

    /// theta_inverse: inverse model and inverse prompt parameters.
    std::vector<NamedParam> inverse_parameters() const {
        std::vector<NamedParam> out;
        for (NamedParam& p : inverse_model->named_parameters()) {
            out.push_back({"inv." + p.name, p.tensor, p.is_bias});
        }
        for (NamedParam& p : inverse_prompts.named_parameters()) {
            out.push_back({"iprompt." + p.name, p.tensor, false});
        }
        return out;
    }

    std::vector<NamedParam> all_parameters() const {
        std::vector<NamedParam> out = forward_parameters();
        for (NamedParam& p : inverse_parameters()) {
            out.push_back(std::move(p));
        }
        return out;
    }

private:
    System() = default;
};

}  // namespace ctxgen
