#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "ctxgen/inverse.hpp"
#include "ctxgen/system.hpp"
#include "ctxgen/tensor.hpp"

namespace ctxgen {

struct DecodeConfig {
    int beam_size = 4;          // candidate sentences sampled per step
    int max_sentences = 4;
    real lambda = real(4.0);    // weight of the inverse term in the combined score
    real nucleus_p = real(0.9);
    real temperature = real(0.7);
    bool greedy = false;        // deterministic test mode: argmax instead of sampling
    int max_sentence_tokens = 16;
    std::uint64_t seed = 0;
    bool normalize_scores = false;  // length-normalize both terms (off by default)

    void validate() const {
        if (beam_size < 1) {
            throw std::invalid_argument("DecodeConfig: beam_size must be >= 1");
        }
        if (max_sentences < 1 || max_sentence_tokens < 1) {
            throw std::invalid_argument("DecodeConfig: sentence limits must be >= 1");
        }
        if (lambda < real(0)) {
            throw std::invalid_argument("DecodeConfig: lambda must be >= 0");
        }
        if (nucleus_p <= real(0) || nucleus_p > real(1)) {
            throw std::invalid_argument("DecodeConfig: nucleus_p must be in (0, 1]");
        }
        if (temperature <= real(0)) {
            throw std::invalid_argument("DecodeConfig: temperature must be positive");
        }
    }
};

struct BeamCandidate {
    std::vector<int> tokens;
    real forward_logprob = real(0);
    real inverse_logprob = real(0);
    real combined = real(0);
};

inline real combined_score(real forward_logprob, real inverse_logprob, real lambda) {
    return forward_logprob + lambda * inverse_logprob;
}

struct StepRecord {
    std::vector<BeamCandidate> candidates;
    int selected = -1;
};

struct GenerateResult {
    std::vector<int> tokens;          // concatenation of the selected sentences
    std::vector<StepRecord> steps;
};

/// Candidate override for test mode: given the step index and the decoder
/// prefix chosen so far, return the full candidate set (enumeration replaces
/// sampling). Tokens only; scores are filled in by the engine.
using CandidateSource =
    std::function<std::vector<std::vector<int>>(int step, const std::vector<int>& prefix)>;

namespace detail {

/// Smallest probability-sorted prefix with cumulative mass >= p, renormalized.
/// Ties sort by lower token id. Returns (token id, probability) pairs.
inline std::vector<std::pair<int, double>> nucleus_filter(std::span<const double> probs,
                                                          double p) {
    std::vector<int> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (probs[static_cast<std::size_t>(a)] != probs[static_cast<std::size_t>(b)]) {
            return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
        }
        return a < b;
    });
    std::vector<std::pair<int, double>> kept;
    double cum = 0.0;
    for (int id : order) {
        kept.emplace_back(id, probs[static_cast<std::size_t>(id)]);
        cum += probs[static_cast<std::size_t>(id)];
        if (cum >= p) {
            break;
        }
    }
    double total = 0.0;
    for (const auto& [id, pr] : kept) {
        total += pr;
    }
    for (auto& [id, pr] : kept) {
        pr /= total;
    }
    return kept;
}

inline int sample_from(const std::vector<std::pair<int, double>>& dist, Rng& rng) {
    const double r = rng.next_double();
    double cum = 0.0;
    for (const auto& [id, pr] : dist) {
        cum += pr;
        if (r < cum) {
            return id;
        }
    }
    return dist.back().first;
}

/// All sentences the sampler could emit: stop tokens only at the end, and a
/// final position that may be any token once the length cap is reached.
inline void enumerate_sentences(const std::vector<int>& content,
                                const std::vector<int>& stops, int max_len,
                                std::vector<int>& current,
                                std::vector<std::vector<int>>& out) {
    const int len = static_cast<int>(current.size());
    if (len == max_len) {
        return;
    }
    for (int s : stops) {
        current.push_back(s);
        out.push_back(current);
        current.pop_back();
    }
    for (int c : content) {
        current.push_back(c);
        if (static_cast<int>(current.size()) == max_len) {
            out.push_back(current);
        }
        enumerate_sentences(content, stops, max_len, current, out);
        current.pop_back();
    }
}

}  // namespace detail

/// Exhaustive candidate set over the given content tokens: every sequence of
/// up to max_len tokens that ends at a stop token or at the length cap.
inline std::vector<std::vector<int>> enumerate_candidates(const std::vector<int>& content,
                                                          const std::vector<int>& stops,
                                                          int max_len) {
    std::vector<std::vector<int>> out;
    std::vector<int> current;
    detail::enumerate_sentences(content, stops, max_len, current, out);
    return out;
}

/// Sentence-level generation engine shared by training-time evaluation and
/// the CLI. One instance per (system, input).
class SentenceDecoder {
public:
    SentenceDecoder(const System& system, std::span<const int> input_ids,
                    const DecodeConfig& cfg)
        : system_(system), cfg_(cfg), input_ids_(input_ids.begin(), input_ids.end()) {
        cfg.validate();
        if (input_ids.empty()) {
            throw std::invalid_argument("SentenceDecoder: empty input");
        }
        stop_tokens_ = system.vocab.sentence_delims;
        stop_tokens_.push_back(Vocab::kEos);
    }

    const std::vector<int>& stop_tokens() const { return stop_tokens_; }

    bool is_stop(int id) const {
        return std::find(stop_tokens_.begin(), stop_tokens_.end(), id) !=
               stop_tokens_.end();
    }

    /// Sum of token log-probabilities of `tokens` under the full model
    /// distribution, conditioned on the selected sentences so far.
    real score_forward(const Tensor& memory, const std::vector<int>& prefix,
                       const std::vector<int>& tokens) const {
        std::vector<int> dec_in = prefix;
        dec_in.insert(dec_in.end(), tokens.begin(), tokens.end());
        // One causal pass; position prefix.size()-1+i predicts tokens[i].
        const Tensor states = system_.generator->decode_states(
            memory, std::span<const int>(dec_in.data(), dec_in.size() - 1));
        const Tensor logits = system_.generator->output_logits(states);
        const int v = logits.cols();
        real total = real(0);
        const int base_row = static_cast<int>(prefix.size()) - 1;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            const std::size_t row =
                (static_cast<std::size_t>(base_row) + i) * static_cast<std::size_t>(v);
            const real lse =
                ctxgen::detail::logsumexp_row(logits.values().data() + row, v);
            total += logits.values()[row + static_cast<std::size_t>(tokens[i])] - lse;
        }
        return total;
    }

    /// One candidate sentence via nucleus sampling (or argmax in greedy mode).
    std::vector<int> sample_sentence(const Tensor& memory, const std::vector<int>& prefix,
                                     Rng& rng) const {
        std::vector<int> tokens;
        std::vector<int> dec_in = prefix;
        while (static_cast<int>(tokens.size()) < cfg_.max_sentence_tokens) {
            if (static_cast<int>(dec_in.size()) >= system_.model_cfg.max_positions) {
                break;
            }
            const Tensor states = system_.generator->decode_states(memory, dec_in);
            const Tensor logits = system_.generator->output_logits(states);
            const int v = logits.cols();
            const std::size_t last =
                (static_cast<std::size_t>(logits.rows()) - 1) * static_cast<std::size_t>(v);
            std::vector<double> probs(static_cast<std::size_t>(v), 0.0);
            int next = -1;
            if (cfg_.greedy) {
                double best = -1e300;
                for (int j = 0; j < v; ++j) {
                    if (structural_(j)) {
                        continue;
                    }
                    const double z = static_cast<double>(logits.values()[last + j]);
                    if (z > best) {
                        best = z;
                        next = j;
                    }
                }
            } else {
                double mx = -1e300;
                for (int j = 0; j < v; ++j) {
                    if (!structural_(j)) {
                        mx = std::max(mx, static_cast<double>(logits.values()[last + j]) /
                                              static_cast<double>(cfg_.temperature));
                    }
                }
                double sum = 0.0;
                for (int j = 0; j < v; ++j) {
                    if (structural_(j)) {
                        continue;
                    }
                    probs[static_cast<std::size_t>(j)] =
                        std::exp(static_cast<double>(logits.values()[last + j]) /
                                     static_cast<double>(cfg_.temperature) -
                                 mx);
                    sum += probs[static_cast<std::size_t>(j)];
                }
                for (auto& pr : probs) {
                    pr /= sum;
                }
                next = detail::sample_from(
                    detail::nucleus_filter(probs, static_cast<double>(cfg_.nucleus_p)),
                    rng);
            }
            tokens.push_back(next);
            dec_in.push_back(next);
            if (is_stop(next)) {
                break;
            }
        }
        return tokens;
    }

    real score_inverse(const std::vector<int>& sentence) const {
        return inverse_score(*system_.inverse_model, system_.inverse_prompts, input_ids_,
                             sentence, Vocab::kBos, Vocab::kEos);
    }

    /// The sentence-level loop: derive prompts, propose candidates, score
    /// each with forward + lambda * inverse, keep the argmax (ties to the
    /// lowest candidate index), stop on EOS or after max_sentences.
    GenerateResult generate(const CandidateSource& override_source = nullptr) const {
        GenerateResult result;
        std::vector<int> prefix = {Vocab::kBos};
        const Rng root(cfg_.seed);
        for (int step = 0; step < cfg_.max_sentences; ++step) {
            const Tensor source = system_.generator_source(input_ids_);
            const Tensor memory = system_.generator->encode(source);

            std::vector<std::vector<int>> proposals;
            if (override_source) {
                proposals = override_source(step, prefix);
            } else {
                proposals.reserve(static_cast<std::size_t>(cfg_.beam_size));
                for (int c = 0; c < cfg_.beam_size; ++c) {
                    Rng stream = root.derive(static_cast<std::uint64_t>(step),
                                             static_cast<std::uint64_t>(c));
                    proposals.push_back(sample_sentence(memory, prefix, stream));
                }
            }

            StepRecord record;
            for (const auto& tokens : proposals) {
                if (tokens.empty()) {
                    continue;
                }
                BeamCandidate cand;
                cand.tokens = tokens;
                cand.forward_logprob = score_forward(memory, prefix, tokens);
                cand.inverse_logprob = score_inverse(tokens);
                real fwd = cand.forward_logprob;
                real inv = cand.inverse_logprob;
                if (cfg_.normalize_scores) {
                    fwd /= static_cast<real>(tokens.size());
                    inv /= static_cast<real>(input_ids_.size() + 1);
                }
                cand.combined = combined_score(fwd, inv, cfg_.lambda);
                if (record.selected < 0 ||
                    cand.combined > record.candidates[static_cast<std::size_t>(
                                                          record.selected)]
                                        .combined) {
                    record.selected = static_cast<int>(record.candidates.size());
                }
                record.candidates.push_back(std::move(cand));
            }
            if (record.selected < 0) {
                break;  // every proposal was empty
            }
            const BeamCandidate& chosen =
                record.candidates[static_cast<std::size_t>(record.selected)];
            result.tokens.insert(result.tokens.end(), chosen.tokens.begin(),
                                 chosen.tokens.end());
            prefix.insert(prefix.end(), chosen.tokens.begin(), chosen.tokens.end());
            const bool has_eos = std::find(chosen.tokens.begin(), chosen.tokens.end(),
                                           Vocab::kEos) != chosen.tokens.end();
            result.steps.push_back(std::move(record));
            if (has_eos) {
                break;
            }
        }
        return result;
    }

private:
    bool structural_(int id) const {
        return id == Vocab::kPad || id == Vocab::kBos || id == Vocab::kMask;
    }

    const System& system_;
    DecodeConfig cfg_;
    std::vector<int> input_ids_;
    std::vector<int> stop_tokens_;
};

inline GenerateResult generate(const System& system, std::span<const int> input_ids,
                               const DecodeConfig& cfg,
                               const CandidateSource& override_source = nullptr) {
    return SentenceDecoder(system, input_ids, cfg).generate(override_source);
}

}  // namespace ctxgen
