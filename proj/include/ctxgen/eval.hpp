#pragma once

#include <cmath>
#include <iomanip>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxgen/prompt.hpp"
#include "ctxgen/tensor.hpp"
#include "ctxgen/train.hpp"

namespace ctxgen {

struct MetricReport {
    double bleu1 = 0.0;
    double bleu2 = 0.0;
    double distinct1 = 0.0;
    double distinct4 = 0.0;

    std::string to_record() const {
        nlohmann::json j;
        j["bleu1"] = bleu1;
        j["bleu2"] = bleu2;
        j["distinct1"] = distinct1;
        j["distinct4"] = distinct4;
        return j.dump();
    }
};

using TokenSeq = std::vector<std::string>;

namespace detail {

inline std::map<TokenSeq, std::int64_t> ngram_counts(const TokenSeq& tokens, int n) {
    std::map<TokenSeq, std::int64_t> counts;
    if (static_cast<int>(tokens.size()) < n) {
        return counts;
    }
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
        ++counts[TokenSeq(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                          tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
    }
    return counts;
}

}  // namespace detail

/// Corpus-level BLEU-n in [0, 100]: geometric mean of modified i-gram
/// precisions for i <= n times the brevity penalty, with no smoothing (any
/// zero precision gives 0).
inline double bleu_n(const std::vector<TokenSeq>& hypotheses,
                     const std::vector<TokenSeq>& references, int n) {
    if (hypotheses.size() != references.size()) {
        throw std::invalid_argument("bleu_n: hypothesis/reference count mismatch");
    }
    if (hypotheses.empty() || n < 1) {
        throw std::invalid_argument("bleu_n: need a nonempty corpus and n >= 1");
    }
    std::int64_t hyp_len = 0, ref_len = 0;
    double log_precision_sum = 0.0;
    for (int order = 1; order <= n; ++order) {
        std::int64_t matched = 0, total = 0;
        for (std::size_t i = 0; i < hypotheses.size(); ++i) {
            const auto hyp_counts = detail::ngram_counts(hypotheses[i], order);
            const auto ref_counts = detail::ngram_counts(references[i], order);
            for (const auto& [gram, count] : hyp_counts) {
                total += count;
                auto it = ref_counts.find(gram);
                if (it != ref_counts.end()) {
                    matched += std::min(count, it->second);
                }
            }
        }
        if (total == 0 || matched == 0) {
            return 0.0;
        }
        log_precision_sum += std::log(static_cast<double>(matched) /
                                      static_cast<double>(total)) /
                             static_cast<double>(n);
    }
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        hyp_len += static_cast<std::int64_t>(hypotheses[i].size());
        ref_len += static_cast<std::int64_t>(references[i].size());
    }
    if (hyp_len == 0) {
        return 0.0;
    }
    const double brevity =
        std::exp(std::min(0.0, 1.0 - static_cast<double>(ref_len) /
                                         static_cast<double>(hyp_len)));
    return 100.0 * brevity * std::exp(log_precision_sum);
}

/// Distinct-n in [0, 100]: unique n-grams across all hypotheses divided by
/// the total n-gram count. Sequences shorter than n contribute nothing.
inline double distinct_n(const std::vector<TokenSeq>& hypotheses, int n) {
    if (hypotheses.empty() || n < 1) {
        throw std::invalid_argument("distinct_n: need a nonempty corpus and n >= 1");
    }
    std::map<TokenSeq, std::int64_t> counts;
    std::int64_t total = 0;
    for (const TokenSeq& hyp : hypotheses) {
        for (const auto& [gram, count] : detail::ngram_counts(hyp, n)) {
            counts[gram] += count;
            total += count;
        }
    }
    if (total == 0) {
        return 0.0;
    }
    return 100.0 * static_cast<double>(counts.size()) / static_cast<double>(total);
}

inline MetricReport compute_metrics(const std::vector<TokenSeq>& hypotheses,
                                    const std::vector<TokenSeq>& references) {
    MetricReport r;
    r.bleu1 = bleu_n(hypotheses, references, 1);
    r.bleu2 = bleu_n(hypotheses, references, 2);
    r.distinct1 = distinct_n(hypotheses, 1);
    r.distinct4 = distinct_n(hypotheses, 4);
    return r;
}

struct ProbeMatch {
    int word_id = -1;
    std::string word;
    double similarity = 0.0;
};

struct ProbeEntry {
    int slot = 0;            // 0..2k-1: prefix slots first, then suffix
    bool undefined = false;  // zero-norm prompt vector
    std::vector<ProbeMatch> matches;
};

/// Nearest vocabulary words per prompt slot by cosine similarity against the
/// embedding rows. Ties break toward the lower word id.
inline std::vector<ProbeEntry> prompt_probe(const ContextualizedPrompts& prompts,
                                            const Tensor& embed_matrix,
                                            const Vocab& vocab, int top_t) {
    if (top_t < 1) {
        throw std::invalid_argument("prompt_probe: top_t must be >= 1");
    }
    const int d = embed_matrix.cols();
    const int v = embed_matrix.rows();
    std::vector<double> row_norms(static_cast<std::size_t>(v));
    for (int w = 0; w < v; ++w) {
        double sq = 0.0;
        for (int j = 0; j < d; ++j) {
            const double x = embed_matrix.values()[static_cast<std::size_t>(w) * d + j];
            sq += x * x;
        }
        row_norms[static_cast<std::size_t>(w)] = std::sqrt(sq);
    }
    std::vector<ProbeEntry> out;
    const int k = prompts.prefix.rows();
    for (int slot = 0; slot < 2 * k; ++slot) {
        const Tensor& side = slot < k ? prompts.prefix : prompts.suffix;
        const int row = slot < k ? slot : slot - k;
        const real* p = side.values().data() + static_cast<std::size_t>(row) * d;
        double p_norm = 0.0;
        for (int j = 0; j < d; ++j) {
            p_norm += static_cast<double>(p[j]) * static_cast<double>(p[j]);
        }
        p_norm = std::sqrt(p_norm);
        ProbeEntry entry;
        entry.slot = slot;
        if (p_norm == 0.0) {
            entry.undefined = true;
            out.push_back(std::move(entry));
            continue;
        }
        std::vector<ProbeMatch> all;
        all.reserve(static_cast<std::size_t>(v));
        for (int w = 0; w < v; ++w) {
            double dot = 0.0;
            for (int j = 0; j < d; ++j) {
                dot += static_cast<double>(p[j]) *
                       static_cast<double>(
                           embed_matrix.values()[static_cast<std::size_t>(w) * d + j]);
            }
            const double denom = p_norm * row_norms[static_cast<std::size_t>(w)];
            ProbeMatch m;
            m.word_id = w;
            m.word = vocab.token(w);
            m.similarity = denom == 0.0 ? -2.0 : dot / denom;
            all.push_back(std::move(m));
        }
        std::stable_sort(all.begin(), all.end(), [](const ProbeMatch& a, const ProbeMatch& b) {
            if (a.similarity != b.similarity) {
                return a.similarity > b.similarity;
            }
            return a.word_id < b.word_id;
        });
        all.resize(static_cast<std::size_t>(std::min(top_t, v)));
        entry.matches = std::move(all);
        out.push_back(std::move(entry));
    }
    return out;
}

struct SweepRow {
    int k = 0;
    MetricReport metrics;
};

/// Trains one system per prompt count and decodes with the inverse term
/// disabled (lambda = 0), reporting the metric table row per k. The
/// evaluation split is the validation fraction when set, otherwise the
/// training inputs themselves.
inline std::vector<SweepRow> sensitivity_sweep(const std::vector<int>& k_values,
                                               const std::vector<RawPair>& corpus,
                                               const ModelConfig& model_cfg,
                                               const TrainConfig& train_cfg,
                                               const DecodeConfig& decode_cfg) {
    if (k_values.empty()) {
        throw std::invalid_argument("sensitivity_sweep: no k values");
    }
    std::vector<SweepRow> rows;
    for (int k : k_values) {
        Vocab vocab = build_vocab(corpus, model_cfg.vocab_size);
        Rng rng(train_cfg.seed);
        System system = System::init(model_cfg, PromptConfig{k}, std::move(vocab), rng);
        std::vector<Example> examples = make_examples(system.vocab, corpus);
        Trainer trainer(system, train_cfg);
        trainer.fit(examples);

        Rng split_rng(train_cfg.seed);
        std::vector<Example> shuffled = examples;
        split_rng.shuffle(shuffled);
        const auto n_val = static_cast<std::size_t>(
            train_cfg.validation_fraction * static_cast<double>(shuffled.size()));
        const std::vector<Example> eval_set =
            n_val > 0 ? std::vector<Example>(shuffled.begin(), shuffled.begin() + n_val)
                      : examples;

        DecodeConfig dc = decode_cfg;
        dc.lambda = real(0);
        std::vector<TokenSeq> hyps, refs;
        for (const Example& ex : eval_set) {
            const GenerateResult gen = generate(system, ex.input_ids, dc);
            TokenSeq hyp;
            for (int id : gen.tokens) {
                if (id != Vocab::kEos) {
                    hyp.push_back(system.vocab.token(id));
                }
            }
            TokenSeq ref;
            for (int id : ex.flat_output()) {
                ref.push_back(system.vocab.token(id));
            }
            hyps.push_back(std::move(hyp));
            refs.push_back(std::move(ref));
        }
        rows.push_back({k, compute_metrics(hyps, refs)});
    }
    return rows;
}

/// Aligned text table over sweep rows, one row per prompt count.
inline std::string format_sweep_table(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << std::setw(8) << "k" << std::setw(10) << "BLEU-1" << std::setw(10) << "BLEU-2"
       << std::setw(12) << "Distinct-1" << std::setw(12) << "Distinct-4" << '\n';
    for (const SweepRow& row : rows) {
        os << std::setw(8) << row.k << std::setw(10) << row.metrics.bleu1
           << std::setw(10) << row.metrics.bleu2 << std::setw(12) << row.metrics.distinct1
           << std::setw(12) << row.metrics.distinct4 << '\n';
    }
    return os.str();
}

}  // namespace ctxgen
