#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace ctxgen {

/// Word-level vocabulary: five fixed special tokens followed by corpus tokens
/// in dense id order. Out-of-vocabulary tokens map to UNK.
struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kMask = 3;
    static constexpr int kUnk = 4;

    std::vector<std::string> id_to_token;
    std::map<std::string, int> token_to_id;
    std::vector<int> sentence_delims;  // ids of ".", "!", "?" when present

    static const std::vector<std::string>& special_tokens() {
        static const std::vector<std::string> s = {"<pad>", "<bos>", "<eos>",
                                                   "<mask>", "<unk>"};
        return s;
    }

    int size() const { return static_cast<int>(id_to_token.size()); }

    int id(const std::string& token) const {
        auto it = token_to_id.find(token);
        return it == token_to_id.end() ? kUnk : it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || id >= size()) {
            throw std::invalid_argument("Vocab::token: id out of range");
        }
        return id_to_token[static_cast<std::size_t>(id)];
    }

    bool is_sentence_delim(int id) const {
        return std::find(sentence_delims.begin(), sentence_delims.end(), id) !=
               sentence_delims.end();
    }

    void rebuild_index() {
        token_to_id.clear();
        for (int i = 0; i < size(); ++i) {
            token_to_id.emplace(id_to_token[static_cast<std::size_t>(i)], i);
        }
        sentence_delims.clear();
        for (const char* d : {".", "!", "?"}) {
            auto it = token_to_id.find(d);
            if (it != token_to_id.end()) {
                sentence_delims.push_back(it->second);
            }
        }
    }
};

/// Splits on whitespace; every punctuation character becomes its own token.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            tokens.push_back(current);
            current.clear();
        }
    };
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            flush();
        } else if (std::ispunct(c)) {
            flush();
            tokens.emplace_back(1, static_cast<char>(c));
        } else {
            current.push_back(static_cast<char>(c));
        }
    }
    flush();
    return tokens;
}

inline std::string detokenize(std::span<const std::string> tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) {
            out.push_back(' ');
        }
        out += tokens[i];
    }
    return out;
}

inline std::vector<int> encode(const Vocab& vocab, const std::string& text) {
    std::vector<int> ids;
    for (const std::string& tok : tokenize(text)) {
        ids.push_back(vocab.id(tok));
    }
    return ids;
}

inline std::string decode_tokens(const Vocab& vocab, std::span<const int> ids) {
    std::vector<std::string> tokens;
    tokens.reserve(ids.size());
    for (int id : ids) {
        tokens.push_back(vocab.token(id));
    }
    return detokenize(tokens);
}

struct RawPair {
    std::string input;
    std::string output;
};

struct LoadResult {
    std::vector<RawPair> pairs;
    int discarded = 0;  // pairs dropped by the token-length cap
};

/// Reads {"input": ..., "output": ...} records, one JSON object per line.
/// Pairs where either side tokenizes to more than max_tokens are dropped and
/// counted. max_tokens <= 0 disables the cap.
inline LoadResult load_jsonl(const std::string& path, int max_tokens = 0) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("load_jsonl: cannot open " + path);
    }
    LoadResult result;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        nlohmann::json record;
        try {
            record = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("load_jsonl: " + path + " line " +
                                     std::to_string(line_no) + ": " + e.what());
        }
        if (!record.is_object() || !record.contains("input") ||
            !record.contains("output") || !record["input"].is_string() ||
            !record["output"].is_string()) {
            throw std::runtime_error("load_jsonl: " + path + " line " +
                                     std::to_string(line_no) +
                                     ": expected string fields \"input\" and \"output\"");
        }
        RawPair pair{record["input"].get<std::string>(),
                     record["output"].get<std::string>()};
        if (max_tokens > 0 &&
            (static_cast<int>(tokenize(pair.input).size()) > max_tokens ||
             static_cast<int>(tokenize(pair.output).size()) > max_tokens)) {
            ++result.discarded;
            continue;
        }
        result.pairs.push_back(std::move(pair));
    }
    return result;
}

inline void write_jsonl(const std::string& path, const std::vector<RawPair>& pairs) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("write_jsonl: cannot open " + path);
    }
    for (const RawPair& p : pairs) {
        nlohmann::json record;
        record["input"] = p.input;
        record["output"] = p.output;
        out << record.dump() << '\n';
    }
}

/// Frequency-ordered vocabulary (ties alphabetical), specials first,
/// truncated to max_size total entries.
inline Vocab build_vocab(const std::vector<RawPair>& corpus, int max_size) {
    if (corpus.empty()) {
        throw std::invalid_argument("build_vocab: empty corpus");
    }
    std::map<std::string, std::int64_t> counts;
    for (const RawPair& p : corpus) {
        for (const std::string& t : tokenize(p.input)) {
            ++counts[t];
        }
        for (const std::string& t : tokenize(p.output)) {
            ++counts[t];
        }
    }
    std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(),
                                                             counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });
    Vocab vocab;
    vocab.id_to_token = Vocab::special_tokens();
    for (const auto& [token, count] : ranked) {
        if (vocab.size() >= max_size) {
            break;
        }
        vocab.id_to_token.push_back(token);
    }
    vocab.rebuild_index();
    return vocab;
}

/// One training pair: input token ids and the output segmented into
/// sentences (delimiter tokens stay attached to their sentence).
struct Example {
    std::vector<int> input_ids;
    std::vector<std::vector<int>> output_sentences;

    std::vector<int> flat_output() const {
        std::vector<int> out;
        for (const auto& s : output_sentences) {
            out.insert(out.end(), s.begin(), s.end());
        }
        return out;
    }
};

/// Splits after each sentence delimiter; a trailing fragment without a
/// delimiter forms a final sentence. Concatenating the parts reproduces the
/// input exactly.
inline std::vector<std::vector<int>> split_sentences(std::span<const int> output_ids,
                                                     const Vocab& vocab) {
    std::vector<std::vector<int>> sentences;
    std::vector<int> current;
    for (int id : output_ids) {
        current.push_back(id);
        if (vocab.is_sentence_delim(id)) {
            sentences.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        sentences.push_back(std::move(current));
    }
    return sentences;
}

inline Example make_example(const Vocab& vocab, const RawPair& pair) {
    Example ex;
    ex.input_ids = encode(vocab, pair.input);
    std::vector<int> output_ids = encode(vocab, pair.output);
    if (ex.input_ids.empty() || output_ids.empty()) {
        throw std::invalid_argument("make_example: empty input or output");
    }
    ex.output_sentences = split_sentences(output_ids, vocab);
    return ex;
}

inline std::vector<Example> make_examples(const Vocab& vocab,
                                          const std::vector<RawPair>& pairs) {
    std::vector<Example> out;
    out.reserve(pairs.size());
    for (const RawPair& p : pairs) {
        out.push_back(make_example(vocab, p));
    }
    return out;
}

/// A batch carries its examples plus PAD-padded target rows and a mask that
/// marks the gold positions entering the loss. PAD is never a loss position.
struct Batch {
    std::vector<Example> examples;
    std::vector<std::vector<int>> padded_targets;       // BOS ... EOS PAD*
    std::vector<std::vector<std::uint8_t>> loss_mask;   // 1 at supervised gold slots

    /// Target row without padding: BOS + flattened sentences + EOS.
    std::vector<int> target_row(std::size_t i) const {
        const auto& row = padded_targets[i];
        const auto& mask = loss_mask[i];
        std::vector<int> out;
        out.push_back(row[0]);
        for (std::size_t t = 1; t < row.size(); ++t) {
            if (mask[t]) {
                out.push_back(row[t]);
            }
        }
        return out;
    }
};

inline std::vector<int> target_sequence(const Example& ex, int bos, int eos) {
    std::vector<int> t;
    t.push_back(bos);
    const std::vector<int> flat = ex.flat_output();
    t.insert(t.end(), flat.begin(), flat.end());
    t.push_back(eos);
    return t;
}

inline std::vector<Batch> make_batches(const std::vector<Example>& examples,
                                       int batch_size) {
    if (batch_size < 1) {
        throw std::invalid_argument("make_batches: batch_size must be positive");
    }
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < examples.size();
         start += static_cast<std::size_t>(batch_size)) {
        Batch b;
        const std::size_t end =
            std::min(examples.size(), start + static_cast<std::size_t>(batch_size));
        std::size_t max_len = 0;
        for (std::size_t i = start; i < end; ++i) {
            b.examples.push_back(examples[i]);
            max_len = std::max(max_len,
                               examples[i].flat_output().size() + 2);  // BOS/EOS
        }
        for (const Example& ex : b.examples) {
            std::vector<int> row = target_sequence(ex, Vocab::kBos, Vocab::kEos);
            std::vector<std::uint8_t> mask(max_len, 0);
            for (std::size_t t = 1; t < row.size(); ++t) {
                mask[t] = 1;  // every position after BOS is supervised
            }
            row.resize(max_len, Vocab::kPad);
            b.padded_targets.push_back(std::move(row));
            b.loss_mask.push_back(std::move(mask));
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

}  // namespace ctxgen
