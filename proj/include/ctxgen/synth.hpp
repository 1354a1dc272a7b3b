#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "ctxgen/data.hpp"
#include "ctxgen/rng.hpp"

namespace ctxgen {

/// Random input/output pairs for memorization runs: short inputs, one or two
/// output sentences over a small word inventory.
inline std::vector<RawPair> synth_memorization(int n_pairs, int n_words, Rng& rng) {
    if (n_pairs < 1 || n_words < 4) {
        throw std::invalid_argument("synth_memorization: need n_pairs >= 1, n_words >= 4");
    }
    std::vector<std::string> words;
    words.reserve(static_cast<std::size_t>(n_words));
    for (int i = 0; i < n_words; ++i) {
        words.push_back("w" + std::to_string(i));
    }
    std::vector<RawPair> pairs;
    pairs.reserve(static_cast<std::size_t>(n_pairs));
    for (int i = 0; i < n_pairs; ++i) {
        RawPair p;
        const int in_len = 2 + rng.uniform_int(3);
        for (int t = 0; t < in_len; ++t) {
            if (t > 0) {
                p.input += ' ';
            }
            p.input += words[static_cast<std::size_t>(rng.uniform_int(n_words))];
        }
        const int n_sentences = 1 + rng.uniform_int(2);
        for (int s = 0; s < n_sentences; ++s) {
            const int out_len = 3 + rng.uniform_int(3);
            for (int t = 0; t < out_len; ++t) {
                if (!p.output.empty()) {
                    p.output += ' ';
                }
                p.output += words[static_cast<std::size_t>(rng.uniform_int(n_words))];
            }
            p.output += " .";
        }
        pairs.push_back(std::move(p));
    }
    return pairs;
}

/// Pairs whose output's first sentence must repeat a key token taken from the
/// input. The key is the signal an inverse scorer can exploit: reconstructing
/// the input from the first sentence is easy exactly when the key survives.
inline std::vector<RawPair> synth_echo_key(int n_pairs, int n_keys, int n_fillers,
                                           Rng& rng) {
    if (n_pairs < 1 || n_keys < 2 || n_fillers < 2) {
        throw std::invalid_argument("synth_echo_key: need n_pairs >= 1, n_keys >= 2, n_fillers >= 2");
    }
    std::vector<std::string> keys, fillers;
    for (int i = 0; i < n_keys; ++i) {
        keys.push_back("key" + std::to_string(i));
    }
    for (int i = 0; i < n_fillers; ++i) {
        fillers.push_back("f" + std::to_string(i));
    }
    std::vector<RawPair> pairs;
    pairs.reserve(static_cast<std::size_t>(n_pairs));
    for (int i = 0; i < n_pairs; ++i) {
        const std::string& key = keys[static_cast<std::size_t>(rng.uniform_int(n_keys))];
        RawPair p;
        p.input = "about " + key;
        const std::string& filler =
            fillers[static_cast<std::size_t>(rng.uniform_int(n_fillers))];
        p.output = key + " " + filler + " .";
        pairs.push_back(std::move(p));
    }
    return pairs;
}

}  // namespace ctxgen
