#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "ctxgen/decode.hpp"
#include "ctxgen/model.hpp"
#include "ctxgen/prompt.hpp"
#include "ctxgen/train.hpp"

namespace ctxgen {

/// All run settings in one place. Parsed from a flat sectioned key-value
/// file; unknown sections or keys are hard errors so hyperparameter typos
/// cannot pass silently.
struct RunConfig {
    ModelConfig model;
    PromptConfig prompt;
    TrainConfig train;
    DecodeConfig decode;

    /// Canonical "section.key" -> value map covering every field; this is
    /// what checkpoints embed.
    std::map<std::string, std::string> to_map() const {
        std::map<std::string, std::string> m;
        auto put = [&m](const std::string& key, auto value) {
            std::ostringstream os;
            // Enough digits that print -> parse -> print is stable.
            os << std::setprecision(17) << value;
            m[key] = os.str();
        };
        put("model.d_model", model.d_model);
        put("model.n_layers", model.n_layers);
        put("model.n_heads", model.n_heads);
        put("model.vocab_size", model.vocab_size);
        put("model.max_positions", model.max_positions);
        put("model.feedforward_width", model.feedforward_width);
        put("prompt.k", prompt.k);
        put("train.epochs", train.epochs);
        put("train.batch_size", train.batch_size);
        if (train.learning_rate) {
            put("train.learning_rate", *train.learning_rate);
        } else {
            m["train.learning_rate"] = "auto";
        }
        put("train.beta1", train.beta1);
        put("train.beta2", train.beta2);
        put("train.epsilon", train.epsilon);
        m["train.mode"] = to_string(train.mode);
        put("train.seed", train.seed);
        put("train.validation_fraction", train.validation_fraction);
        put("train.clip_norm", train.clip_norm);
        put("decode.beam_size", decode.beam_size);
        put("decode.max_sentences", decode.max_sentences);
        put("decode.lambda", decode.lambda);
        put("decode.nucleus_p", decode.nucleus_p);
        put("decode.temperature", decode.temperature);
        m["decode.greedy"] = decode.greedy ? "true" : "false";
        put("decode.max_sentence_tokens", decode.max_sentence_tokens);
        put("decode.seed", decode.seed);
        m["decode.normalize_scores"] = decode.normalize_scores ? "true" : "false";
        return m;
    }
};

namespace detail {

inline int parse_int(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const int out = std::stoi(v, &pos);
        if (pos != v.size()) {
            throw std::invalid_argument("");
        }
        return out;
    } catch (...) {
        throw std::invalid_argument("config: bad integer for " + key + ": " + v);
    }
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const std::uint64_t out = std::stoull(v, &pos);
        if (pos != v.size()) {
            throw std::invalid_argument("");
        }
        return out;
    } catch (...) {
        throw std::invalid_argument("config: bad integer for " + key + ": " + v);
    }
}

inline double parse_double(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) {
            throw std::invalid_argument("");
        }
        return out;
    } catch (...) {
        throw std::invalid_argument("config: bad number for " + key + ": " + v);
    }
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") {
        return true;
    }
    if (v == "false" || v == "0") {
        return false;
    }
    throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
}

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace detail

/// Applies one "section.key" = value setting; throws on unknown keys.
inline void apply_config_entry(RunConfig& cfg, const std::string& key,
                               const std::string& value) {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_int;
    using detail::parse_u64;
    if (key == "model.d_model") {
        cfg.model.d_model = parse_int(value, key);
    } else if (key == "model.n_layers") {
        cfg.model.n_layers = parse_int(value, key);
    } else if (key == "model.n_heads") {
        cfg.model.n_heads = parse_int(value, key);
    } else if (key == "model.vocab_size") {
        cfg.model.vocab_size = parse_int(value, key);
    } else if (key == "model.max_positions") {
        cfg.model.max_positions = parse_int(value, key);
    } else if (key == "model.feedforward_width") {
        cfg.model.feedforward_width = parse_int(value, key);
    } else if (key == "prompt.k") {
        cfg.prompt.k = parse_int(value, key);
    } else if (key == "train.epochs") {
        cfg.train.epochs = parse_int(value, key);
    } else if (key == "train.batch_size") {
        cfg.train.batch_size = parse_int(value, key);
    } else if (key == "train.learning_rate") {
        if (value == "auto") {
            cfg.train.learning_rate.reset();
        } else {
            cfg.train.learning_rate = static_cast<real>(parse_double(value, key));
        }
    } else if (key == "train.beta1") {
        cfg.train.beta1 = static_cast<real>(parse_double(value, key));
    } else if (key == "train.beta2") {
        cfg.train.beta2 = static_cast<real>(parse_double(value, key));
    } else if (key == "train.epsilon") {
        cfg.train.epsilon = static_cast<real>(parse_double(value, key));
    } else if (key == "train.mode") {
        cfg.train.mode = train_mode_from_string(value);
    } else if (key == "train.seed") {
        cfg.train.seed = parse_u64(value, key);
    } else if (key == "train.validation_fraction") {
        cfg.train.validation_fraction = parse_double(value, key);
    } else if (key == "train.clip_norm") {
        cfg.train.clip_norm = static_cast<real>(parse_double(value, key));
    } else if (key == "decode.beam_size") {
        cfg.decode.beam_size = parse_int(value, key);
    } else if (key == "decode.max_sentences") {
        cfg.decode.max_sentences = parse_int(value, key);
    } else if (key == "decode.lambda") {
        cfg.decode.lambda = static_cast<real>(parse_double(value, key));
    } else if (key == "decode.nucleus_p") {
        cfg.decode.nucleus_p = static_cast<real>(parse_double(value, key));
    } else if (key == "decode.temperature") {
        cfg.decode.temperature = static_cast<real>(parse_double(value, key));
    } else if (key == "decode.greedy") {
        cfg.decode.greedy = parse_bool(value, key);
    } else if (key == "decode.max_sentence_tokens") {
        cfg.decode.max_sentence_tokens = parse_int(value, key);
    } else if (key == "decode.seed") {
        cfg.decode.seed = parse_u64(value, key);
    } else if (key == "decode.normalize_scores") {
        cfg.decode.normalize_scores = parse_bool(value, key);
    } else {
        throw std::invalid_argument("config: unknown key: " + key);
    }
}

inline RunConfig config_from_map(const std::map<std::string, std::string>& entries) {
    RunConfig cfg;
    for (const auto& [key, value] : entries) {
        apply_config_entry(cfg, key, value);
    }
    return cfg;
}

/// Sectioned key-value file:
///   [model]
///   d_model = 32
/// Lines starting with # are comments. Unknown sections/keys are errors.
inline RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("config: cannot open " + path);
    }
    RunConfig cfg;
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') {
            continue;
        }
        if (t.front() == '[' && t.back() == ']') {
            section = detail::trim(t.substr(1, t.size() - 2));
            if (section != "model" && section != "prompt" && section != "train" &&
                section != "decode") {
                throw std::invalid_argument("config: unknown section [" + section +
                                            "] at " + path + ":" +
                                            std::to_string(line_no));
            }
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config: expected key = value at " + path + ":" +
                                        std::to_string(line_no));
        }
        if (section.empty()) {
            throw std::invalid_argument("config: key before any section at " + path +
                                        ":" + std::to_string(line_no));
        }
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string value = detail::trim(t.substr(eq + 1));
        try {
            apply_config_entry(cfg, section + "." + key, value);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(std::string(e.what()) + " at " + path + ":" +
                                        std::to_string(line_no));
        }
    }
    return cfg;
}

}  // namespace ctxgen
