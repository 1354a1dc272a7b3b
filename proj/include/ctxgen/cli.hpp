#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctxgen/checkpoint.hpp"
#include "ctxgen/config.hpp"
#include "ctxgen/decode.hpp"
#include "ctxgen/eval.hpp"
#include "ctxgen/synth.hpp"
#include "ctxgen/system.hpp"
#include "ctxgen/train.hpp"

namespace ctxgen {
namespace cli {

namespace detail {

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        lines.push_back(line);
    }
    return lines;
}

inline std::ostream& machine_out(std::ofstream& file, const std::string& path) {
    if (path.empty()) {
        return std::cout;
    }
    file.open(path);
    if (!file) {
        throw std::runtime_error("cannot open " + path);
    }
    return file;
}

inline std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(std::stoi(item));
        }
    }
    return out;
}

inline LoadedCheckpoint require_checkpoint(const std::string& path) {
    if (path.empty()) {
        throw std::runtime_error("missing required checkpoint (--checkpoint)");
    }
    if (!std::filesystem::exists(path)) {
        throw std::runtime_error("checkpoint not found: " + path);
    }
    return load_checkpoint(path);
}

inline TokenSeq to_tokens(const Vocab& vocab, const std::vector<int>& ids) {
    TokenSeq out;
    for (int id : ids) {
        if (id != Vocab::kEos) {
            out.push_back(vocab.token(id));
        }
    }
    return out;
}

}  // namespace detail

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string mode;
    std::optional<int> k;
    std::optional<double> lambda;
    std::optional<int> beam;
    std::optional<int> max_sentences;

    RunConfig resolve() const {
        RunConfig cfg =
            config_path.empty() ? RunConfig{} : parse_config_file(config_path);
        if (seed) {
            cfg.train.seed = *seed;
            cfg.decode.seed = *seed;
        }
        if (!mode.empty()) {
            cfg.train.mode = train_mode_from_string(mode);
        }
        if (k) {
            cfg.prompt.k = *k;
        }
        if (lambda) {
            cfg.decode.lambda = static_cast<real>(*lambda);
        }
        if (beam) {
            cfg.decode.beam_size = *beam;
        }
        if (max_sentences) {
            cfg.decode.max_sentences = *max_sentences;
        }
        return cfg;
    }

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "sectioned key-value config file");
        cmd->add_option("--seed", seed, "seed for all randomness of this run");
        cmd->add_option("--mode", mode, "training mode")
            ->check(CLI::IsMember({"full", "bias_only"}));
        cmd->add_option("--k", k, "prompt vectors per side");
        cmd->add_option("--lambda", lambda, "inverse-score weight at decode time");
        cmd->add_option("--beam", beam, "candidate sentences per step");
        cmd->add_option("--max-sentences", max_sentences, "sentence cap per output");
    }
};

inline int run_synth(const std::string& kind, int n, int words, int keys, int fillers,
                     std::uint64_t seed, const std::string& out_path) {
    Rng rng(seed);
    std::vector<RawPair> pairs = kind == "mem"
                                     ? synth_memorization(n, words, rng)
                                     : synth_echo_key(n, keys, fillers, rng);
    write_jsonl(out_path, pairs);
    nlohmann::json record;
    record["command"] = "synth";
    record["kind"] = kind;
    record["pairs"] = pairs.size();
    record["path"] = out_path;
    std::cout << record.dump() << '\n';
    return 0;
}

inline int run_train(const CommonFlags& flags, const std::string& data_path,
                     const std::string& out_path, const std::string& log_path) {
    RunConfig cfg = flags.resolve();
    std::vector<RawPair> pairs;
    if (data_path.empty()) {
        // Built-in memorization corpus keeps the smoke path self-contained.
        Rng rng(cfg.train.seed);
        pairs = synth_memorization(50, 32, rng);
    } else {
        pairs = load_jsonl(data_path, cfg.model.max_positions).pairs;
    }
    Vocab vocab = build_vocab(pairs, cfg.model.vocab_size);
    Rng rng(cfg.train.seed);
    System system = System::init(cfg.model, cfg.prompt, std::move(vocab), rng);
    cfg.model.vocab_size = system.model_cfg.vocab_size;
    const std::vector<Example> examples = make_examples(system.vocab, pairs);

    std::ofstream log_file;
    std::ostream& log = detail::machine_out(log_file, log_path);
    Trainer trainer(system, cfg.train);
    trainer.fit(examples, &log);

    save_checkpoint(out_path, system, cfg);
    nlohmann::json record;
    record["command"] = "train";
    record["examples"] = examples.size();
    record["checkpoint"] = out_path;
    record["trainable_pct"] = count_trainable_fraction(system, cfg.train.mode);
    record["final_loss_forward"] = trainer.eval_forward(examples);
    record["final_loss_inverse"] = trainer.eval_inverse(examples);
    std::cout << record.dump() << '\n';
    return 0;
}

inline int run_generate(const CommonFlags& flags, const std::string& checkpoint_path,
                        const std::string& inputs_path, const std::string& out_path,
                        std::optional<double> temperature, std::optional<double> nucleus_p,
                        bool greedy) {
    LoadedCheckpoint loaded = detail::require_checkpoint(checkpoint_path);
    DecodeConfig dc = loaded.config.decode;
    const CommonFlags& f = flags;
    if (f.seed) {
        dc.seed = *f.seed;
    }
    if (f.lambda) {
        dc.lambda = static_cast<real>(*f.lambda);
    }
    if (f.beam) {
        dc.beam_size = *f.beam;
    }
    if (f.max_sentences) {
        dc.max_sentences = *f.max_sentences;
    }
    if (temperature) {
        dc.temperature = static_cast<real>(*temperature);
    }
    if (nucleus_p) {
        dc.nucleus_p = static_cast<real>(*nucleus_p);
    }
    if (greedy) {
        dc.greedy = true;
    }

    std::ofstream out_file;
    std::ostream& out = detail::machine_out(out_file, out_path);
    for (const std::string& line : detail::read_lines(inputs_path)) {
        const std::vector<int> ids = encode(loaded.system.vocab, line);
        if (ids.empty()) {
            continue;
        }
        const GenerateResult gen = ctxgen::generate(loaded.system, ids, dc);
        const TokenSeq tokens = detail::to_tokens(loaded.system.vocab, gen.tokens);
        nlohmann::json record;
        record["input"] = line;
        record["output"] = detokenize(tokens);
        out << record.dump() << '\n';
        if (!out_path.empty()) {
            std::cout << line << " => " << detokenize(tokens) << '\n';
        }
    }
    return 0;
}

inline int run_eval(const std::string& hyp_path, const std::string& ref_path,
                    const std::string& out_path) {
    const std::vector<std::string> hyp_lines = detail::read_lines(hyp_path);
    const std::vector<std::string> ref_lines = detail::read_lines(ref_path);
    if (hyp_lines.size() != ref_lines.size()) {
        throw std::runtime_error("eval: hypothesis/reference line counts differ");
    }
    std::vector<TokenSeq> hyps, refs;
    for (std::size_t i = 0; i < hyp_lines.size(); ++i) {
        hyps.push_back(tokenize(hyp_lines[i]));
        refs.push_back(tokenize(ref_lines[i]));
    }
    const MetricReport report = compute_metrics(hyps, refs);
    std::ofstream out_file;
    std::ostream& out = detail::machine_out(out_file, out_path);
    out << report.to_record() << '\n';
    std::cout << std::fixed << std::setprecision(2)
              << "BLEU-1 " << report.bleu1 << "  BLEU-2 " << report.bleu2
              << "  Distinct-1 " << report.distinct1 << "  Distinct-4 "
              << report.distinct4 << '\n';
    return 0;
}

inline int run_probe(const CommonFlags& flags, const std::string& checkpoint_path,
                     const std::string& inputs_path, int top_t,
                     const std::string& out_path) {
    (void)flags;
    LoadedCheckpoint loaded = detail::require_checkpoint(checkpoint_path);
    std::ofstream out_file;
    std::ostream& out = detail::machine_out(out_file, out_path);
    for (const std::string& line : detail::read_lines(inputs_path)) {
        const std::vector<int> ids = encode(loaded.system.vocab, line);
        if (ids.empty()) {
            continue;
        }
        const ContextualizedPrompts prompts = loaded.system.prompts_for(ids);
        const auto entries =
            prompt_probe(prompts, loaded.system.generator->embedding_matrix(),
                         loaded.system.vocab, top_t);
        nlohmann::json slots = nlohmann::json::array();
        for (const ProbeEntry& e : entries) {
            nlohmann::json slot;
            slot["slot"] = e.slot;
            slot["undefined"] = e.undefined;
            nlohmann::json words = nlohmann::json::array();
            for (const ProbeMatch& m : e.matches) {
                words.push_back({{"word", m.word}, {"similarity", m.similarity}});
            }
            slot["words"] = words;
            slots.push_back(slot);
        }
        nlohmann::json record;
        record["input"] = line;
        record["slots"] = slots;
        out << record.dump() << '\n';
    }
    return 0;
}

inline int run_sweep(const CommonFlags& flags, const std::string& data_path,
                     const std::string& k_values_csv, const std::string& out_path) {
    RunConfig cfg = flags.resolve();
    const std::vector<int> k_values = detail::parse_int_list(k_values_csv);
    const std::vector<RawPair> pairs =
        load_jsonl(data_path, cfg.model.max_positions).pairs;
    const std::vector<SweepRow> rows =
        sensitivity_sweep(k_values, pairs, cfg.model, cfg.train, cfg.decode);
    std::ofstream out_file;
    std::ostream& out = detail::machine_out(out_file, out_path);
    for (const SweepRow& row : rows) {
        nlohmann::json record;
        record["k"] = row.k;
        record["bleu1"] = row.metrics.bleu1;
        record["bleu2"] = row.metrics.bleu2;
        record["distinct1"] = row.metrics.distinct1;
        record["distinct4"] = row.metrics.distinct4;
        out << record.dump() << '\n';
    }
    std::cout << format_sweep_table(rows);
    return 0;
}

/// Dispatches one invocation. `args` excludes the program name. Exit codes:
/// 0 success, 1 runtime error, 2 usage error.
inline int run(const std::vector<std::string>& args) {
    CLI::App app{"contextualized-prompt text generation toolkit"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "emit a synthetic corpus as JSONL");
    std::string synth_kind;
    int synth_n = 50, synth_words = 32, synth_keys = 8, synth_fillers = 8;
    std::uint64_t synth_seed = 0;
    std::string synth_out;
    synth->add_option("--kind", synth_kind, "corpus flavor")
        ->required()
        ->check(CLI::IsMember({"mem", "echo"}));
    synth->add_option("--n", synth_n, "number of pairs");
    synth->add_option("--words", synth_words, "word inventory (mem)");
    synth->add_option("--keys", synth_keys, "key inventory (echo)");
    synth->add_option("--fillers", synth_fillers, "filler inventory (echo)");
    synth->add_option("--seed", synth_seed, "corpus seed");
    synth->add_option("--out", synth_out, "output JSONL path")->required();

    // train
    auto* train = app.add_subcommand("train", "train both objectives and save a checkpoint");
    CommonFlags train_flags;
    train_flags.attach(train);
    std::string train_data, train_out = "model.ckpt", train_log;
    train->add_option("--data", train_data, "training corpus JSONL (default: built-in)");
    train->add_option("--out", train_out, "checkpoint output path");
    train->add_option("--log", train_log, "training log path (default: stdout)");

    // generate
    auto* gen = app.add_subcommand("generate", "decode a file of inputs");
    CommonFlags gen_flags;
    gen_flags.attach(gen);
    std::string gen_ckpt, gen_inputs, gen_out;
    std::optional<double> gen_temperature, gen_nucleus;
    bool gen_greedy = false;
    gen->add_option("--checkpoint", gen_ckpt, "trained checkpoint");
    gen->add_option("--inputs", gen_inputs, "file with one input per line")->required();
    gen->add_option("--out", gen_out, "output records path (default: stdout)");
    gen->add_option("--temperature", gen_temperature, "sampling temperature");
    gen->add_option("--nucleus-p", gen_nucleus, "nucleus mass cutoff");
    gen->add_flag("--greedy", gen_greedy, "argmax decoding (deterministic)");

    // eval
    auto* ev = app.add_subcommand("eval", "metrics from hypotheses and references");
    std::string eval_hyp, eval_ref, eval_out;
    ev->add_option("--hyp", eval_hyp, "hypotheses, one per line")->required();
    ev->add_option("--ref", eval_ref, "references, one per line")->required();
    ev->add_option("--out", eval_out, "record output path (default: stdout)");

    // probe
    auto* probe = app.add_subcommand("probe", "nearest words for each prompt slot");
    CommonFlags probe_flags;
    probe_flags.attach(probe);
    std::string probe_ckpt, probe_inputs, probe_out;
    int probe_top = 5;
    probe->add_option("--checkpoint", probe_ckpt, "trained checkpoint");
    probe->add_option("--inputs", probe_inputs, "file with one input per line")
        ->required();
    probe->add_option("--top", probe_top, "words per slot");
    probe->add_option("--out", probe_out, "record output path (default: stdout)");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "metric table over prompt counts");
    CommonFlags sweep_flags;
    sweep_flags.attach(sweep);
    std::string sweep_data, sweep_k = "2,4,8", sweep_out;
    sweep->add_option("--data", sweep_data, "training corpus JSONL")->required();
    sweep->add_option("--k-values", sweep_k, "comma-separated prompt counts");
    sweep->add_option("--out", sweep_out, "record output path (default: stdout)");

    std::vector<const char*> argv;
    argv.push_back("ctxgen");
    for (const std::string& a : args) {
        argv.push_back(a.c_str());
    }

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
        if (synth->parsed()) {
            return run_synth(synth_kind, synth_n, synth_words, synth_keys, synth_fillers,
                             synth_seed, synth_out);
        }
        if (train->parsed()) {
            return run_train(train_flags, train_data, train_out, train_log);
        }
        if (gen->parsed()) {
            return run_generate(gen_flags, gen_ckpt, gen_inputs, gen_out,
                                gen_temperature, gen_nucleus, gen_greedy);
        }
        if (ev->parsed()) {
            return run_eval(eval_hyp, eval_ref, eval_out);
        }
        if (probe->parsed()) {
            return run_probe(probe_flags, probe_ckpt, probe_inputs, probe_top, probe_out);
        }
        if (sweep->parsed()) {
            return run_sweep(sweep_flags, sweep_data, sweep_k, sweep_out);
        }
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace cli
}  // namespace ctxgen
