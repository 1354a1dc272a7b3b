#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "ctxgen/checkpoint.hpp"
#include "ctxgen/cli.hpp"
#include "ctxgen/config.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path dir;
    TempDir() {
        dir = fs::temp_directory_path() / "ctxgen_cli_test";
        fs::create_directories(dir);
    }
    ~TempDir() { fs::remove_all(dir); }
    std::string file(const std::string& name) const { return (dir / name).string(); }
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

int run(std::initializer_list<std::string> args) {
    return ctxgen::cli::run(std::vector<std::string>(args));
}

constexpr const char* kTinyConfig = R"(# toy run
[model]
d_model = 16
n_layers = 1
n_heads = 2
vocab_size = 32
max_positions = 48
feedforward_width = 32

[prompt]
k = 2

[train]
epochs = 1
batch_size = 4
seed = 3

[decode]
beam_size = 2
max_sentences = 2
max_sentence_tokens = 4
)";

}  // namespace

TEST_CASE("unknown subcommand exits 2", "[cli]") {
    CHECK(run({"badcmd"}) == 2);
    CHECK(run({}) == 2);
}

TEST_CASE("generate without a checkpoint exits 1", "[cli]") {
    TempDir tmp;
    write_file(tmp.file("inputs.txt"), "a b\n");
    CHECK(run({"generate", "--inputs", tmp.file("inputs.txt")}) == 1);
    CHECK(run({"generate", "--inputs", tmp.file("inputs.txt"), "--checkpoint",
               tmp.file("missing.ckpt")}) == 1);
}

TEST_CASE("config parsing rejects unknown keys", "[cli]") {
    TempDir tmp;
    write_file(tmp.file("bad.cfg"), "[model]\nd_model = 16\nd_modle = 8\n");
    CHECK_THROWS_AS(ctxgen::parse_config_file(tmp.file("bad.cfg")),
                    std::invalid_argument);
    write_file(tmp.file("badsec.cfg"), "[nonsense]\nx = 1\n");
    CHECK_THROWS_AS(ctxgen::parse_config_file(tmp.file("badsec.cfg")),
                    std::invalid_argument);
    write_file(tmp.file("train_bad.cfg"), "[model]\nd_modle = 8\n");
    CHECK(run({"train", "--config", tmp.file("train_bad.cfg")}) == 2);
}

TEST_CASE("config files round trip through the canonical map", "[cli]") {
    TempDir tmp;
    write_file(tmp.file("tiny.cfg"), kTinyConfig);
    const ctxgen::RunConfig cfg = ctxgen::parse_config_file(tmp.file("tiny.cfg"));
    CHECK(cfg.model.d_model == 16);
    CHECK(cfg.prompt.k == 2);
    CHECK(cfg.train.epochs == 1);
    CHECK(cfg.decode.beam_size == 2);
    const auto map = cfg.to_map();
    const ctxgen::RunConfig back = ctxgen::config_from_map(map);
    CHECK(back.to_map() == map);
    CHECK(map.at("train.learning_rate") == "auto");
}

TEST_CASE("synth writes a loadable corpus deterministically", "[cli]") {
    TempDir tmp;
    REQUIRE(run({"synth", "--kind", "mem", "--n", "12", "--words", "10", "--seed", "4",
                 "--out", tmp.file("mem.jsonl")}) == 0);
    const auto loaded = ctxgen::load_jsonl(tmp.file("mem.jsonl"));
    CHECK(loaded.pairs.size() == 12);

    REQUIRE(run({"synth", "--kind", "mem", "--n", "12", "--words", "10", "--seed", "4",
                 "--out", tmp.file("mem2.jsonl")}) == 0);
    std::ifstream a(tmp.file("mem.jsonl")), b(tmp.file("mem2.jsonl"));
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());

    REQUIRE(run({"synth", "--kind", "echo", "--n", "9", "--seed", "4", "--out",
                 tmp.file("echo.jsonl")}) == 0);
    const auto echo = ctxgen::load_jsonl(tmp.file("echo.jsonl"));
    REQUIRE(echo.pairs.size() == 9);
    for (const auto& p : echo.pairs) {
        // first output sentence carries the input's key token
        const auto in_tokens = ctxgen::tokenize(p.input);
        const auto out = ctxgen::tokenize(p.output);
        CHECK(std::find(out.begin(), out.end(), in_tokens.back()) != out.end());
    }
}

TEST_CASE("train, generate, probe, eval drive end to end", "[cli][slow]") {
    TempDir tmp;
    write_file(tmp.file("tiny.cfg"), kTinyConfig);
    REQUIRE(run({"synth", "--kind", "mem", "--n", "8", "--words", "10", "--seed", "2",
                 "--out", tmp.file("corpus.jsonl")}) == 0);

    REQUIRE(run({"train", "--config", tmp.file("tiny.cfg"), "--data",
                 tmp.file("corpus.jsonl"), "--out", tmp.file("model.ckpt"), "--log",
                 tmp.file("train.log")}) == 0);
    REQUIRE(fs::exists(tmp.file("model.ckpt")));

    // the checkpoint loads and the log is line-delimited JSON
    const auto loaded = ctxgen::load_checkpoint(tmp.file("model.ckpt"));
    CHECK(loaded.system.model_cfg.d_model == 16);
    {
        std::ifstream log(tmp.file("train.log"));
        std::string line;
        REQUIRE(std::getline(log, line));
        CHECK_NOTHROW(nlohmann::json::parse(line));
    }

    write_file(tmp.file("inputs.txt"), "w1 w2\nw3\n");
    REQUIRE(run({"generate", "--checkpoint", tmp.file("model.ckpt"), "--inputs",
                 tmp.file("inputs.txt"), "--out", tmp.file("gen.jsonl"), "--seed",
                 "9"}) == 0);
    {
        std::ifstream gen(tmp.file("gen.jsonl"));
        std::string line;
        int lines = 0;
        while (std::getline(gen, line)) {
            const auto record = nlohmann::json::parse(line);
            CHECK(record.contains("input"));
            CHECK(record.contains("output"));
            ++lines;
        }
        CHECK(lines == 2);
    }

    REQUIRE(run({"probe", "--checkpoint", tmp.file("model.ckpt"), "--inputs",
                 tmp.file("inputs.txt"), "--top", "3", "--out",
                 tmp.file("probe.jsonl")}) == 0);
    {
        std::ifstream probe(tmp.file("probe.jsonl"));
        std::string line;
        REQUIRE(std::getline(probe, line));
        const auto record = nlohmann::json::parse(line);
        REQUIRE(record.contains("slots"));
        CHECK(record["slots"].size() == 4);  // 2k slots
        CHECK(record["slots"][0]["words"].size() == 3);
    }

    write_file(tmp.file("hyp.txt"), "a b c\nx y\n");
    write_file(tmp.file("ref.txt"), "a b c\nx z\n");
    REQUIRE(run({"eval", "--hyp", tmp.file("hyp.txt"), "--ref", tmp.file("ref.txt"),
                 "--out", tmp.file("metrics.jsonl")}) == 0);
    {
        std::ifstream metrics(tmp.file("metrics.jsonl"));
        std::string line;
        REQUIRE(std::getline(metrics, line));
        const auto record = nlohmann::json::parse(line);
        CHECK(record["bleu1"].get<double>() > 0.0);
    }

    CHECK(run({"eval", "--hyp", tmp.file("hyp.txt"), "--ref",
               tmp.file("missing.txt")}) == 1);
}

TEST_CASE("train without --data uses the built-in corpus", "[cli][slow]") {
    TempDir tmp;
    write_file(tmp.file("tiny.cfg"), kTinyConfig);
    REQUIRE(run({"train", "--config", tmp.file("tiny.cfg"), "--out",
                 tmp.file("builtin.ckpt"), "--log", tmp.file("builtin.log")}) == 0);
    const auto loaded = ctxgen::load_checkpoint(tmp.file("builtin.ckpt"));
    CHECK(loaded.system.vocab.size() > 5);
}

TEST_CASE("sweep emits records and a table", "[cli][slow]") {
    TempDir tmp;
    write_file(tmp.file("tiny.cfg"), kTinyConfig);
    REQUIRE(run({"synth", "--kind", "mem", "--n", "6", "--words", "8", "--seed", "6",
                 "--out", tmp.file("corpus.jsonl")}) == 0);
    REQUIRE(run({"sweep", "--config", tmp.file("tiny.cfg"), "--data",
                 tmp.file("corpus.jsonl"), "--k-values", "2,3", "--out",
                 tmp.file("sweep.jsonl")}) == 0);
    std::ifstream records(tmp.file("sweep.jsonl"));
    std::string line;
    int rows = 0;
    while (std::getline(records, line)) {
        const auto record = nlohmann::json::parse(line);
        CHECK(record.contains("k"));
        CHECK(record.contains("bleu1"));
        ++rows;
    }
    CHECK(rows == 2);
}
