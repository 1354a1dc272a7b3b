#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ctxgen/checkpoint.hpp"
#include "ctxgen/decode.hpp"
#include "helpers.hpp"

using ctxgen::real;
using ctxgen::Rng;
using ctxgen::RunConfig;
using ctxgen::Vocab;

namespace {

struct TempPath {
    std::string path;
    explicit TempPath(const std::string& name) {
        path = (std::filesystem::temp_directory_path() / name).string();
    }
    ~TempPath() { std::remove(path.c_str()); }
};

RunConfig small_config() {
    RunConfig cfg;
    cfg.model.d_model = 16;
    cfg.model.n_layers = 1;
    cfg.model.n_heads = 2;
    cfg.model.vocab_size = 16;
    cfg.model.max_positions = 48;
    cfg.model.feedforward_width = 32;
    cfg.prompt.k = 2;
    return cfg;
}

ctxgen::System small_system(const RunConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    return ctxgen::System::init(cfg.model, cfg.prompt,
                                ctxgen::build_vocab({{"a b c", "a b . c ."}}, 16), rng);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("checkpoint round trip restores bitwise generation", "[checkpoint]") {
    const RunConfig cfg = small_config();
    ctxgen::System sys = small_system(cfg, 5);
    TempPath f("ctxgen_ckpt_roundtrip.ckpt");
    ctxgen::save_checkpoint(f.path, sys, cfg);
    ctxgen::LoadedCheckpoint loaded = ctxgen::load_checkpoint(f.path);

    CHECK(loaded.system.model_cfg.d_model == 16);
    CHECK(loaded.system.vocab.size() == sys.vocab.size());

    // Every tensor identical after the round trip.
    const auto orig = sys.all_parameters();
    const auto rest = loaded.system.all_parameters();
    REQUIRE(orig.size() == rest.size());
    for (std::size_t i = 0; i < orig.size(); ++i) {
        CHECK(orig[i].name == rest[i].name);
        CHECK(orig[i].tensor.values() == rest[i].tensor.values());
    }

    // Fixed probe input decodes identically.
    const std::vector<int> probe = ctxgen::encode(sys.vocab, "a b");
    ctxgen::DecodeConfig dc;
    dc.beam_size = 2;
    dc.max_sentences = 2;
    dc.max_sentence_tokens = 4;
    dc.seed = 11;
    const auto before = ctxgen::generate(sys, probe, dc);
    const auto after = ctxgen::generate(loaded.system, probe, dc);
    CHECK(before.tokens == after.tokens);
}

TEST_CASE("save load save is byte identical", "[checkpoint]") {
    const RunConfig cfg = small_config();
    ctxgen::System sys = small_system(cfg, 7);
    TempPath f1("ctxgen_ckpt_a.ckpt");
    TempPath f2("ctxgen_ckpt_b.ckpt");
    ctxgen::save_checkpoint(f1.path, sys, cfg);
    ctxgen::LoadedCheckpoint loaded = ctxgen::load_checkpoint(f1.path);
    ctxgen::save_checkpoint(f2.path, loaded.system, loaded.config);
    CHECK(slurp(f1.path) == slurp(f2.path));
}

TEST_CASE("truncated payload fails with a descriptive error", "[checkpoint]") {
    const RunConfig cfg = small_config();
    ctxgen::System sys = small_system(cfg, 9);
    TempPath f("ctxgen_ckpt_trunc.ckpt");
    ctxgen::save_checkpoint(f.path, sys, cfg);
    const std::string bytes = slurp(f.path);
    {
        std::ofstream out(f.path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), (std::streamsize)bytes.size() - 1);
    }
    CHECK_THROWS_MATCHES(ctxgen::load_checkpoint(f.path), ctxgen::CheckpointError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("truncated")));
}

TEST_CASE("corrupted manifest fails cleanly", "[checkpoint]") {
    TempPath f("ctxgen_ckpt_garbage.ckpt");
    {
        std::ofstream out(f.path, std::ios::binary);
        out << "CTXGEN1\n{not json\n";
    }
    CHECK_THROWS_MATCHES(ctxgen::load_checkpoint(f.path), ctxgen::CheckpointError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("manifest")));

    TempPath g("ctxgen_ckpt_magic.ckpt");
    {
        std::ofstream out(g.path, std::ios::binary);
        out << "NOTMAGIC\n{}\n";
    }
    CHECK_THROWS_AS(ctxgen::load_checkpoint(g.path), ctxgen::CheckpointError);
}

TEST_CASE("config width mismatch names the offending tensor", "[checkpoint]") {
    const RunConfig cfg = small_config();
    ctxgen::System sys = small_system(cfg, 11);
    TempPath f("ctxgen_ckpt_mismatch.ckpt");
    ctxgen::save_checkpoint(f.path, sys, cfg);
    // Tamper with the embedded d_model so every manifest shape disagrees.
    std::string bytes = slurp(f.path);
    const std::string needle = "\"model.d_model\":\"16\"";
    const auto pos = bytes.find(needle);
    REQUIRE(pos != std::string::npos);
    bytes.replace(pos, needle.size(), "\"model.d_model\":\"8\" ");
    {
        std::ofstream out(f.path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), (std::streamsize)bytes.size());
    }
    CHECK_THROWS_MATCHES(ctxgen::load_checkpoint(f.path), ctxgen::CheckpointError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("shape mismatch")));
}

TEST_CASE("missing file raises a checkpoint error", "[checkpoint]") {
    CHECK_THROWS_AS(ctxgen::load_checkpoint("/nonexistent/path.ckpt"),
                    ctxgen::CheckpointError);
}
