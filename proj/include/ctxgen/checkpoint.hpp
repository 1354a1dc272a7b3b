#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxgen/config.hpp"
#include "ctxgen/system.hpp"

namespace ctxgen {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

constexpr const char* kCheckpointMagic = "CTXGEN1";

inline void write_f32_le(std::ofstream& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    const char bytes[4] = {static_cast<char>(bits & 0xff),
                           static_cast<char>((bits >> 8) & 0xff),
                           static_cast<char>((bits >> 16) & 0xff),
                           static_cast<char>((bits >> 24) & 0xff)};
    out.write(bytes, 4);
}

inline float read_f32_le(const unsigned char* p) {
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                               (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) |
                               (static_cast<std::uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(bits);
}

}  // namespace detail

/// Checkpoint layout: a magic line, one line of JSON (run configuration,
/// vocabulary, and a tensor manifest of name/shape/byte-offset), then the
/// concatenated tensor payload as little-endian 32-bit floats, row-major.
inline void save_checkpoint(const std::string& path, const System& system,
                            const RunConfig& config) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw CheckpointError("checkpoint: cannot open for write: " + path);
    }
    const std::vector<NamedParam> params = system.all_parameters();
    nlohmann::json manifest = nlohmann::json::array();
    std::int64_t offset = 0;
    for (const NamedParam& p : params) {
        nlohmann::json entry;
        entry["name"] = p.name;
        entry["shape"] = p.tensor.shape();
        entry["offset"] = offset;
        entry["count"] = p.tensor.size();
        manifest.push_back(entry);
        offset += p.tensor.size() * 4;
    }
    nlohmann::json header;
    header["config"] = config.to_map();
    header["vocab"] = system.vocab.id_to_token;
    header["tensors"] = manifest;
    header["payload_bytes"] = offset;
    out << detail::kCheckpointMagic << '\n' << header.dump() << '\n';
    for (const NamedParam& p : params) {
        for (real v : p.tensor.values()) {
            detail::write_f32_le(out, static_cast<float>(v));
        }
    }
    if (!out) {
        throw CheckpointError("checkpoint: write failed: " + path);
    }
}

struct LoadedCheckpoint {
    System system;
    RunConfig config;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("checkpoint: cannot open: " + path);
    }
    std::string magic;
    if (!std::getline(in, magic) || magic != detail::kCheckpointMagic) {
        throw CheckpointError("checkpoint: bad magic in " + path);
    }
    std::string header_line;
    if (!std::getline(in, header_line)) {
        throw CheckpointError("checkpoint: missing header in " + path);
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("checkpoint: corrupted manifest in " + path + ": " +
                              e.what());
    }
    if (!header.contains("config") || !header.contains("vocab") ||
        !header.contains("tensors") || !header.contains("payload_bytes")) {
        throw CheckpointError("checkpoint: manifest missing required fields in " + path);
    }

    RunConfig config;
    try {
        config = config_from_map(
            header["config"].get<std::map<std::string, std::string>>());
    } catch (const std::exception& e) {
        throw CheckpointError("checkpoint: bad embedded config in " + path + ": " +
                              e.what());
    }
    Vocab vocab;
    vocab.id_to_token = header["vocab"].get<std::vector<std::string>>();
    vocab.rebuild_index();

    Rng rng(0);
    LoadedCheckpoint loaded{
        System::init(config.model, config.prompt, std::move(vocab), rng),
        std::move(config)};

    const auto payload_bytes = header["payload_bytes"].get<std::int64_t>();
    std::vector<unsigned char> payload(static_cast<std::size_t>(payload_bytes));
    in.read(reinterpret_cast<char*>(payload.data()), payload_bytes);
    if (in.gcount() != payload_bytes) {
        throw CheckpointError("checkpoint: truncated payload in " + path + ": expected " +
                              std::to_string(payload_bytes) + " bytes, got " +
                              std::to_string(in.gcount()));
    }

    std::map<std::string, Tensor> by_name;
    for (const NamedParam& p : loaded.system.all_parameters()) {
        by_name.emplace(p.name, p.tensor);
    }
    std::size_t seen = 0;
    for (const auto& entry : header["tensors"]) {
        const auto name = entry["name"].get<std::string>();
        const auto shape = entry["shape"].get<std::vector<int>>();
        const auto offset = entry["offset"].get<std::int64_t>();
        const auto count = entry["count"].get<std::int64_t>();
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw CheckpointError("checkpoint: manifest tensor not in model: " + name);
        }
        Tensor& t = it->second;
        if (t.shape() != shape) {
            std::string want = "[", have = "[";
            for (int d : t.shape()) {
                want += std::to_string(d) + " ";
            }
            for (int d : shape) {
                have += std::to_string(d) + " ";
            }
            throw CheckpointError("checkpoint: tensor " + name + ": shape mismatch, model wants " +
                                  want + "], manifest has " + have + "]");
        }
        if (count != t.size() || offset < 0 || offset + count * 4 > payload_bytes) {
            throw CheckpointError("checkpoint: tensor " + name + ": bad manifest extent");
        }
        for (std::int64_t i = 0; i < count; ++i) {
            t.values()[static_cast<std::size_t>(i)] = static_cast<real>(
                detail::read_f32_le(payload.data() + offset + i * 4));
        }
        ++seen;
    }
    if (seen != by_name.size()) {
        throw CheckpointError("checkpoint: manifest covers " + std::to_string(seen) +
                              " tensors but the model has " +
                              std::to_string(by_name.size()));
    }
    return loaded;
}

}  // namespace ctxgen
