#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "tokencast/errors.hpp"
#include "tokencast/model.hpp"

// Binary model checkpoints. Layout (all integers little-endian):
//
//   magic "TOKENCST"            8 bytes
//   format version              u32
//   config block length         u32, then that many bytes of "key=value\n"
//   tensor count                u32
//   per tensor: name length u32, name bytes, rank u32, dims u64 each,
//               payload of dim-product float32 values
//
// Round-trips are bit-exact; the float payload is the in-memory bits.

namespace tokencast {

namespace detail {

constexpr char kCheckpointMagic[8] = {'T', 'O', 'K', 'E', 'N', 'C', 'S', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw FormatError(std::string("checkpoint truncated while reading ") + what);
    return v;
}

inline std::map<std::string, std::string> parse_config_block(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        const std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("checkpoint config line missing '=': " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

}  // namespace detail

struct Checkpoint {
    ModelParams params;
    int horizon = 1;  // training target horizon in days (1 = next day)
};

inline void save_checkpoint(const ModelParams& params, const std::string& path, int horizon = 1) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);

    os.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
    detail::write_pod(os, detail::kCheckpointVersion);

    const auto& cfg = params.config;
    std::string config_text;
    config_text += "vocab_size=" + std::to_string(cfg.vocab_size) + "\n";
    config_text += "block_size=" + std::to_string(cfg.block_size) + "\n";
    config_text += "d_model=" + std::to_string(cfg.d_model) + "\n";
    config_text += "n_blocks=" + std::to_string(cfg.n_blocks) + "\n";
    config_text += "n_heads=" + std::to_string(cfg.n_heads) + "\n";
    config_text += "dropout_p=" + std::to_string(cfg.dropout_p) + "\n";
    config_text += "horizon=" + std::to_string(horizon) + "\n";
    detail::write_pod(os, static_cast<std::uint32_t>(config_text.size()));
    os.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));

    const auto named = params.named_parameters();
    detail::write_pod(os, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, tensor] : named) {
        detail::write_pod(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod(os, static_cast<std::uint32_t>(tensor.shape().size()));
        for (auto d : tensor.shape()) detail::write_pod(os, static_cast<std::uint64_t>(d));
        os.write(reinterpret_cast<const char*>(tensor.data()),
                 static_cast<std::streamsize>(tensor.numel() * sizeof(float)));
    }
    if (!os) throw DataError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);

    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
        throw FormatError("not a checkpoint file (bad magic): " + path);
    const auto version = detail::read_pod<std::uint32_t>(is, "version");
    if (version != detail::kCheckpointVersion)
        throw VersionError("checkpoint format version " + std::to_string(version) +
                           " unsupported (expected " +
                           std::to_string(detail::kCheckpointVersion) + ")");

    const auto config_len = detail::read_pod<std::uint32_t>(is, "config length");
    std::string config_text(config_len, '\0');
    is.read(config_text.data(), config_len);
    if (!is) throw FormatError("checkpoint truncated while reading config");
    const auto kv = detail::parse_config_block(config_text);

    auto get = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError(std::string("checkpoint config missing key: ") + key);
        return it->second;
    };
    ModelConfig cfg;
    cfg.vocab_size = std::stoll(get("vocab_size"));
    cfg.block_size = std::stoll(get("block_size"));
    cfg.d_model = std::stoll(get("d_model"));
    cfg.n_blocks = std::stoll(get("n_blocks"));
    cfg.n_heads = std::stoll(get("n_heads"));
    cfg.dropout_p = std::stof(get("dropout_p"));
    cfg.validate();
    Checkpoint ckpt;
    ckpt.horizon = kv.count("horizon") ? std::stoi(kv.at("horizon")) : 1;

    // Build a skeleton with the right shapes, then overwrite its payloads.
    Rng rng(0);
    ckpt.params = ModelParams::init(cfg, rng);
    auto named = ckpt.params.named_parameters();

    const auto n_tensors = detail::read_pod<std::uint32_t>(is, "tensor count");
    if (n_tensors != named.size())
        throw FormatError("checkpoint holds " + std::to_string(n_tensors) + " tensors, expected " +
                          std::to_string(named.size()));
    for (auto& [name, tensor] : named) {
        const auto name_len = detail::read_pod<std::uint32_t>(is, "tensor name length");
        std::string file_name(name_len, '\0');
        is.read(file_name.data(), name_len);
        if (!is) throw FormatError("checkpoint truncated while reading tensor name");
        if (file_name != name)
            throw FormatError("checkpoint tensor '" + file_name + "' where '" + name +
                              "' was expected");
        const auto rank = detail::read_pod<std::uint32_t>(is, "tensor rank");
        Shape shape(rank);
        for (auto& d : shape)
            d = static_cast<std::int64_t>(detail::read_pod<std::uint64_t>(is, "tensor dim"));
        if (shape != tensor.shape())
            throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) +
                              ", expected " + shape_str(tensor.shape()));
        is.read(reinterpret_cast<char*>(tensor.data()),
                static_cast<std::streamsize>(tensor.numel() * sizeof(float)));
        if (!is) throw FormatError("checkpoint truncated while reading tensor '" + name + "'");
    }
    return ckpt;
}

}  // namespace tokencast
