#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "aavit/errors.hpp"
#include "aavit/model.hpp"

// Checkpoint file layout, all integers little-endian:
//   bytes 0..3   magic "AAVT"
//   bytes 4..7   format version (u32), currently 1
//   bytes 8..11  config length L (u32)
//   L bytes      ModelConfig as JSON
//   rest         each parameter tensor as raw little-endian float32, in the
//                canonical order of ModelParams::named_tensors()
// Save -> load -> save is byte-identical.

namespace aavit {

inline constexpr char kCheckpointMagic[4] = {'A', 'A', 'V', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace detail {
inline void put_u32(std::ofstream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}
inline std::uint32_t take_u32(std::ifstream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                            ModelParams<float>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("cannot write checkpoint " + path.string());
    os.write(kCheckpointMagic, 4);
    detail::put_u32(os, kCheckpointVersion);
    const std::string json = cfg.to_json().dump();
    detail::put_u32(os, static_cast<std::uint32_t>(json.size()));
    os.write(json.data(), static_cast<std::streamsize>(json.size()));
    for (auto& [name, t] : params.named_tensors()) {
        os.write(reinterpret_cast<const char*>(t->value().data()),
                 static_cast<std::streamsize>(t->value().size() * sizeof(float)));
    }
    if (!os) throw data_error("short write to checkpoint " + path.string());
}

struct Checkpoint {
    ModelConfig config;
    ModelParams<float> params;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open checkpoint " + path.string());
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw data_error(path.string() + " is not an AAVT checkpoint");
    }
    const std::uint32_t version = detail::take_u32(is);
    if (version != kCheckpointVersion) {
        throw data_error("checkpoint " + path.string() + " has format version " +
                         std::to_string(version) + ", expected " +
                         std::to_string(kCheckpointVersion));
    }
    const std::uint32_t json_len = detail::take_u32(is);
    std::string json(json_len, '\0');
    is.read(json.data(), json_len);
    if (!is) throw data_error("truncated checkpoint header in " + path.string());
    ModelConfig cfg;
    try {
        cfg = ModelConfig::from_json(nlohmann::json::parse(json));
    } catch (const nlohmann::json::exception& e) {
        throw data_error("bad config json in checkpoint " + path.string() + ": " + e.what());
    }
    Checkpoint out{cfg, ModelParams<float>::shaped(cfg)};
    for (auto& [name, t] : out.params.named_tensors()) {
        is.read(reinterpret_cast<char*>(t->mutable_value().data()),
                static_cast<std::streamsize>(t->value().size() * sizeof(float)));
        if (!is) {
            throw data_error("checkpoint " + path.string() + " truncated inside tensor " + name);
        }
    }
    is.peek();
    if (!is.eof()) {
        throw data_error("checkpoint " + path.string() +
                         " has trailing bytes; config/parameter mismatch");
    }
    return out;
}

}  // namespace aavit
