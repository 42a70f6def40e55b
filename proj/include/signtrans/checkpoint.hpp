// Model checkpoint files: a little-endian u64 header length, a JSON header
// (format tag, model config, arbitrary extra metadata, parameter directory),
// then all parameter values as little-endian float32 in directory order.
#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "signtrans/corpus.hpp"
#include "signtrans/model.hpp"
#include "signtrans/tensor.hpp"

namespace signtrans {

constexpr const char* kCheckpointFormat = "signtrans-checkpoint";
constexpr int kCheckpointVersion = 1;

namespace detail {

inline void put_u64(std::ostream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void put_f32(std::ostream& out, float v) {
    uint32_t bits = std::bit_cast<uint32_t>(v);
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline float get_f32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(b[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamMap<float>& params,
                            const ModelConfig& config,
                            const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json dir = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& [name, p] : params) {
        dir.push_back({{"name", name}, {"shape", p.shape}, {"offset", offset}});
        offset += p.value.size();
    }
    nlohmann::json header{{"format", kCheckpointFormat},
                          {"version", kCheckpointVersion},
                          {"config", config.to_json()},
                          {"extra", extra},
                          {"params", dir}};
    std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write checkpoint: " + path);
    detail::put_u64(out, header_text.size());
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, p] : params) {
        for (float v : p.value) detail::put_f32(out, v);
    }
    if (!out) throw ValidationError("short write on checkpoint: " + path);
}

struct Checkpoint {
    ModelConfig config;
    ParamMap<float> params;
    nlohmann::json extra;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint: " + path);
    uint64_t header_len = detail::get_u64(in);
    if (!in || header_len == 0 || header_len > (1ull << 30)) {
        throw ValidationError(path + ": not a checkpoint file (bad header length)");
    }
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw ValidationError(path + ": truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": bad checkpoint header: " + e.what());
    }
    if (header.value("format", "") != kCheckpointFormat) {
        throw ValidationError(path + ": not a " + kCheckpointFormat + " file");
    }

    Checkpoint ckpt;
    ckpt.config = ModelConfig::from_json(header.at("config"));
    ckpt.extra = header.value("extra", nlohmann::json::object());
    for (const auto& entry : header.at("params")) {
        std::string name = entry.at("name").get<std::string>();
        Shape shape = entry.at("shape").get<Shape>();
        std::vector<float> value(static_cast<size_t>(numel(shape)));
        for (auto& v : value) v = detail::get_f32(in);
        if (!in) throw ValidationError(path + ": truncated parameter payload at " + name);
        ckpt.params.emplace(name, Parameter<float>(name, std::move(shape), std::move(value)));
    }
    return ckpt;
}

}  // namespace signtrans
