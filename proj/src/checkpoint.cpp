// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#include "evf/checkpoint.hpp"

#include "evf/errors.hpp"
#include "evf/serialize.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace evf {

namespace {

template <typename T>
void append_le(std::string& out, T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>(u & 0xFF));
        u = static_cast<U>(u >> 8);
    }
}

template <typename T>
T read_le(const unsigned char* p) {
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = sizeof(T); i-- > 0;) {
        u = static_cast<decltype(u)>((u << 8) | p[i]);
    }
    return static_cast<T>(u);
}

void append_doubles(std::string& out, const Tensor& t) {
    for (double v : t.data()) {
        append_le(out, std::bit_cast<std::uint64_t>(v));
    }
}

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
            throw std::runtime_error("SHA-256 initialisation failed");
        }
    }

    void update(const void* data, std::size_t len) {
        if (len > 0 && EVP_DigestUpdate(ctx_.get(), data, len) != 1) {
            throw std::runtime_error("SHA-256 update failed");
        }
    }

    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) {
            throw std::runtime_error("SHA-256 finalisation failed");
        }
        std::ostringstream os;
        for (unsigned int i = 0; i < len; ++i) {
            os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
        }
        return os.str();
    }

private:
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_hex(std::span<const unsigned char> bytes) {
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.hex();
}

std::string parameter_digest(std::span<const Parameter* const> params) {
    Sha256 h;
    std::string buf;
    for (const Parameter* p : params) {
        buf.clear();
        buf += p->name;
        buf.push_back('\0');
        append_le<std::uint64_t>(buf, p->value.rows());
        append_le<std::uint64_t>(buf, p->value.cols());
        append_doubles(buf, p->value);
        h.update(buf.data(), buf.size());
    }
    return h.hex();
}

std::string frozen_parameter_digest(const MicroModel& model) {
    std::vector<const Parameter*> frozen;
    for (const auto& gp : model.grouped_parameters()) {
        if (!gp.param->trainable) frozen.push_back(gp.param);
    }
    return parameter_digest(frozen);
}

void save_checkpoint(const MicroModel& model, const std::filesystem::path& path) {
    json tensors = json::array();
    std::string payload;
    for (const auto& gp : model.grouped_parameters()) {
        const Parameter& p = *gp.param;
        tensors.push_back({{"name", p.name},
                           {"group", std::string(to_string(gp.group))},
                           {"shape", {p.value.rows(), p.value.cols()}},
                           {"trainable", p.trainable},
                           {"offset", payload.size()},
                           {"count", p.value.size()}});
        append_doubles(payload, p.value);
    }
    const json manifest = {{"format", "evf-checkpoint"},
                           {"version", kCheckpointVersion},
                           {"stage", model.stage()},
                           {"config", to_json(model.config())},
                           {"tensors", tensors},
                           {"payload_bytes", payload.size()}};
    const std::string manifest_text = manifest.dump();

    std::string header(kCheckpointMagic, sizeof(kCheckpointMagic));
    append_le<std::uint32_t>(header, kCheckpointVersion);
    append_le<std::uint64_t>(header, manifest_text.size());

    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw CheckpointError("cannot open '" + path.string() + "' for writing");
    }
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(manifest_text.data(), static_cast<std::streamsize>(manifest_text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) {
        throw CheckpointError("write to '" + path.string() + "' failed");
    }
}

MicroModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot open '" + path.string() + "'");
    }
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
    constexpr std::size_t kHeader = sizeof(kCheckpointMagic) + 4 + 8;
    if (bytes.size() < kHeader || std::memcmp(raw, kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
        throw CheckpointError("'" + path.string() + "' is not an evf checkpoint");
    }
    const auto version = read_le<std::uint32_t>(raw + 8);
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto manifest_len = read_le<std::uint64_t>(raw + 12);
    if (bytes.size() < kHeader + manifest_len) {
        throw CheckpointError("truncated checkpoint manifest");
    }
    json manifest;
    try {
        manifest = json::parse(bytes.substr(kHeader, manifest_len));
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
    }
    const std::size_t payload_start = kHeader + manifest_len;
    const auto payload_bytes = manifest.at("payload_bytes").get<std::size_t>();
    if (bytes.size() != payload_start + payload_bytes) {
        throw CheckpointError("checkpoint payload size mismatch");
    }

    MicroModel model = MicroModel::build(model_config_from_json(manifest.at("config")));
    const int stage = manifest.at("stage").get<int>();
    if (stage == 3) {
        model.enter_stage3();
    } else {
        model.apply_schedule(StageSchedule::for_stage(stage));
    }

    auto params = model.parameters();
    const json& tensors = manifest.at("tensors");
    if (tensors.size() != params.size()) {
        throw CheckpointError("checkpoint has " + std::to_string(tensors.size()) + " tensors, model expects " +
                              std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const json& t = tensors[i];
        Parameter& p = *params[i];
        const auto shape = t.at("shape").get<std::vector<std::size_t>>();
        if (t.at("name").get<std::string>() != p.name || shape.size() != 2 || shape[0] != p.value.rows() ||
            shape[1] != p.value.cols()) {
            throw CheckpointError("tensor '" + t.at("name").get<std::string>() + "' does not match model layout");
        }
        const auto offset = t.at("offset").get<std::size_t>();
        const auto count = t.at("count").get<std::size_t>();
        if (count != p.value.size() || offset + count * 8 > payload_bytes) {
            throw CheckpointError("tensor '" + p.name + "' has an invalid payload range");
        }
        const unsigned char* src = raw + payload_start + offset;
        for (std::size_t k = 0; k < count; ++k) {
            p.value[k] = std::bit_cast<double>(read_le<std::uint64_t>(src + 8 * k));
        }
        p.trainable = t.at("trainable").get<bool>();
        p.zero_grad();
    }
    return model;
}

}  // namespace evf
