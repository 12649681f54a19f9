#include "pvpm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace pvpm {

using nlohmann::json;

namespace {
constexpr char kMagic[4] = {'P', 'V', 'T', 'C'};
}

const Tensor& Checkpoint::get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
        throw std::runtime_error("checkpoint has no tensor named '" + name + "'");
    }
    return it->second;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::vector<std::uint8_t> payload;
    json offsets = json::object();
    for (const auto& [name, tensor] : ckpt.tensors) {
        offsets[name] = payload.size();
        auto blob = encode_tensor(tensor);
        payload.insert(payload.end(), blob.begin(), blob.end());
    }
    json header;
    header["meta"] = ckpt.meta.is_null() ? json::object() : ckpt.meta;
    header["tensors"] = offsets;
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open checkpoint " + path.string() + " for writing");
    }
    out.write(kMagic, 4);
    std::uint32_t len = static_cast<std::uint32_t>(header_str.size());
    std::uint8_t len_bytes[4] = {
        static_cast<std::uint8_t>(len & 0xff),
        static_cast<std::uint8_t>((len >> 8) & 0xff),
        static_cast<std::uint8_t>((len >> 16) & 0xff),
        static_cast<std::uint8_t>((len >> 24) & 0xff),
    };
    out.write(reinterpret_cast<const char*>(len_bytes), 4);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!out) {
        throw std::runtime_error("write failure on checkpoint " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw std::runtime_error("not a PVTC checkpoint: " + path.string());
    }
    std::uint32_t len = static_cast<std::uint32_t>(bytes[4]) |
                        (static_cast<std::uint32_t>(bytes[5]) << 8) |
                        (static_cast<std::uint32_t>(bytes[6]) << 16) |
                        (static_cast<std::uint32_t>(bytes[7]) << 24);
    if (bytes.size() < 8 + std::size_t(len)) {
        throw std::runtime_error("truncated checkpoint header: " + path.string());
    }
    json header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + len);
    const std::size_t payload_start = 8 + len;

    Checkpoint ckpt;
    ckpt.meta = header.value("meta", json::object());
    for (const auto& [name, offset] : header.at("tensors").items()) {
        std::size_t off = payload_start + offset.get<std::size_t>();
        if (off >= bytes.size()) {
            throw std::runtime_error("checkpoint tensor '" + name + "' offset out of range");
        }
        ckpt.tensors[name] = decode_tensor(bytes.data() + off, bytes.size() - off);
    }
    return ckpt;
}

}  // namespace pvpm
