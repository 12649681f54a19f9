#include "pvpm/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace pvpm {

namespace {

constexpr char kMagic[4] = {'P', 'V', 'T', '1'};
constexpr std::size_t kMaxRank = 4;

std::size_t checked_element_count(const std::vector<std::uint32_t>& dims) {
    if (dims.empty() || dims.size() > kMaxRank) {
        throw PvtError(PvtError::Kind::BadRank,
                       "tensor rank must be 1..4, got " + std::to_string(dims.size()));
    }
    std::size_t n = 1;
    for (std::uint32_t d : dims) {
        if (d == 0) {
            throw PvtError(PvtError::Kind::BadExtent, "tensor extent must be positive");
        }
        n *= d;
    }
    return n;
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t read_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

Tensor Tensor::zeros(std::vector<std::uint32_t> d) {
    std::size_t n = checked_element_count(d);
    return Tensor(std::move(d), std::vector<float>(n, 0.0f));
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
    std::size_t n = checked_element_count(t.dims);
    if (n != t.data.size()) {
        throw PvtError(PvtError::Kind::BadExtent, "tensor data length does not match extents");
    }
    for (float v : t.data) {
        if (!std::isfinite(v)) {
            throw PvtError(PvtError::Kind::NonFinite, "tensor contains non-finite value");
        }
    }
    std::vector<std::uint8_t> out;
    out.reserve(4 + 1 + 4 * t.dims.size() + 4 * n);
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(static_cast<std::uint8_t>(t.dims.size()));
    for (std::uint32_t d : t.dims) append_u32(out, d);
    for (float v : t.data) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        append_u32(out, bits);
    }
    return out;
}

Tensor decode_tensor(const std::uint8_t* bytes, std::size_t len, std::size_t* consumed) {
    if (len < 5 || std::memcmp(bytes, kMagic, 4) != 0) {
        throw PvtError(PvtError::Kind::BadMagic, "not a PVT tensor (bad magic)");
    }
    std::size_t rank = bytes[4];
    if (rank < 1 || rank > kMaxRank) {
        throw PvtError(PvtError::Kind::BadRank,
                       "tensor rank must be 1..4, got " + std::to_string(rank));
    }
    std::size_t offset = 5;
    if (len < offset + 4 * rank) {
        throw PvtError(PvtError::Kind::TruncatedPayload, "PVT header truncated");
    }
    std::vector<std::uint32_t> dims(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        dims[i] = read_u32(bytes + offset);
        offset += 4;
    }
    std::size_t n = checked_element_count(dims);
    if (len < offset + 4 * n) {
        throw PvtError(PvtError::Kind::TruncatedPayload,
                       "PVT payload truncated: need " + std::to_string(4 * n) + " bytes, have " +
                           std::to_string(len - offset));
    }
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = read_u32(bytes + offset);
        offset += 4;
        float v;
        std::memcpy(&v, &bits, 4);
        if (!std::isfinite(v)) {
            throw PvtError(PvtError::Kind::NonFinite,
                           "non-finite value at element " + std::to_string(i));
        }
        data[i] = v;
    }
    if (consumed != nullptr) *consumed = offset;
    return Tensor(std::move(dims), std::move(data));
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw PvtError(PvtError::Kind::Io, "cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw PvtError(PvtError::Kind::Io, "read failure on " + path.string());
    }
    std::size_t consumed = 0;
    Tensor t = decode_tensor(bytes.data(), bytes.size(), &consumed);
    if (consumed != bytes.size()) {
        throw PvtError(PvtError::Kind::TruncatedPayload,
                       "trailing bytes after PVT payload in " + path.string());
    }
    return t;
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes = encode_tensor(t);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw PvtError(PvtError::Kind::Io, "cannot open " + path.string() + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw PvtError(PvtError::Kind::Io, "write failure on " + path.string());
    }
}

}  // namespace pvpm
