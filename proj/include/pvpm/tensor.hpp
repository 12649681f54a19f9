#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvpm {

// Dense real tensor with a bit-exact on-disk format (PVT).
//
// PVT layout, all little-endian:
//   magic "PVT1" (4 bytes)
//   rank         (1 unsigned byte, 1..4)
//   extents      (rank x uint32, each > 0)
//   payload      (float32 x product(extents), row-major)
struct Tensor {
    std::vector<std::uint32_t> dims;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<std::uint32_t> d, std::vector<float> v)
        : dims(std::move(d)), data(std::move(v)) {}

    static Tensor zeros(std::vector<std::uint32_t> d);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return dims.size(); }

    bool operator==(const Tensor& other) const = default;
};

class PvtError : public std::runtime_error {
public:
    enum class Kind {
        BadMagic,
        BadRank,
        BadExtent,
        TruncatedPayload,
        NonFinite,
        Io,
    };

    PvtError(Kind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// Throws PvtError with the precise failure kind; never returns a partially
// populated tensor.
Tensor load_tensor(const std::filesystem::path& path);

// Validates the tensor invariants (positive extents, length match, finite
// values) before touching the filesystem.
void save_tensor(const Tensor& t, const std::filesystem::path& path);

// In-memory encode/decode, used by both the file API and the checkpoint
// container.
std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::uint8_t* bytes, std::size_t len, std::size_t* consumed = nullptr);

}  // namespace pvpm
