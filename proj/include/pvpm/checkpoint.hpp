#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "pvpm/tensor.hpp"

namespace pvpm {

// Named-tensor container (.pvtc): the checkpoint format shared by all
// trainable modules.
//
// Layout: magic "PVTC", uint32 LE header length, UTF-8 JSON header, then the
// concatenated PVT blobs. The header maps tensor names to byte offsets
// relative to the first blob and carries a free-form "meta" object for
// architecture configuration.
struct Checkpoint {
    nlohmann::json meta;
    std::map<std::string, Tensor> tensors;  // ordered => deterministic bytes

    void put(const std::string& name, Tensor t) { tensors[name] = std::move(t); }
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return tensors.count(name) > 0; }
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pvpm
