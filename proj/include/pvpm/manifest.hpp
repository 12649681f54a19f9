#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pvpm {

enum class Role { Probe, Gallery, Train };

const char* role_name(Role r);
Role parse_role(const std::string& s);

struct ManifestRecord {
    std::string id;
    int label = 0;
    Role role = Role::Train;
    std::filesystem::path feature_path;
    std::filesystem::path pose_path;
    // Ground-truth part visibility, present only for synthetic data.
    std::optional<std::vector<std::uint8_t>> vis_gt;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;

    std::size_t count(Role r) const;
    std::vector<std::size_t> indices(Role r) const;
    // Number of training identities (labels are validated as contiguous 0..n-1).
    int train_identity_count() const;
};

// Reads a UTF-8 JSON-lines manifest. Paths inside the file are resolved
// relative to the manifest's directory. When `expected_parts` is set, any
// vis_gt whose length differs is rejected.
DatasetManifest load_manifest(const std::filesystem::path& path,
                              std::optional<int> expected_parts = std::nullopt);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace pvpm
