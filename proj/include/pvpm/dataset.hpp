#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pvpm/manifest.hpp"
#include "pvpm/volume.hpp"

namespace pvpm {

struct LoadedImage {
    std::string id;
    int label = 0;
    Role role = Role::Train;
    Volume feature;
    Volume pose;
    std::optional<std::vector<std::uint8_t>> vis_gt;
};

struct LoadedDataset {
    std::vector<LoadedImage> images;

    std::vector<std::size_t> indices(Role r) const;
    // Image indices grouped by identity, restricted to one role.
    std::vector<std::vector<std::size_t>> by_identity(Role r) const;
};

LoadedDataset load_dataset(const DatasetManifest& manifest);

// Runs fn(0..n-1) across up to `workers` threads (0 = hardware concurrency).
// Any exception from fn is rethrown on the caller thread.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

}  // namespace pvpm
