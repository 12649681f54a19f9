#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pvpm/dataset.hpp"
#include "pvpm/manifest.hpp"
#include "pvpm/rng.hpp"
#include "pvpm/tensor.hpp"
#include "pvpm/volume.hpp"

namespace pvpm {

// Desk-scale synthetic data with known ground-truth part visibility.
// Identities are per-stripe prototypes rendered into the feature map; an
// occlusion replaces a contiguous stripe span with an obstacle prototype and
// suppresses the pose tensor's confidence in the same rows.
struct SynthConfig {
    int identities = 100;
    int images_per_identity = 4;
    int feature_channels = 32;
    int pose_channels = 56;  // 18 keypoint heatmaps + 38 part affinity fields
    int height = 12;         // appearance feature map dims
    int width = 4;
    int pose_factor = 2;     // pose dims = factor * appearance dims
    int parts = 6;
    double occlusion_probability = 0.5;
    int occluded_min = 1;  // contiguous occluded-stripe span bounds
    int occluded_max = 3;
    int obstacles = 16;
    double obstacle_scale = 2.0;
    double noise_amplitude = 0.05;
    // How far identity prototypes sit from the shared per-stripe base; larger
    // means easier identification.
    double identity_spread = 0.5;
    double pose_suppression = 0.003;
    std::uint64_t seed = 1;
};

struct SynthRecord {
    Tensor feature;
    Tensor pose;
    int label = 0;
    std::vector<std::uint8_t> vis_gt;
};

struct SynthOutput {
    SynthConfig config;
    DatasetManifest manifest;          // paths filled by write_dataset
    std::vector<SynthRecord> records;  // aligned with manifest.records
};

// Deterministic given config.seed. Role split per identity: the last two
// images become probe and gallery, the rest train.
SynthOutput generate(const SynthConfig& config);

// Writes PVT tensors under dir/tensors and the JSON-lines manifest to
// dir/manifest.jsonl; fills the manifest paths.
void write_dataset(SynthOutput& output, const std::filesystem::path& dir);

// In-memory view equivalent to writing then loading (tensors are already
// float32, so both paths see identical data).
LoadedDataset to_loaded(const SynthOutput& output);

// Replaces the feature rows of stripes [span_start, span_start+span_len) with
// the obstacle prototype plus noise, suppresses the pose rows, and clears the
// visibility bits.
void inject_occlusion_span(Volume& feature, Volume& pose, std::vector<std::uint8_t>& vis,
                           int parts, int span_start, int span_len,
                           std::span<const double> obstacle, double noise_amplitude,
                           double pose_suppression, Rng& rng);

// The "+Aug" analog: one additional random stripe span occluded by a fresh
// obstacle prototype; the input record is left untouched. Throws when every
// part is already occluded.
SynthRecord augment_occlusion(const SynthRecord& record, const SynthConfig& config,
                              std::uint64_t seed);

}  // namespace pvpm
