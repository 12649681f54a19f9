#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pvpm/dataset.hpp"
#include "pvpm/manifest.hpp"
#include "pvpm/part_attention.hpp"
#include "pvpm/volume.hpp"

namespace pvpm {

// Uniform horizontal partition of a feature map into `parts` stripes; stripe s
// covers rows [floor(s*H/parts), floor((s+1)*H/parts)). Every stripe is
// non-empty (H >= parts enforced); the mass is the pixel count.
PartFeatureSet uniform_stripe_features(const Volume& appearance, int parts);

// One frozen linear classifier per part, standing in for the pre-trained
// per-stripe classifiers whose knowledge the classification loss preserves.
class ToyClassifierBank {
public:
    ToyClassifierBank() = default;
    ToyClassifierBank(int parts, int feature_dim, int identities);

    int parts() const { return parts_; }
    int feature_dim() const { return feature_dim_; }
    int identities() const { return identities_; }
    bool frozen() const { return frozen_; }

    const Mat& weights(int part) const { return weights_[part]; }
    const std::vector<double>& biases(int part) const { return biases_[part]; }

    // Gradient-descent update; throws once the bank is frozen.
    void apply_update(int part, const Mat& d_weights, const std::vector<double>& d_biases,
                      double lr);
    void freeze() { frozen_ = true; }

    // Stable digest over all parameters, for drift checks.
    std::uint64_t checksum() const;

    void save(const std::filesystem::path& path) const;
    static ToyClassifierBank load(const std::filesystem::path& path);

private:
    int parts_ = 0;
    int feature_dim_ = 0;
    int identities_ = 0;
    bool frozen_ = false;
    std::vector<Mat> weights_;                 // per part: identities x feature_dim
    std::vector<std::vector<double>> biases_;  // per part: identities
};

struct PretrainResult {
    ToyClassifierBank bank;
    double train_accuracy = 0.0;
    double final_loss = 0.0;
};

// Trains the per-stripe classifiers on uniform partitions of the training
// records with full-batch gradient descent, then freezes the bank.
// Deterministic given the seed (zero-initialized, so the seed only orders
// the data pass).
PretrainResult pretrain_classifiers(const DatasetManifest& manifest, int parts, int epochs,
                                    std::uint64_t seed, double lr = 2.0);

// In-memory variant used when the dataset never touches disk.
PretrainResult pretrain_classifiers(const LoadedDataset& dataset, int parts, int epochs,
                                    std::uint64_t seed, double lr = 2.0);

}  // namespace pvpm
